"""Exception hierarchy shared across the package."""


class TLSbPGError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TLSbPGError, ValueError):
    pass


class TopologyError(ConfigurationError):
    """Malformed module graph; ``location`` names the offending element."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class NoKnowledge(TLSbPGError, LookupError):
    """Raised when a performance map has no populated cell to interpolate from."""


class InvalidUtility(TLSbPGError, ValueError):
    pass


class InvalidDistribution(TLSbPGError, ValueError):
    pass


class EmptyFit(TLSbPGError, ValueError):
    pass


class PolicyLoadError(TLSbPGError):
    pass
