from .bgs import BulkGoodSystem, StepOutcome, step
from .topology import (
    ActuatorSpec,
    ModuleGraph,
    ReservoirSpec,
    UtilityWeights,
    build_graph,
    load_topology,
    read_config,
)
from .utility import (
    constraint_terms,
    demand_factor,
    demand_term,
    potential,
    utility_bgs,
    utility_lsbgs,
)

__all__ = [
    "ActuatorSpec", "BulkGoodSystem", "ModuleGraph", "ReservoirSpec", "StepOutcome",
    "UtilityWeights", "build_graph", "constraint_terms", "demand_factor", "demand_term",
    "load_topology", "potential", "read_config", "step", "utility_bgs", "utility_lsbgs",
]
