"""Discrete-time material-flow simulator for bulk good production lines.

Per step each actuator requests ``duty * max_flow * dt`` litres from its
source reservoirs.  Requests against one reservoir are scaled down together if
they exceed its content (content is taken at the start of the step).  Material
lands in the sink, the final buffers then release the demanded volume, and any
fill above capacity spills into the reservoir's overflow accumulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .topology import ModuleGraph


@dataclass
class StepOutcome:
    power_kw: np.ndarray          # per player
    overflow_l: np.ndarray        # per reservoir, this step
    deficit_l: np.ndarray         # unmet demand per final buffer, this step
    delivered_l: np.ndarray       # volume released to demand per final buffer
    flow_l: np.ndarray            # volume moved per player
    external_inflow_l: float
    fill_change_l: float

    @property
    def mass_residual(self) -> float:
        """Inflow minus (stored + delivered + spilled); zero up to rounding."""
        return self.external_inflow_l - (
            self.fill_change_l + float(self.delivered_l.sum()) + float(self.overflow_l.sum())
        )


def duty_cycle(kind: str, action: float) -> float:
    if kind == "binary":
        return 1.0 if action >= 0.5 else 0.0
    return float(action)


class BulkGoodSystem:
    """State machine over a :class:`ModuleGraph`; one writer advances it with :meth:`step`."""

    def __init__(self, graph: ModuleGraph):
        self.graph = graph
        self.reservoir_names = list(graph.reservoirs)
        self.player_names = list(graph.actuators)
        r_index = {n: k for k, n in enumerate(self.reservoir_names)}
        self._cap = np.array([graph.reservoirs[n].capacity for n in self.reservoir_names])
        self._init = np.array(
            [graph.reservoirs[n].initial_fill * graph.reservoirs[n].capacity
             for n in self.reservoir_names]
        )
        acts = [graph.actuators[n] for n in self.player_names]
        self._kind = [a.kind for a in acts]
        self._max_flow = np.array([a.max_flow_lps for a in acts])
        self._p_nom = np.array([a.power_nominal_kw for a in acts])
        self._p_sb = np.array([a.power_standby_kw for a in acts])
        self._src = [tuple(r_index[s] for s in a.sources) for a in acts]
        self._binary = np.array([k == "binary" for k in self._kind])
        self._inlet = np.array([not s for s in self._src])
        self._src_player = np.array([k for k, s in enumerate(self._src) for _ in s], dtype=int)
        self._src_res = np.array([r for s in self._src for r in s], dtype=int)
        self._src_share = np.array([1.0 / len(s) for s in self._src for _ in s])
        self._sink = np.array([r_index[a.sink] for a in acts])
        self._final = np.array([r_index[f] for f in graph.final_buffers])
        self._state_idx = [
            np.array([r_index[r] for r in graph.state_reservoirs(p)]) for p in self.player_names
        ]
        self.fill = self._init.copy()
        self.overflow_total = np.zeros(len(self.reservoir_names))
        self.time = 0.0

    @property
    def capacity(self) -> np.ndarray:
        return self._cap

    @property
    def n_players(self) -> int:
        return len(self.player_names)

    def reset(self) -> None:
        self.fill = self._init.copy()
        self.overflow_total[:] = 0.0
        self.time = 0.0

    def levels(self) -> np.ndarray:
        """Normalized fill level of every reservoir."""
        return np.clip(self.fill / self._cap, 0.0, 1.0)

    def player_state(self, k: int, levels: np.ndarray | None = None) -> np.ndarray:
        lv = self.levels() if levels is None else levels
        return lv[self._state_idx[k]]

    def states(self) -> list[np.ndarray]:
        lv = self.levels()
        return [lv[idx] for idx in self._state_idx]

    def step(self, joint_action, dt: float = 1.0) -> StepOutcome:
        actions = np.asarray(joint_action, dtype=float)
        if actions.shape != (self.n_players,):
            raise ConfigurationError(
                f"expected {self.n_players} actions, got shape {actions.shape}"
            )
        if not dt > 0:
            raise ConfigurationError("dt must be > 0")
        if not (actions.min() >= 0.0 and actions.max() <= 1.0):
            raise ConfigurationError("actions must lie in [0, 1]")
        duty = np.where(self._binary, (actions >= 0.5).astype(float), actions)
        request = duty * self._max_flow * dt
        power = self._p_sb + duty * (self._p_nom - self._p_sb)

        start = self.fill
        # each actuator draws equally from its sources; short reservoirs scale all draws
        per_src = request[self._src_player] * self._src_share
        demand_on = np.bincount(self._src_res, per_src, minlength=start.size)
        scale = np.ones_like(start)
        short = demand_on > start
        scale[short] = start[short] / demand_on[short]

        take = per_src * scale[self._src_res]
        fill = start - np.bincount(self._src_res, take, minlength=start.size)
        flow = np.bincount(self._src_player, take, minlength=self.n_players)
        flow[self._inlet] = request[self._inlet]
        external = float(request[self._inlet].sum())
        np.maximum(fill, 0.0, out=fill)
        fill += np.bincount(self._sink, flow, minlength=start.size)

        share = self.graph.demand_lps * dt / len(self._final)
        delivered = np.minimum(fill[self._final], share)
        fill[self._final] -= delivered
        deficit = share - delivered

        overflow = np.maximum(fill - self._cap, 0.0)
        fill -= overflow
        change = float(fill.sum() - start.sum())
        self.fill = fill
        self.overflow_total += overflow
        self.time += dt
        return StepOutcome(
            power_kw=power,
            overflow_l=overflow,
            deficit_l=deficit,
            delivered_l=delivered,
            flow_l=flow,
            external_inflow_l=external,
            fill_change_l=change,
        )


def step(env: BulkGoodSystem, joint_action, dt: float = 1.0) -> StepOutcome:
    return env.step(joint_action, dt)
