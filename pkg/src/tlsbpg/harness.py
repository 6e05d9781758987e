"""Training, evaluation and ablation loops for (transfer-augmented) best-response players.

Actions are held for ``adaptation_interval`` simulator steps.  At the end of
each interval every player scores the action it held with its local utility
(integrated over the interval), optionally reduced by a transfer penalty,
writes that score into its performance map at the state where the action was
chosen, and picks its next action.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import DecaySchedule, PerformanceMap, PlayerAgent, select_action, update_map
from .env.bgs import BulkGoodSystem
from .env.topology import ModuleGraph
from .env.utility import demand_factor, potential, utility_bgs, utility_lsbgs
from .errors import ConfigurationError, PolicyLoadError
from .rbf import (
    LatentHistory,
    RbfConfig,
    RbfLatent,
    latent_from_map,
    latent_sw_loss,
    similarity_matrix,
    utility_with_latent,
)
from .transfer import (
    MomState,
    TransferPlan,
    alpha_from_divergence,
    mom_loss,
    modified_utility,
    record_visit,
    sw_loss,
    visit_divergence,
)

log = logging.getLogger(__name__)

RUN_VARIANTS = ("baseline", "sw", "mom", "rbf", "rbf-select")


@dataclass
class RunConfig:
    graph: ModuleGraph
    episodes: int = 5
    steps_per_episode: int = 20_000
    adaptation_interval: int = 10
    bins: int = 40
    seed: int = 0
    variant: str = "baseline"
    transfer: TransferPlan | None = None
    latent_size: int = 9
    rbf_update_interval: int = 10
    select_after: int = 200          # adaptation steps of warm-up before pair selection
    select_pairs: int = 1
    select_base: str = "mom"
    eps0: float = 1.0
    eps_min: float = 0.02
    decay_fraction: float = 0.8
    decay: DecaySchedule | None = None
    eval_steps: int | None = None    # greedy test episode after training; None -> steps_per_episode
    initial_maps: dict | None = None
    dt: float = 1.0
    trace: bool = False
    record_metrics: bool = False

    def __post_init__(self):
        if self.variant not in RUN_VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if self.adaptation_interval < 1 or self.steps_per_episode % self.adaptation_interval:
            raise ConfigurationError("adaptation_interval must divide steps_per_episode")
        if self.variant in ("sw", "mom", "rbf") and self.transfer is None:
            raise ConfigurationError(f"variant {self.variant!r} needs a transfer plan")
        if self.transfer is not None and self.variant in ("sw", "mom", "rbf"):
            if self.transfer.variant != self.variant:
                raise ConfigurationError("transfer plan variant does not match run variant")
            for p in self.transfer.players():
                if p not in self.graph.actuators:
                    raise ConfigurationError(f"transfer pair names unknown player {p!r}")

    @property
    def adaptations_per_episode(self) -> int:
        return self.steps_per_episode // self.adaptation_interval

    def schedule(self) -> DecaySchedule:
        if self.decay is not None:
            return self.decay
        total = max(self.episodes * self.adaptations_per_episode, 1)
        return DecaySchedule.reaching_floor(total, self.decay_fraction, self.eps0, self.eps_min)


@dataclass
class EpisodeMetrics:
    episode: int
    phase: str
    power_kw: float
    overflow_lps: float
    demand_lps: float          # signed: negative when demand went unmet
    potential: float
    utilities: dict
    demand_clamped: int = 0


@dataclass
class RunReport:
    variant: str
    seed: int
    players: list
    episodes: list = field(default_factory=list)
    evaluation: EpisodeMetrics | None = None
    maps: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    similarity: np.ndarray | None = None

    @property
    def final(self) -> EpisodeMetrics:
        if self.evaluation is not None:
            return self.evaluation
        if not self.episodes:
            raise ValueError("report holds no episodes")
        return self.episodes[-1]

    def summary_rows(self):
        rows = list(self.episodes)
        if self.evaluation is not None:
            rows.append(self.evaluation)
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "episode", "phase", "power_kw", "overflow_lps",
                        "demand_lps", "potential", *[f"utility_{p}" for p in self.players]])
            for m in self.summary_rows():
                w.writerow([self.variant, self.seed, m.episode, m.phase, _f(m.power_kw),
                            _f(m.overflow_lps), _f(m.demand_lps), _f(m.potential),
                            *[_f(m.utilities[p]) for p in self.players]])

    def write_metrics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "episode", *[f"power_{p}" for p in self.players], "overflow_l",
                        "demand_deviation_l", *[f"utility_{p}" for p in self.players],
                        "potential"])
            for row in self.metrics:
                w.writerow([row[0], row[1], *(_f(v) for v in row[2:])])

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def save_maps(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, pmap in self.maps.items():
            p = directory / f"{_safe(name)}.map"
            pmap.save(p)
            paths.append(p)
        return paths


def _f(x) -> str:
    return repr(float(x))


def _safe(name: str) -> str:
    return name.replace("#", "__")


def player_rng(seed: int, player: str) -> np.random.Generator:
    """Independent stream per player; adding players leaves the others untouched."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(player.encode())]))


class _Interval:
    """Accumulates simulator signals over one adaptation interval."""

    def __init__(self, env: BulkGoodSystem, graph: ModuleGraph):
        names = env.reservoir_names
        self.H_p = np.array([graph.reservoirs[r].H_p for r in names])
        self.H_s = np.array([graph.reservoirs[r].H_s for r in names])
        self.n_players = env.n_players
        self.n_final = len(graph.final_buffers)
        self.reset()

    def reset(self):
        self.power = np.zeros(self.n_players)
        self.below = np.zeros(len(self.H_p))
        self.above = np.zeros(len(self.H_p))
        self.deficit = np.zeros(self.n_final)
        self.overflow = 0.0
        self.steps = 0

    def add(self, out, levels, dt):
        self.power += out.power_kw
        self.below += (levels < self.H_p) * dt
        self.above += (levels > self.H_s) * dt
        self.deficit += out.deficit_l
        self.overflow += float(out.overflow_l.sum())
        self.steps += 1


class Game:
    """Players, simulator and transfer state for one run."""

    def __init__(self, config: RunConfig):
        self.cfg = config
        self.graph = config.graph
        self.env = BulkGoodSystem(self.graph)
        self.names = self.env.player_names
        self.interval = _Interval(self.env, self.graph)
        r_index = {r: k for k, r in enumerate(self.env.reservoir_names)}
        g = self.graph
        self.src_idx = [[r_index[r] for r in g.prior(p)] for p in self.names]
        self.sink_idx = [r_index[g.actuators[p].sink] for p in self.names]
        self.last = [g.is_last(p) for p in self.names]
        self.final_of = [
            g.final_buffers.index(g.actuators[p].sink) if self.last[k] else -1
            for k, p in enumerate(self.names)
        ]
        self.utility_fn = utility_lsbgs if g.utility_form == "lsbgs" else utility_bgs
        self.agents = []
        for p in self.names:
            dim = len(g.state_reservoirs(p))
            agent = PlayerAgent(p, dim, config.bins, epsilon=config.eps0,
                                history_len=max(64, (config.transfer.horizon_H
                                                     if config.transfer else 1) + 1),
                                rng=player_rng(config.seed, p))
            self.agents.append(agent)
        if config.initial_maps is not None:
            install_maps(self, config.initial_maps)
        self.index = {p: k for k, p in enumerate(self.names)}
        self.plan: TransferPlan | None = None
        self.mom = MomState()
        self.rbf_cfg: dict[int, RbfConfig] = {}
        self.latents: dict[int, LatentHistory] = {}
        # untransferred utility behind each stored best action of latent-tracked players
        self.own_utility: dict[int, np.ndarray] = {}
        self.t = 0
        self.clamped = 0
        self.trace: list = []
        if config.variant in ("sw", "mom", "rbf"):
            self.set_plan(config.transfer)

    def set_plan(self, plan: TransferPlan) -> None:
        self.plan = plan
        if plan.variant == "rbf":
            for p in plan.players():
                k = self.index[p]
                self._ensure_rbf(k)

    def _ensure_rbf(self, k: int) -> RbfConfig:
        if k not in self.rbf_cfg:
            self.rbf_cfg[k] = RbfConfig.with_latent_size(
                self.agents[k].dim, self.cfg.latent_size, self.cfg.rbf_update_interval
            )
            depth = self.plan.horizon_H if self.plan else 1
            self.latents[k] = LatentHistory(depth=max(depth, 1))
            self.own_utility[k] = np.full(self.agents[k].map.shape, np.nan)
        return self.rbf_cfg[k]

    # -- utilities -------------------------------------------------------------
    def raw_utilities(self) -> np.ndarray:
        iv = self.interval
        g = self.graph
        T = max(iv.steps, 1)
        w = g.weights
        supply = g.limit_watch == "supply"
        total_vd = -float(iv.deficit.sum())
        out = np.empty(len(self.names))
        for k in range(len(self.names)):
            src_below = max((iv.below[r] for r in self.src_idx[k]), default=0.0)
            src_above = max((iv.above[r] for r in self.src_idx[k]), default=0.0)
            sink = self.sink_idx[k]
            if supply:
                L_p, L_s = iv.below[sink], src_above
            else:
                L_p, L_s = src_below, iv.above[sink]
            P = iv.power[k] / T
            if self.last[k]:
                V_D = -float(iv.deficit[self.final_of[k]])
            else:
                V_D = total_vd
            if demand_factor(w.alpha_D, V_D)[1]:
                self.clamped += 1
            out[k] = self.utility_fn(self.last[k], L_p, L_s, P, V_D, w)
        return out

    def transfer_utilities(self, raw: np.ndarray, step: int) -> np.ndarray:
        plan = self.plan
        if plan is None:
            return raw
        mod = raw.copy()
        records = []
        if plan.variant == "rbf":
            self._refit_latents()
        per_player: dict[int, list] = {}
        for i_name, j_name in plan.pairs:
            i, j = self.index[i_name], self.index[j_name]
            ai, aj = self.agents[i], self.agents[j]
            D = visit_divergence(ai.visits, aj.visits)
            a_ij = alpha_from_divergence(ai.epsilon, plan.beta_tf, D)
            a_ji = alpha_from_divergence(aj.epsilon, plan.beta_tf, D)
            if plan.variant == "sw":
                loss = sw_loss(ai.action_history, aj.action_history, plan.horizon_H)
            elif plan.variant == "mom":
                loss = mom_loss(self.mom, ai.action_history[-1], aj.action_history[-1],
                                plan.alpha_mom, self.t, pair=(i_name, j_name))
            else:
                loss = latent_sw_loss(self.latents[i], self.latents[j], plan.horizon_H)
            per_player.setdefault(i, []).append((j, a_ij, loss, D))
            per_player.setdefault(j, []).append((i, a_ji, loss, D))
        for k, entries in per_player.items():
            if plan.variant == "rbf":
                mod[k] = utility_with_latent(raw[k], [e[1] for e in entries],
                                             [e[2] for e in entries], len(entries) + 1)
            else:
                for _, alpha, loss, _ in entries:
                    mod[k] = modified_utility(mod[k], alpha, loss)
            if self.cfg.trace:
                for other, alpha, loss, D in entries:
                    records.append({
                        "step": step, "t": self.t, "player": self.names[k],
                        "partner": self.names[other], "epsilon": self.agents[k].epsilon,
                        "beta_tf": plan.beta_tf, "divergence": D, "alpha_tf": alpha,
                        "loss": loss, "utility": float(raw[k]), "modified_utility": float(mod[k]),
                    })
        self.trace.extend(records)
        return mod

    def _refit_latents(self) -> None:
        if self.t % self.cfg.rbf_update_interval:
            if all(len(self.latents[k]) for k in self.latents):
                return
        for k in sorted(self.latents):
            pmap = self.agents[k].map
            if pmap.n_filled == 0:
                continue
            hist = self.latents[k]
            if hist.snapshots and hist.snapshots[-1].fitted_at_step == self.t:
                continue
            # fitted on the player's own utilities: penalized values would feed the
            # latent loss back into the latents it is computed from
            hist.append(latent_from_map(pmap, self.rbf_cfg[k], step=self.t,
                                        utility_override=self.own_utility[k]))
        for k in self.latents:
            if not len(self.latents[k]):
                # nothing learned yet: a zero latent keeps the loss defined
                J = self.rbf_cfg[k].J
                self.latents[k].append(RbfLatent(np.zeros(J), np.zeros(J), self.t))


def install_maps(game: Game, maps: dict) -> None:
    """Attach pre-trained maps by player name, falling back to the base actuator name."""
    for agent in game.agents:
        base = game.graph.actuators[agent.id].base or agent.id
        pmap = maps.get(agent.id, maps.get(base))
        if pmap is None:
            raise PolicyLoadError(f"no policy for player {agent.id!r}")
        if pmap.dim != agent.dim or pmap.bins_per_dim != agent.bins_per_dim:
            raise PolicyLoadError(
                f"policy for {agent.id!r} has shape dim={pmap.dim}, bins={pmap.bins_per_dim}; "
                f"player needs dim={agent.dim}, bins={agent.bins_per_dim}"
            )
        agent.map = pmap.copy()


def _run_episode(game: Game, episode: int, learn: bool, schedule: DecaySchedule | None,
                 n_steps: int, phase: str, report: RunReport) -> EpisodeMetrics:
    cfg = game.cfg
    env = game.env
    iv = game.interval
    agents = game.agents
    n = len(agents)
    env.reset()
    iv.reset()
    dt = cfg.dt
    interval = cfg.adaptation_interval

    if not learn:
        for a in agents:
            a.epsilon = 0.0
    elif schedule is not None:
        for a in agents:
            a.epsilon = schedule.value(game.t)

    states = env.states()
    actions = np.empty(n)
    for k, a in enumerate(agents):
        actions[k], _ = select_action(a, states[k])
        a.record_action(actions[k])
    held_states = states

    tot_power = 0.0
    tot_overflow = 0.0
    tot_deficit = 0.0
    pot_sum = 0.0
    util_sum = np.zeros(n)
    n_adapt = 0
    clamped_before = game.clamped

    for s in range(1, n_steps + 1):
        out = env.step(actions, dt)
        levels = env.levels()
        iv.add(out, levels, dt)
        if s % interval:
            continue
        raw = game.raw_utilities()
        phi = potential(raw)
        states = [levels[idx] for idx in env._state_idx]
        if learn:
            for k, a in enumerate(agents):
                record_visit(a.visits, a.map.index_of(states[k]))
            scored = game.transfer_utilities(raw, s)
            for k, a in enumerate(agents):
                if update_map(a.map, held_states[k], actions[k], float(scored[k])):
                    own = game.own_utility.get(k)
                    if own is not None:
                        own[a.map.index_of(held_states[k])] = float(raw[k])
            game.t += 1
            if schedule is not None:
                for a in agents:
                    a.epsilon = schedule.value(game.t)
        for k, a in enumerate(agents):
            actions[k], _ = select_action(a, states[k])
            a.record_action(actions[k])
        held_states = states

        tot_power += float(iv.power.sum())
        tot_overflow += iv.overflow
        tot_deficit += float(iv.deficit.sum())
        pot_sum += phi
        util_sum += raw
        n_adapt += 1
        if cfg.record_metrics:
            report.metrics.append((
                s, episode, *(iv.power / iv.steps), iv.overflow, -float(iv.deficit.sum()),
                *raw, phi,
            ))
        iv.reset()

    secs = n_steps * dt
    return EpisodeMetrics(
        episode=episode,
        phase=phase,
        power_kw=tot_power / n_steps,
        overflow_lps=tot_overflow / secs,
        demand_lps=-tot_deficit / secs,
        potential=pot_sum / max(n_adapt, 1),
        utilities={p: float(u) / max(n_adapt, 1) for p, u in zip(game.names, util_sum)},
        demand_clamped=game.clamped - clamped_before,
    )


def _select_pairs(game: Game, k_pairs: int):
    """Fit latents of every player, rank pairs by latent distance, return the closest ones."""
    latents = []
    for a in game.agents:
        cfg = RbfConfig.with_latent_size(a.dim, game.cfg.latent_size)
        if a.map.n_filled == 0:
            raise ConfigurationError(f"player {a.id} learned nothing before pair selection")
        latents.append(latent_from_map(a.map, cfg, step=game.t))
    mat, ranked = similarity_matrix(latents)
    chosen, used = [], set()
    for i, j in ranked:
        if len(chosen) >= k_pairs:
            break
        chosen.append((game.names[i], game.names[j]))
        used.update((i, j))
    return chosen, mat


def train(config: RunConfig) -> RunReport:
    """Run every training episode, then one greedy test episode."""
    game = Game(config)
    report = RunReport(variant=config.variant, seed=config.seed, players=list(game.names))
    schedule = config.schedule()
    pending_select = config.variant == "rbf-select"
    if config.transfer is not None:
        report.pairs = list(config.transfer.pairs)

    for ep in range(config.episodes):
        m = _run_episode(game, ep, True, schedule, config.steps_per_episode, "train", report)
        report.episodes.append(m)
        log.info("episode %d: power %.4f kW, overflow %.4f L/s, demand %.4f L/s, potential %.4f",
                 ep, m.power_kw, m.overflow_lps, m.demand_lps, m.potential)
        # warm-up as the plain game, then pick partners from latent similarity
        if pending_select and game.t >= config.select_after:
            pairs, mat = _select_pairs(game, config.select_pairs)
            base = config.transfer or TransferPlan(pairs=pairs, variant=config.select_base)
            plan = replace(base, pairs=pairs, variant=config.select_base)
            game.set_plan(plan)
            report.pairs = pairs
            report.similarity = mat
            pending_select = False

    eval_steps = config.steps_per_episode if config.eval_steps is None else config.eval_steps
    if eval_steps:
        report.evaluation = _run_episode(game, config.episodes, False, None, eval_steps,
                                         "test", report)
    report.maps = {a.id: a.map for a in game.agents}
    report.trace = game.trace
    return report


def load_policies(directory, players) -> dict:
    """Read ``<player>.map`` files; missing duplicates fall back to their base name later."""
    directory = Path(directory)
    if not directory.is_dir():
        raise PolicyLoadError(f"policy directory not found: {directory}")
    maps = {}
    for path in sorted(directory.glob("*.map")):
        maps[path.stem.replace("__", "#")] = PerformanceMap.load(path)
    if not maps:
        raise PolicyLoadError(f"no .map files in {directory}")
    return maps


def evaluate(policies: dict, config: RunConfig) -> RunReport:
    """Reuse trained maps on ``config.graph``: optional retraining, then a greedy test episode."""
    return train(replace(config, initial_maps=policies))


def ablate(config: RunConfig, sweep: dict, seed_stride: int = 1) -> list[RunReport]:
    """One run per grid point of ``sweep`` (``{"beta_tf": [...], ...}``), seeds derived per point."""
    if not sweep:
        return []
    keys = list(sweep)
    grids = [list(sweep[k]) for k in keys]
    if any(len(g) == 0 for g in grids):
        return []
    reports = []
    for n, values in enumerate(itertools.product(*grids)):
        point = dict(zip(keys, values))
        cfg = apply_point(config, point)
        if "seed" not in point:
            cfg = replace(cfg, seed=config.seed + n * seed_stride)
        rep = train(cfg)
        rep.point = point
        reports.append(rep)
    return reports


def apply_point(config: RunConfig, point: dict) -> RunConfig:
    run_fields = {k: v for k, v in point.items() if hasattr(config, k) and k != "transfer"}
    plan_fields = {k: v for k, v in point.items() if k in ("beta_tf", "horizon_H", "alpha_mom")}
    unknown = set(point) - set(run_fields) - set(plan_fields)
    if unknown:
        raise ConfigurationError(f"unknown sweep parameters: {sorted(unknown)}")
    cfg = replace(config, **run_fields)
    if plan_fields:
        if cfg.transfer is None:
            raise ConfigurationError("transfer parameters swept without a transfer plan")
        cfg = replace(cfg, transfer=replace(cfg.transfer, **plan_fields))
    return cfg


def write_ablation_csv(path, reports) -> None:
    keys = sorted({k for r in reports for k in getattr(r, "point", {})})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*keys, "variant", "seed", "power_kw", "overflow_lps", "demand_lps",
                    "potential"])
        for r in reports:
            m = r.final
            w.writerow([*(getattr(r, "point", {}).get(k, "") for k in keys), r.variant, r.seed,
                        _f(m.power_kw), _f(m.overflow_lps), _f(m.demand_lps), _f(m.potential)])


def transfer_plan_from(cfg: dict, variant: str, pairs=None) -> TransferPlan | None:
    """Transfer plan for ``variant`` from the ``[transfer]`` table; ``None`` for the plain game."""
    if variant == "baseline":
        return None
    tcfg = dict(cfg.get("transfer") or {})
    plan_variant = tcfg.get("select_base", "mom") if variant == "rbf-select" else variant
    beta = tcfg.get(f"beta_tf_{plan_variant}", tcfg.get("beta_tf"))
    if beta is None:
        raise ConfigurationError(f"no beta_tf configured for variant {plan_variant!r}")
    if variant == "rbf-select":
        pairs = []   # chosen from latent similarity during training
    elif pairs is None:
        pairs = [tuple(p) for p in tcfg.get("pairs", [])]
    return TransferPlan(
        pairs=[tuple(p) for p in pairs],
        variant=plan_variant,
        beta_tf=float(beta),
        horizon_H=int(tcfg.get("horizon_H", 10)),
        alpha_mom=float(tcfg.get("alpha_mom", 0.5)),
    )


def run_config_from(cfg: dict, graph: ModuleGraph, **overrides) -> RunConfig:
    """Build a :class:`RunConfig` from ``[run]``, ``[transfer]`` and ``[rbf]`` tables.

    Keyword overrides win over the file; ``None`` values are ignored.
    """
    run = dict(cfg.get("run") or {})
    run.update({k: v for k, v in overrides.items() if v is not None})
    variant = run.get("variant", "baseline")
    rbf_cfg = dict(cfg.get("rbf") or {})
    tcfg = dict(cfg.get("transfer") or {})
    fields = {
        "episodes": int(run.get("episodes", 5)),
        "steps_per_episode": int(run.get("steps_per_episode", 20_000)),
        "adaptation_interval": int(run.get("adaptation_interval", 10)),
        "bins": int(run.get("bins", 40)),
        "seed": int(run.get("seed", 0)),
        "variant": variant,
        "latent_size": int(rbf_cfg.get("latent_size", 9)),
        "rbf_update_interval": int(rbf_cfg.get("update_interval_H", 10)),
        "select_after": int(tcfg.get("select_after", 200)),
        "select_pairs": int(tcfg.get("select_pairs", 1)),
        "select_base": str(tcfg.get("select_base", "mom")),
    }
    for key in ("eps0", "eps_min", "decay_fraction", "eval_steps", "trace", "record_metrics"):
        if key in run:
            fields[key] = run[key]
    if "transfer" in run:
        fields["transfer"] = run["transfer"]
    else:
        fields["transfer"] = transfer_plan_from(cfg, variant)
    return RunConfig(graph=graph, **fields)
