"""Command-line entry point.

Flags override values from the config file, which override built-in defaults.
Exit codes: 0 ok, 1 usage error, 2 configuration error, 3 topology error,
4 runtime error (including unwritable output directories).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .env.topology import build_graph, config_digest, read_config, resolve_config_path
from .errors import ConfigurationError, TLSbPGError, TopologyError
from .harness import (
    RUN_VARIANTS,
    ablate,
    apply_point,
    evaluate,
    load_policies,
    run_config_from,
    train,
    write_ablation_csv,
)
from .oracle import format_reports, verify_suite, write_report_csv
from .rbf import RbfConfig, latent_from_map, similarity_matrix, write_similarity_csv

log = logging.getLogger("tlsbpg")

OUT_ENV = "TLSBPG_OUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_TOPOLOGY, EXIT_RUNTIME = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="bgs_default",
                        help="config file or bundled config name (default: bgs_default)")
    common.add_argument("--variant", choices=RUN_VARIANTS, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--episodes", type=int, default=None)
    common.add_argument("--steps", type=int, default=None, help="steps per episode")
    common.add_argument("--sequence", default=None, help='module order, e.g. "1-3-2//3-4"')
    common.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUT_ENV}/<command>-<variant>-s<seed>)")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--verbose", "-v", action="store_true")

    p = _Parser(prog="tlsbpg", description="Transfer learning for state-based potential games.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("train", parents=[common], help="train players and write maps and metrics")
    ev = sub.add_parser("eval", parents=[common], help="reuse trained maps, retrain, test")
    ev.add_argument("--policies", required=True, help="directory of .map files from train")
    ab = sub.add_parser("ablate", parents=[common], help="grid over run or transfer parameters")
    ab.add_argument("--grid", action="append", default=[],
                    help="NAME=v1,v2,... (repeatable), e.g. beta_tf=0.2,0.4,0.6,0.8")
    ab.add_argument("--seeds", type=int, default=1, help="seeds per grid point")
    sub.add_parser("similarity", parents=[common],
                   help="train the plain game and export the latent similarity matrix")
    vf = sub.add_parser("verify", parents=[common], help="run the potential-game oracle checks")
    vf.add_argument("--samples", type=int, default=100)
    return p


def _load(args):
    path = resolve_config_path(args.config)
    cfg, text = read_config(path)
    graph = build_graph(cfg, sequence=args.sequence)
    return path, cfg, text, graph


def _overrides(args, **extra):
    return dict(variant=args.variant, seed=args.seed, episodes=args.episodes,
                steps_per_episode=args.steps, **extra)


def _out_dir(args, variant: str, seed: int) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get(OUT_ENV, "runs"))
        out = root / f"{args.command}-{variant}-s{seed}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory not writable: {out} ({exc})") from exc
    return out


def _manifest(out: Path, args, config_path, text, run_cfg=None, **extra) -> None:
    data = {
        "command": args.command,
        "config": str(config_path),
        "config_sha256": config_digest(text),
        "sequence": args.sequence,
        "versions": {"tlsbpg": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        **extra,
    }
    if run_cfg is not None:
        data.update(
            variant=run_cfg.variant, seed=run_cfg.seed, episodes=run_cfg.episodes,
            steps_per_episode=run_cfg.steps_per_episode,
            adaptation_interval=run_cfg.adaptation_interval, bins=run_cfg.bins,
            transfer=None if run_cfg.transfer is None else {
                "pairs": [list(p) for p in run_cfg.transfer.pairs],
                "variant": run_cfg.transfer.variant, "beta_tf": run_cfg.transfer.beta_tf,
                "horizon_H": run_cfg.transfer.horizon_H, "alpha_mom": run_cfg.transfer.alpha_mom,
            },
        )
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_run(out: Path, report, verbose: bool) -> None:
    report.write_csv(out / "report.csv")
    report.write_metrics_csv(out / "metrics.csv")
    report.save_maps(out / "maps")
    if verbose:
        report.write_trace(out / "trace.jsonl")
    f = report.final
    print(f"{report.variant} seed={report.seed}: power {f.power_kw:.4f} kW, "
          f"overflow {f.overflow_lps:.4f} L/s, demand {f.demand_lps:.4f} L/s, "
          f"potential {f.potential:.4f}  -> {out}")


def cmd_train(args) -> int:
    path, cfg, text, graph = _load(args)
    rc = run_config_from(cfg, graph, **_overrides(args), trace=args.verbose, record_metrics=True)
    out = _out_dir(args, rc.variant, rc.seed)
    _manifest(out, args, path, text, rc)
    _write_run(out, train(rc), args.verbose)
    return EXIT_OK


def cmd_eval(args) -> int:
    path, cfg, text, graph = _load(args)
    maps = load_policies(args.policies, graph.players)
    episodes = 1 if args.episodes is None else args.episodes
    ov = _overrides(args)
    ov["episodes"] = episodes
    rc = run_config_from(cfg, graph, **ov, trace=args.verbose, record_metrics=True)
    out = _out_dir(args, rc.variant, rc.seed)
    _manifest(out, args, path, text, rc, policies=str(args.policies))
    _write_run(out, evaluate(maps, rc), args.verbose)
    return EXIT_OK


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        name, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigurationError(f"grid entry must look like NAME=v1,v2: {item!r}")
        parsed = []
        for v in values.split(","):
            try:
                parsed.append(int(v) if v.strip().lstrip("-").isdigit() else float(v))
            except ValueError:
                parsed.append(v.strip())
        grid[name.strip()] = parsed
    return grid


def _ablate_point(job):
    rc, point = job
    rep = train(apply_point(rc, point))
    rep.point = point
    rep.maps = {}
    return rep


def cmd_ablate(args) -> int:
    path, cfg, text, graph = _load(args)
    rc = run_config_from(cfg, graph, **_overrides(args))
    grid = _parse_grid(args.grid)
    if args.seeds < 1:
        raise ConfigurationError("--seeds must be >= 1")
    grid.setdefault("seed", [rc.seed + k for k in range(args.seeds)])
    out = _out_dir(args, rc.variant, rc.seed)
    _manifest(out, args, path, text, rc, grid=grid)
    if args.jobs > 1:
        keys = list(grid)
        jobs = [(rc, dict(zip(keys, vals))) for vals in itertools.product(*grid.values())]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_ablate_point, jobs))
    else:
        reports = ablate(rc, grid, seed_stride=0)
    write_ablation_csv(out / "ablation.csv", reports)
    for r in reports:
        f = r.final
        print(f"{r.point}: power {f.power_kw:.4f} demand {f.demand_lps:.4f} "
              f"overflow {f.overflow_lps:.4f} potential {f.potential:.4f}")
    return EXIT_OK


def cmd_similarity(args) -> int:
    path, cfg, text, graph = _load(args)
    ov = _overrides(args)
    ov["variant"] = "baseline"
    rc = run_config_from(cfg, graph, **ov, eval_steps=0)
    out = _out_dir(args, "similarity", rc.seed)
    report = train(rc)
    latents = []
    for name in report.players:
        pmap = report.maps[name]
        latents.append(latent_from_map(pmap, RbfConfig.with_latent_size(pmap.dim, rc.latent_size)))
    mat, ranked = similarity_matrix(latents)
    write_similarity_csv(out / "similarity.csv", report.players, mat)
    _manifest(out, args, path, text, rc)
    for i, j in ranked[:5]:
        print(f"{report.players[i]} ~ {report.players[j]}: {mat[i, j]:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    reports = verify_suite(samples=args.samples, seed=seed)
    text = format_reports(reports)
    print(text)
    if args.out or os.environ.get(OUT_ENV):
        out = _out_dir(args, "oracle", seed)
        write_report_csv(out / "conditions.csv", reports)
    return EXIT_OK if all(r.ok for r in reports) else EXIT_RUNTIME


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "similarity": cmd_similarity,
    "verify": cmd_verify,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except TopologyError as exc:
        print(f"topology error: {exc}", file=sys.stderr)
        return EXIT_TOPOLOGY
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TLSbPGError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
