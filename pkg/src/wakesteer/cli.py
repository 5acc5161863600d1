"""Command-line entry point: ``wakesteer <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .controllers import ControllerKind
from .direct import run_corpus
from .farm import InflowState
from .sac import load_agent
from .wake import export_flow_slice

log = logging.getLogger("wakesteer")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI experiment config (defaults if omitted)")
    p.add_argument("--seed", type=int, default=None, help="root seed (default: first configured seed)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wakesteer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out one controller and write the episode CSV")
    _common(p)
    p.add_argument("--controller", default="greedy", choices=[k.value for k in ControllerKind])
    p.add_argument("--direction", type=float, default=270.0)
    p.add_argument("--checkpoint", type=Path, help="agent checkpoint for learning controllers")

    p = sub.add_parser("train", help="train a hierarchical or direct-RL agent")
    _common(p)
    p.add_argument("--agent", default="hierarchical", choices=["hierarchical", "direct_rl"])
    p.add_argument("--steps", type=int, default=None, help="override experiment.train_steps")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")

    p = sub.add_parser("evaluate", help="evaluate a trained agent against greedy")
    _common(p)
    p.add_argument("--agent", default="hierarchical", choices=["hierarchical", "direct_rl"])
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("benchmark", help="run the controller x seed x direction grid")
    _common(p)

    p = sub.add_parser("optimize", help="run DIRECT on the test-function corpus")
    _common(p)
    p.add_argument("--evaluations", type=int, default=500)

    p = sub.add_parser("flow-slice", help="export a hub-height speed grid")
    _common(p)
    p.add_argument("--direction", type=float, default=270.0)
    p.add_argument("--yaws", default=None, help="comma-separated yaw offsets in degrees")
    p.add_argument("--resolution", type=float, default=20.0, help="grid spacing in metres")
    return parser


def _seed(args, cfg) -> int:
    return cfg.experiment.seeds[0] if args.seed is None else args.seed


def _cmd_simulate(args, cfg) -> None:
    kind = ControllerKind(args.controller)
    agent = None
    if kind.learns:
        if args.checkpoint is None:
            raise harness.ConfigError("--checkpoint", f"{kind.value} needs an agent checkpoint")
        agent = load_agent(args.checkpoint)
    seed = _seed(args, cfg)
    ep = harness.simulate(cfg, kind.value, seed, args.direction, agent)
    path = ep.write_csv(args.out / f"episode_{kind.value}_s{seed}_wd{args.direction:g}.csv")
    print(f"{kind.value}: mean farm power {ep.mean_power / 1e6:.4f} MW, max V30 "
          f"{ep.v30_trace.max():.2f}% -> {path}")


def _cmd_train(args, cfg) -> None:
    seed = _seed(args, cfg)
    run = harness.run_training(cfg, args.agent, seed, args.out, resume_from=args.resume,
                               total_steps=args.steps)
    for c in run.curve:
        print(f"step {c['step']:>7}: gain vs greedy {c.get('gain_vs_greedy', float('nan')):+.2f}%, "
              f"V30 {c['v30']:.2f}%")
    print(f"checkpoint: {args.out / 'checkpoint.pt'}")


def _cmd_evaluate(args, cfg) -> None:
    records = harness.evaluate_checkpoint(cfg, args.agent, args.checkpoint, _seed(args, cfg), args.out)
    print(harness.format_table(records), end="")


def _cmd_benchmark(args, cfg) -> None:
    if args.seed is not None:
        cfg = harness.dataclasses.replace(
            cfg, experiment=harness.dataclasses.replace(cfg.experiment, seeds=(args.seed,)))
    agents = {}
    if cfg.experiment.checkpoint:
        agent = load_agent(cfg.experiment.checkpoint)
        agents = {k: agent for k in cfg.experiment.controllers if ControllerKind(k).learns}
    records = harness.run_benchmark(cfg, args.out, agents)
    print(harness.format_table(records), end="")
    if any(r.status != "ok" for r in records):
        raise RuntimeError("some benchmark cells failed")


def _cmd_optimize(args, cfg) -> None:
    rows = run_corpus(args.evaluations)
    path = args.out / "optimize.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["function", "best_value", "evaluations", "known_minimum"])
        for name, best, nfev, f_star in rows:
            w.writerow([name, repr(best), nfev, repr(f_star)])
    print(f"{'function':<16}{'best value':>16}{'evaluations':>13}{'known minimum':>16}")
    for name, best, nfev, f_star in rows:
        print(f"{name:<16}{best:>16.8g}{nfev:>13d}{f_star:>16.8g}")


def _cmd_flow_slice(args, cfg) -> None:
    n = cfg.farm.n_turbines
    if args.yaws is None:
        yaws = np.zeros(n)
    else:
        try:
            yaws = np.array([float(v) for v in args.yaws.split(",")])
        except ValueError:
            raise harness.ConfigError("--yaws", f"not a list of numbers: {args.yaws!r}") from None
        if yaws.shape != (n,):
            raise harness.ConfigError("--yaws", f"expected {n} values, got {len(yaws)}")
    inflow = InflowState(cfg.env.wind_speed_mean, args.direction, cfg.env.ti)
    path = args.out / f"flow_slice_wd{args.direction:g}.csv"
    export_flow_slice(path, cfg.layout(), cfg.turbine, inflow, yaws, cfg.wake, resolution=args.resolution)
    print(f"flow slice -> {path}")


COMMANDS = {
    "simulate": _cmd_simulate, "train": _cmd_train, "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark, "optimize": _cmd_optimize, "flow-slice": _cmd_flow_slice,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime-failure exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
