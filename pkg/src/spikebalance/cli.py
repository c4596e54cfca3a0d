"""Command-line entry point: ``spikebalance <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment
from .config import PRESETS, ExperimentConfig
from .errors import ConfigError, SpikeBalanceError

log = logging.getLogger("spikebalance")


def _load_config(args):
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        preset = args.preset or "desk"
        try:
            cfg = PRESETS[preset]()
        except KeyError:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None
    return cfg.with_overrides(seed=args.seed, workers=args.workers)


def _parse_trial(text):
    try:
        th, om = text.split(",")
        return float(th), float(om)
    except ValueError:
        raise argparse.ArgumentTypeError(f"trial must be THETA0_DEG,OMEGA0, got {text!r}") from None


def _parse_pair(kind):
    def parse(text):
        try:
            a, b = text.split(",")
            return kind(a), kind(b)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return parse


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in config (default: desk)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--workers", type=int, help="parallel evaluation processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spikebalance", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("evolve", parents=[common], help="run independent evolutionary runs")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")

    s = sub.add_parser("evaluate", parents=[common], help="score a genotype on the 16 trials")
    s.add_argument("genotype", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--record", action="store_true", help="write per-trial trace CSVs")
    s.add_argument("--trial", type=_parse_trial, action="append",
                   help="custom trial THETA0_DEG,OMEGA0 (repeatable)")
    s.add_argument("--duration", type=float)

    s = sub.add_parser("generalize", parents=[common], help="fitness over a grid of initial conditions")
    s.add_argument("genotype", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--resolution", type=_parse_pair(int), help="N_THETA,N_OMEGA")
    s.add_argument("--theta-range", type=_parse_pair(float), help="LO_DEG,HI_DEG")
    s.add_argument("--omega-range", type=_parse_pair(float), help="LO,HI")
    s.add_argument("--duration", type=float)

    s = sub.add_parser("analyze", parents=[common], help="MI tables and t-tests from traces")
    s.add_argument("traces", type=Path)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("report", parents=[common], help="summarize a completed run directory")
    s.add_argument("run_dir", type=Path)
    s.add_argument("--out", type=Path)

    s = sub.add_parser("pipeline", parents=[common], help="evolve, record, analyze and report")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--fresh", action="store_true")

    s = sub.add_parser("init-config", help="write a preset config to a file")
    s.add_argument("path", type=Path)
    s.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    return p


def run(args):
    if args.command == "init-config":
        PRESETS[args.preset]().save(args.path)
        print(args.path)
        return 0
    cfg = _load_config(args)
    if args.command == "evolve":
        out = experiment.cmd_evolve(cfg, args.out, resume=not args.fresh)
        print(out)
    elif args.command == "evaluate":
        mean, rows = experiment.cmd_evaluate(cfg, args.genotype, args.out, record=args.record,
                                             trials=args.trial, duration=args.duration)
        for i, th, om, fit, steps, outcome in rows:
            print(f"{i:3d}  theta0={th:+7.2f}  omega0={om:+.4f}  fitness={fit:.6f}  "
                  f"steps={steps}  {outcome}")
        print(f"mean fitness {mean:.6f}")
    elif args.command == "generalize":
        grid = experiment.cmd_generalize(cfg, args.genotype, args.out, args.resolution,
                                         args.theta_range, args.omega_range, args.duration)
        print(f"{grid.fitness.size} grid points, mean fitness {grid.fitness.mean():.6f}")
    elif args.command == "analyze":
        _, stats, obs = experiment.cmd_analyze(cfg, args.traces, args.out)
        for agent, finding, value, holds, p in obs:
            print(f"{agent}: {finding}: {'yes' if holds else 'no'} (diff {value:+.4f} bits, p={p:.3g})")
    elif args.command == "report":
        print(experiment.cmd_report(args.run_dir, args.out))
    elif args.command == "pipeline":
        print(experiment.cmd_pipeline(cfg, args.out, resume=not args.fresh))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except SpikeBalanceError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
