"""Command line entry point: ``giro simulate|lemma1|contextual|verify-bounds``."""

from __future__ import annotations

import argparse
import math
import sys

from .analysis import GRIDS, verify_bounds
from .config import ConfigError, ExperimentConfig
from .contextual import LoadError, load_classification_env
from .harness import bounds_csv, curve_csv, lemma1_experiment, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BOUND = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="giro", description="Bootstrap exploration bandit experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="multi-armed experiment from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="CSV path (default: config 'output', else stdout)")
    s.add_argument("--independent-draws", action="store_true",
                   help="give each policy its own reward draws instead of common ones")
    s.add_argument("--workers", type=int)

    s = sub.add_parser("lemma1", help="lock-in frequency of the naive bootstrap")
    s.add_argument("--mu1", type=float, required=True)
    s.add_argument("--mu2", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--runs", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("contextual", help="contextual experiment on a classification CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)

    s = sub.add_parser("verify-bounds", help="check the tail bounds on a parameter grid")
    s.add_argument("--grid", choices=sorted(GRIDS), default="small")
    s.add_argument("--out", required=True)
    return p


def _emit(text: str, path) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _simulate(args) -> int:
    config = ExperimentConfig.load(args.config)
    if config.mode != "mab":
        raise ConfigError(f"simulate needs mode = mab, config has {config.mode!r}")
    if args.independent_draws:
        config.independent_draws = True
    result = run_experiment(config, workers=args.workers)
    _emit(curve_csv(result.curve()), args.out or config.output)
    return EXIT_OK


def _contextual(args) -> int:
    config = ExperimentConfig.load(args.config)
    if config.mode != "contextual":
        raise ConfigError(f"contextual needs mode = contextual, config has {config.mode!r}")
    config.family = "classification"
    config.data = args.data
    env = load_classification_env(args.data, config.shuffle_seed)
    result = run_experiment(config, env=env, workers=args.workers)
    _emit(curve_csv(result.curve()), args.out or config.output)
    return EXIT_OK


def _lemma1(args) -> int:
    res = lemma1_experiment(args.mu1, args.mu2, args.n, args.runs, args.seed, args.workers)
    freq_sd = math.sqrt(res.expected_lock_frequency * (1 - res.expected_lock_frequency) / res.runs)
    print(f"runs={res.runs} n={res.n} mu1={res.mu1:g} mu2={res.mu2:g}")
    print(f"lock_frequency={res.lock_frequency:.6f} expected={res.expected_lock_frequency:.6f} "
          f"sd={freq_sd:.6f}")
    print(f"mean_regret={res.mean_regret:.6f} stderr={res.regret_stderr:.6f} "
          f"lower_bound={res.lower_bound:.6f}")
    return EXIT_OK


def _verify(args) -> int:
    reports = verify_bounds(args.grid)
    _emit(bounds_csv(reports), args.out)
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports)} checks, {failed} failed", file=sys.stderr)
    return EXIT_BOUND if failed else EXIT_OK


COMMANDS = {"simulate": _simulate, "lemma1": _lemma1, "contextual": _contextual,
            "verify-bounds": _verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, LoadError, ValueError, OSError) as exc:
        print(f"giro {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
