"""Command line entry point ``opo-estim``.

Exit codes: 0 success, 1 invariant failure, 2 configuration error,
3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigurationError, NumericalError

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="opo-estim", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["single-trial", "case-study", "sweep", "check-invariants"])
    p.add_argument("--config", help="JSON configuration file (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--fast", action="store_true", help="use fast_n_trials instead of n_trials")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--trial", type=int, default=0, help="trial index for single-trial")
    p.add_argument("--param", choices=["T", "g", "c"], help="sweep parameter override")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _print_summary(summary):
    print(f"{'method':<10} {'qty':<4} {'mean RPI':>9} {'SEM':>7} {'N':>5} {'div':>4}")
    for method, quantity, st in summary.rows():
        print(f"{method:<10} {quantity:<4} {100 * st.mean:8.2f}% {100 * st.sem:6.2f}% "
              f"{st.n_trials:5d} {st.n_diverged:4d}")


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from . import harness
    from .plotting import plot_trial
    from .sde import write_trajectory_csv

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.replace(master_seed=args.seed)
        out = Path(args.out or config.output_dir)
        n_trials = config.fast_n_trials if args.fast else config.n_trials

        if args.command == "check-invariants":
            report = harness.check_invariants(config)
            for line in report.lines():
                print(line)
            return EXIT_OK if report.ok else EXIT_INVARIANT

        if args.command == "single-trial":
            trial = harness.run_single_trial(config, args.trial, keep_paths=True)
            out.mkdir(parents=True, exist_ok=True)
            write_trajectory_csv(trial.trajectory, out / f"trial_{args.trial}.csv",
                                 stride=config.csv_stride)
            plot_trial(trial, config, out / f"trial_{args.trial}.svg")
            for (method, quantity), value in trial.rpis.items():
                print(f"{method:<10} {quantity:<4} RPI {100 * value:7.2f}%")
            return EXIT_OK

        if args.command == "case-study":
            res = harness.run_case_study(config, n_trials=n_trials, out_dir=out)
            _print_summary(res.summary)
            for w in res.warnings:
                print(w)
            return EXIT_OK

        res = harness.run_sweep(config, param=args.param, n_trials=n_trials, out_dir=out)
        for value, summary in zip(res.values, res.summaries):
            print(f"--- {res.param} = {value:g}")
            _print_summary(summary)
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():
    sys.exit(run())
