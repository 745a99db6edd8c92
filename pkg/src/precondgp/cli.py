"""Command-line entry point: ``precondgp {synth,bias-variance,quality,train}``.

Exit codes: 0 on success, 1 on bad input, 2 on a numerical failure during
the run. ``PRECONDGP_NUM_THREADS`` caps the BLAS thread pool.
"""

import argparse
import contextlib
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from .exceptions import InputError, NumericalError
from .experiments import ExperimentConfig, run_experiment

VERBS = {
    "synth": "synth",
    "bias-variance": "bias_variance",
    "quality": "quality_curves",
    "train": "training",
}

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog="precondgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, experiment in VERBS.items():
        p = sub.add_parser(verb, help=f"run the {experiment} experiment")
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def _thread_limit():
    raw = os.environ.get("PRECONDGP_NUM_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"PRECONDGP_NUM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InputError("PRECONDGP_NUM_THREADS must be >= 1")
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        changes = {"experiment": VERBS[args.verb]}
        if args.seed is not None:
            changes["seed"] = args.seed
        cfg = cfg.replace(**changes)
        with _thread_limit():
            outputs = run_experiment(cfg, args.out)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in outputs:
        print(path)
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
