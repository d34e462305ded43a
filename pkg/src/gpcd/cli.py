"""Command-line interface for the simulation / learning / detection pipeline.

Subcommands::

    gpcd simulate --out DIR [--config FILE] [--seed N] [--paper-scale] [--set k=v]
    gpcd train    --out DIR ...
    gpcd eval     --out DIR ...
    gpcd detect   --out DIR [--trajectory FILE] ...
    gpcd report   --out DIR ...

Exit codes: 0 on success and 1 on a runtime failure (missing inputs, bad
config values), except ``detect`` whose exit code is the number of detection
events capped at 125 (0 means no collision). Argument errors exit with 2 via
argparse.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .pipeline import cmd_detect, cmd_eval, cmd_report, cmd_simulate, cmd_train


def _add_common(parser):
    parser.add_argument("--config", default=None,
                        help="key/value config file overlaying the defaults")
    parser.add_argument("--out", required=True, help="experiment directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed override")
    parser.add_argument("--paper-scale", action="store_true",
                        help="use paper-scale dataset sizes (slow)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpcd",
        description="Current-model learning and collision detection on a "
                    "simulated two-link arm.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "generate and store every trajectory set"),
        ("train", "fit and persist the configured estimators"),
        ("eval", "write the nMSE report table"),
        ("detect", "run collision detection; exit code = event count"),
        ("report", "print a text summary of stored results"),
    ]:
        command = sub.add_parser(name, help=help_text)
        _add_common(command)
        if name == "detect":
            command.add_argument("--trajectory", default=None,
                                 help="CSV trajectory to monitor (defaults to "
                                      "the stored collision scenario)")
    return parser


def _parse_overrides(pairs):
    parsed = []
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects KEY=VALUE, got {pair!r}")
        key, _, value = pair.partition("=")
        parsed.append((key.strip(), value))
    return parsed


def main(argv=None) -> int:
    # BLAS thread pools lose badly to single-threaded execution at the
    # matrix sizes this pipeline works with.
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1, "blas")
    except ImportError:  # pragma: no cover
        pass
    args = build_parser().parse_args(argv)
    try:
        config = load_config(path=args.config,
                             overrides=_parse_overrides(args.overrides),
                             seed=args.seed, paper_scale=args.paper_scale)
        if args.command == "simulate":
            result = cmd_simulate(config, args.out)
            print(f"wrote {len(result['files'])} files under {args.out}")
            return 0
        if args.command == "train":
            result = cmd_train(config, args.out)
            print(f"wrote {len(result['files'])} model files under {args.out}")
            return 0
        if args.command == "eval":
            path = cmd_eval(config, args.out)
            print(f"wrote {path}")
            return 0
        if args.command == "detect":
            result = cmd_detect(config, args.out,
                                trajectory_path=args.trajectory)
            events = result["events"]
            print(f"{len(events)} detection event(s); wrote "
                  f"{result['events_path']}")
            return min(len(events), 125)
        if args.command == "report":
            print(cmd_report(config, args.out), end="")
            return 0
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
