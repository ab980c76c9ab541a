"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 domain error (bad config, bad formula,
infeasible synthesis), 3 filesystem error.
"""

from __future__ import annotations

import argparse
import sys

from ..shield import Infeasible
from ..synthesis import SynthesisGateError
from . import commands


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stlshield",
        description=(
            "Shield a goal-seeking action model at runtime so every run "
            "satisfies a temporal specification."
        ),
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add_common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument(
            "config",
            help="bundled experiment name (case1, case2) or path to an experiment JSON",
        )
        sp.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, e.g. synthesis.episodes=5000",
        )
        sp.add_argument("--out", default=None, help="output directory (default: config out_dir)")

    sp = sub.add_parser("synth", help="train and gate the backup policy, write qtable.bin")
    add_common(sp)
    sp.set_defaults(func=commands.cmd_synth)

    sp = sub.add_parser("run", help="execute one episode and render its trajectory")
    add_common(sp)
    sp.add_argument("--seed", type=int, default=None, help="episode seed (default: run.seed)")
    sp.add_argument("--qtable", default=None, help="policy file (default: <out_dir>/qtable.bin)")
    sp.add_argument("--unmodified", action="store_true", help="run without shielding")
    sp.set_defaults(func=commands.cmd_run)

    sp = sub.add_parser("mc", help="run a batch; write CSV, record JSONL, and a summary figure")
    add_common(sp)
    sp.add_argument("--seed", type=int, default=None, help="master seed (default: run.seed)")
    sp.add_argument("--runs", type=int, default=None, help="episode count (default: n_runs)")
    sp.add_argument("--qtable", default=None, help="policy file (default: <out_dir>/qtable.bin)")
    sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sp.add_argument("--unmodified", action="store_true", help="run without shielding")
    sp.set_defaults(func=commands.cmd_montecarlo)

    sp = sub.add_parser("plot", help="re-render a saved run record as SVG")
    add_common(sp)
    sp.add_argument("record", help="path to a run record JSON")
    sp.add_argument("--svg", default=None, help="output path (default: record path with .svg)")
    sp.set_defaults(func=commands.cmd_plot)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except (ValueError, KeyError, SynthesisGateError, Infeasible) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    raise SystemExit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
