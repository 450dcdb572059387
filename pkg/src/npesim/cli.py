"""Command-line entry point: ``npesim <command> [options]``.

Exit status is 0 on success, 1 for invalid input (bad kernel name, malformed
spec or cost table) and 2 for I/O failures (missing or unreadable files).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .bench import (
    OpCountSheet,
    cmd_hebbian_sweep,
    cmd_kernel_energy,
    cmd_run,
    cmd_sd_frame_energy,
    cmd_synop_table,
)
from .energy import DEFAULT_TABLE, load_energy_table
from .errors import NpeError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage mistakes are invalid input, not I/O failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cost-table", type=Path, help="energy cost overrides (KEY = value per line)")
    p.add_argument("--seed", type=int, default=None, help="random seed (unsigned 64-bit)")
    p.add_argument("--format", choices=("json", "csv"), default="csv", help="report format")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="npesim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("kernel-energy", help="per-iteration energy of a micro-kernel")
    p.add_argument("kernel", help="built-in kernel name or synop:<mode>:<events>")
    p.add_argument("--event-rate", type=float, default=1.0, help="probability that EVC emits an event")
    _common(p)

    p = sub.add_parser("synop-table", help="energy per synaptic operation for all weight modes")
    _common(p)

    p = sub.add_parser("sd-frame-energy", help="sigma-delta network energy per frame from operation counts")
    p.add_argument("counts", nargs="?", type=Path, help="op-count sheet (JSON); bundled networks when omitted")
    _common(p)

    p = sub.add_parser("hebbian-sweep", help="accuracy and energy per step against network size")
    p.add_argument("--m", type=int, nargs="+", default=[10, 25, 50, 100, 200], help="network sizes")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--dataset", type=Path, help="digits CSV (64 grey levels 0-16 and a label per row)")
    p.add_argument("--split", type=int, nargs=3, default=[600, 300, 400], metavar=("TRAIN", "LABEL", "TEST"))
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.add_argument("--plot", type=Path, help="write accuracy-vs-energy figure (.svg, .png or .pdf)")
    _common(p)

    p = sub.add_parser("run", help="simulate a network spec and report its energy ledger")
    p.add_argument("spec", type=Path, help="network spec (JSON)")
    p.add_argument("input", nargs="?", type=Path, help="input spikes, frames or dataset")
    p.add_argument("--split", type=int, nargs=3, default=[600, 300, 400], metavar=("TRAIN", "LABEL", "TEST"))
    _common(p)
    return parser


def _table(path: Path | None):
    if path is None:
        return DEFAULT_TABLE
    if not path.exists():
        raise FileNotFoundError(f"cost table not found: {path}")
    return load_energy_table(path.read_text())


def _dispatch(args) -> str:
    table = _table(args.cost_table)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    if args.command == "kernel-energy":
        rep = cmd_kernel_energy(args.kernel, args.event_rate, table)
    elif args.command == "synop-table":
        rep = cmd_synop_table(table)
    elif args.command == "sd-frame-energy":
        sheet = OpCountSheet.load(args.counts) if args.counts else None
        rep = cmd_sd_frame_energy(sheet, table)
    elif args.command == "hebbian-sweep":
        from .sim.data import load_dataset

        data = load_dataset(args.dataset)
        seeds = args.seeds if args.seed is None else [args.seed]
        rep = cmd_hebbian_sweep(args.m, seeds, data, table=table, sizes=tuple(args.split), workers=args.workers,
                                plot=args.plot, dataset_id=args.dataset.name if args.dataset else "builtin")
    else:
        rep = cmd_run(args.spec, args.input, table, args.seed, tuple(args.split))
    return rep.render(args.format)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = _dispatch(args)
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"npesim: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NpeError, ValueError, KeyError) as exc:
        print(f"npesim: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"npesim: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
