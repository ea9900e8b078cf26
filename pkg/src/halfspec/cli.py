"""Command-line front end: compress, decompress, emulate, evaluate, inspect,
synth, and summary-map dumps.

Exit codes: 0 success, 1 flag/validation error, 2 runtime error.  Diagnostics
go to standard error; data goes to files (inspect and summary print reports
to standard output).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import codec, evalmetrics, gridio, spectral, synthgen
from .select import SelectionConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HALFSPEC_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="halfspec",
                     description="Lossy compression and conditional emulation "
                                 "of gridded space-time fields")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker threads for per-frequency work")

    p = sub.add_parser("compress", help="compress a cube file into an archive")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ratio", type=float, default=10.0)
    p.add_argument("--variant", choices=["sequential", "distributed"],
                   default="sequential")
    p.add_argument("--M", type=int, default=50)
    p.add_argument("--J", type=int, default=8)
    p.add_argument("--dmin", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seed-strides", default="2,4",
                   help="lat,lon strides of the low-frequency seed grids")
    p.add_argument("--trace", help="write a selection trace log to this path")
    add_threads(p)

    p = sub.add_parser("decompress", help="reconstruct a cube from an archive")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["mean", "simulate"], default="mean")
    p.add_argument("--seed", type=int)
    add_threads(p)

    p = sub.add_parser("emulate", help="draw conditional realizations")
    p.add_argument("input")
    p.add_argument("outdir")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int)
    add_threads(p)

    p = sub.add_parser("evaluate", help="compare two cubes and write a report")
    p.add_argument("original")
    p.add_argument("decompressed")
    p.add_argument("outdir")
    p.add_argument("--contrast-cube",
                   help="cube used for the contrast maps (default: decompressed)")

    p = sub.add_parser("inspect", help="print archive header and budget report")
    p.add_argument("input")

    p = sub.add_parser("synth", help="generate a synthetic cube")
    p.add_argument("output")
    p.add_argument("--nlat", type=int, default=32)
    p.add_argument("--nlon", type=int, default=64)
    p.add_argument("--ntime", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", help="generator parameter file")
    add_threads(p)

    p = sub.add_parser("summary", help="dump summary maps of a cube")
    p.add_argument("input")
    p.add_argument("outdir")
    p.add_argument("--bandwidth", type=int, default=17)
    return parser


def _cmd_compress(args) -> int:
    try:
        strides = tuple(int(s) for s in args.seed_strides.split(","))
        if len(strides) != 2:
            raise ValueError
    except ValueError:
        print("error: --seed-strides must be two integers 'lat,lon'",
              file=sys.stderr)
        return 1
    try:
        config = SelectionConfig(ratio=args.ratio, M=args.M, J=args.J,
                                 d_min=args.dmin, seed_strides=strides,
                                 variant=args.variant)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _, cube = gridio.load_cube(args.input)
    trace: list[str] = []
    archive = codec.compress(cube, config, seed=args.seed,
                             threads=args.threads, trace=trace)
    archive.save(args.output)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("\n".join(trace) + "\n")
    print(f"wrote {args.output} ({archive.byte_size()} bytes)", file=sys.stderr)
    return 0


def _cmd_decompress(args) -> int:
    if args.mode == "simulate" and args.seed is None:
        print("error: simulate mode requires --seed", file=sys.stderr)
        return 1
    archive = codec.CompressedArchive.load(args.input)
    cube = codec.decompress(archive, mode=args.mode, seed=args.seed,
                            threads=args.threads)
    gridio.save_cube(cube.grid, cube, args.output)
    print(f"wrote {args.output}", file=sys.stderr)
    return 0


def _cmd_emulate(args) -> int:
    if args.seed is None:
        print("error: emulate requires --seed", file=sys.stderr)
        return 1
    if args.count < 1:
        print("error: --count must be positive", file=sys.stderr)
        return 1
    archive = codec.CompressedArchive.load(args.input)
    os.makedirs(args.outdir, exist_ok=True)
    for r, cube in enumerate(codec.emulate(archive, args.count, args.seed,
                                           args.threads)):
        path = os.path.join(args.outdir, f"realization_{r:03d}.cube")
        gridio.save_cube(cube.grid, cube, path)
    print(f"wrote {args.count} realizations to {args.outdir}", file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    grid, original = gridio.load_cube(args.original)
    _, decompressed = gridio.load_cube(args.decompressed)
    contrast_cube = None
    if args.contrast_cube:
        _, contrast_cube = gridio.load_cube(args.contrast_cube)
    report = evalmetrics.build_report(original, decompressed, contrast_cube)
    evalmetrics.emit_report(report, grid, args.outdir)
    print(f"rmspe all={report.rmspe_all:.6g}", file=sys.stderr)
    return 0


def _cmd_inspect(args) -> int:
    archive = codec.CompressedArchive.load(args.input)
    print(codec.inspect_report(archive))
    return 0


def _cmd_synth(args) -> int:
    if args.spec:
        spec = synthgen.read_spec_file(args.spec, n_lat=args.nlat,
                                       n_lon=args.nlon, T=args.ntime,
                                       seed=args.seed)
    else:
        spec = synthgen.default_spec(args.nlat, args.nlon, args.ntime,
                                     seed=args.seed)
    cube = synthgen.generate(spec, threads=args.threads)
    gridio.save_cube(cube.grid, cube, args.output)
    print(f"wrote {args.output}", file=sys.stderr)
    return 0


def _cmd_summary(args) -> int:
    grid, cube = gridio.load_cube(args.input)
    field = spectral.forward_dft_all(cube)
    kernel = spectral.daniell_kernel(cube.T, args.bandwidth)
    maps = spectral.summary_maps(field, kernel)
    spectral.save_summary_maps(maps, grid, args.outdir)
    print(f"wrote summary maps to {args.outdir}", file=sys.stderr)
    return 0


_COMMANDS = {
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "emulate": _cmd_emulate,
    "evaluate": _cmd_evaluate,
    "inspect": _cmd_inspect,
    "synth": _cmd_synth,
    "summary": _cmd_summary,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
