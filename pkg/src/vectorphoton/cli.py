"""Command line entry point: ``vectorphoton {run,validate,compare,render}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error,
3 oracle comparison failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import load_config, preset_names, validate_config, validate_scene
from .errors import ConfigurationError, StageError, VectorPhotonError
from .pipeline import compare_to_oracle, render_run, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_COMPARE = 0, 1, 2, 3


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vectorphoton", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="simulate a scene and write all outputs")
    run.add_argument("--config", required=True, help=f"YAML file or preset name ({', '.join(preset_names())})")
    run.add_argument("--out", help="output directory (default: config 'output' or runs/<name>)")
    run.add_argument("--seed", type=_u64, help="master RNG seed, overrides the config")
    run.add_argument("--regions", type=_positive, help="region size in pixels, overrides the config")
    run.add_argument("--no-sampling", action="store_true", help="use noiseless mean images")
    run.add_argument("--jobs", type=_positive, default=1, help="threads for image acquisition")
    run.add_argument("--compare", action="store_true", help="run the oracle comparison afterwards")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)

    cmp_ = sub.add_parser("compare", help="compare a finished run with the noiseless oracle")
    cmp_.add_argument("--out", required=True, help="run directory")

    ren = sub.add_parser("render", help="re-render pattern and verdict images of a run")
    ren.add_argument("--out", required=True, help="run directory")
    ren.add_argument("--stride", type=_positive, help="draw every n-th ellipse")
    ren.add_argument("--scale", type=_positive, help="pixel upscaling of the raster")
    return parser


def _err(msg):
    print(msg, file=sys.stderr)


def cmd_validate(args) -> int:
    diags = validate_config(args.config)
    for d in diags:
        _err(str(d))
    if diags:
        return EXIT_CONFIG
    print(f"{args.config}: ok")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, region_px=args.regions)
    except (ConfigurationError, OSError, ValueError) as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    diags = validate_scene(cfg)
    if diags:
        for d in diags:
            _err(str(d))
        return EXIT_CONFIG
    try:
        manifest = run_pipeline(cfg, args.out, sample=not args.no_sampling, jobs=args.jobs)
    except StageError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"wrote {len(manifest.files)} files to {manifest.run_dir}")
    for stage, seconds in manifest.timings.items():
        print(f"  {stage:<14s}{seconds:8.3f} s")
    if args.compare:
        report = compare_to_oracle(manifest.run_dir)
        print(report.summary())
        return EXIT_OK if report.passed else EXIT_COMPARE
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        report = compare_to_oracle(args.out)
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_COMPARE


def cmd_render(args) -> int:
    try:
        written = render_run(args.out, stride=args.stride, scale=args.scale)
    except (VectorPhotonError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    for path in written:
        print(Path(path))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "compare": cmd_compare, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except VectorPhotonError as exc:
        _err(f"error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
