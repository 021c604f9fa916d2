"""Command-line front end.

Subcommands read a sectioned configuration file (see :mod:`.config`) and
write CSV outputs with JSON sidecars that embed the resolved configuration
and the build fingerprint.

Exit codes: 0 success, 2 configuration or input error, 3 fit failure,
4 numeric failure.
"""
import argparse
import hashlib
import logging
import sys
import warnings
from pathlib import Path

from .. import __version__
from ..errors import (
    ConfigError,
    FitFailure,
    InvalidArgumentError,
    InvalidGeometryError,
    InvalidModelError,
    MeshParseError,
    PPFredholmError,
)
from . import commands
from .config import load, parse, serialize

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = {
    "simulate": commands.cmd_simulate,
    "predict": commands.cmd_predict,
    "fit": commands.cmd_fit,
    "study": commands.cmd_study,
    "covariate-pipeline": commands.cmd_covariate_pipeline,
}


def build_fingerprint():
    """Package version plus a digest of the package sources."""
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return f"ppfredholm {__version__} ({h.hexdigest()[:12]})"


def build_parser():
    parser = argparse.ArgumentParser(prog="ppfredholm",
                                     description="Local intensity prediction for spatial point patterns.")
    parser.add_argument("--version", action="version", version=build_fingerprint())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration key (repeatable)")
        p.add_argument("--output", help="output path (overrides run.output)")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--threads", type=int, help="overrides run.threads")
        p.add_argument("--clamp", action="store_true", help="clamp negative predictions to zero")
        p.add_argument("--dump-config", action="store_true",
                       help="print the resolved configuration and exit")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _overrides(args):
    out = list(args.set)
    if args.output:
        out.append(f"run.output={args.output}")
    if args.seed is not None:
        out.append(f"run.seed={args.seed}")
    if args.threads is not None:
        out.append(f"run.threads={args.threads}")
    if args.clamp:
        out.append("run.clamp=true")
    return out


def exit_code(exc):
    if isinstance(exc, FitFailure):
        return EXIT_FIT
    if isinstance(exc, (ConfigError, InvalidArgumentError, InvalidGeometryError, InvalidModelError,
                        MeshParseError, OSError)):
        return EXIT_INPUT
    return EXIT_NUMERIC


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                        force=True)
    try:
        cfg = load(args.config, _overrides(args))
        if args.dump_config:
            sys.stdout.write(serialize(cfg))
            return EXIT_OK
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, build_fingerprint())
    except (PPFredholmError, OSError) as exc:
        detail = f"{exc.filename}: {exc.strerror}" if isinstance(exc, OSError) and exc.filename else exc
        print(f"ppfredholm {args.command}: error: {detail}", file=sys.stderr)
        if isinstance(exc, FitFailure) and exc.columns and exc.columns[0] not in str(exc):
            print(f"collinear columns: {', '.join(exc.columns)}", file=sys.stderr)
        return exit_code(exc)


__all__ = ["main", "build_fingerprint", "parse", "load", "serialize", "exit_code"]
