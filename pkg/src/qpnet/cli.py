"""Command-line front-end: ``qpnet <subcommand> --config <path> [--set key=value ...]``.

Exit codes: 0 success, 2 usage or configuration error, otherwise
``stage base + error class`` where the stage bases are 10 (synth-corpus),
20 (extract), 30 (train-vocoder), 40 (adapt), 50 (train-converter),
60 (convert), 70 (generate), 80 (evaluate) and the error classes are
1 missing input, 2 bad file format, 3 shape or architecture/plan mismatch,
4 invalid value, 5 other failure.
"""

import argparse
import logging
import sys

from . import pipeline
from .exceptions import FormatError, InputRangeError, QPNetError, ShapeError

STAGE_BASE = {stage: 10 * (i + 1) for i, stage in enumerate(pipeline.STAGES)}
EXIT_USAGE = 2


def error_class(exc):
    if isinstance(exc, FileNotFoundError):
        return 1
    if isinstance(exc, FormatError):
        return 2
    if isinstance(exc, ShapeError):
        return 3
    if isinstance(exc, InputRangeError):
        return 4
    return 5


def _parse_overrides(items):
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise pipeline.ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(prog="qpnet", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=list(pipeline.STAGES) + ["run", "show-config"],
                        help="stage to run; 'run' executes every stage in order")
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                        help="override a configuration key (repeatable)")
    parser.add_argument("--run-dir", help="shorthand for --set run_dir=PATH")
    parser.add_argument("--dump-plan", action="store_true",
                        help="generate: also write each utterance's dilation plan report")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _parse_overrides(args.overrides)
        if args.run_dir:
            overrides["run_dir"] = args.run_dir
        if args.config:
            cfg = pipeline.load_config(args.config, overrides)
        else:
            cfg = pipeline.make_config(overrides)
    except (pipeline.ConfigError, OSError) as exc:
        print(f"qpnet: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.subcommand == "show-config":
        sys.stdout.write(cfg.to_text())
        return 0
    stages = pipeline.STAGES if args.subcommand == "run" else (args.subcommand,)
    for stage in stages:
        try:
            kwargs = {"dump_plan": args.dump_plan} if stage == "generate" else {}
            outputs = pipeline.run_stage(cfg, stage, **kwargs)
        except pipeline.ConfigError as exc:
            print(f"qpnet {stage}: configuration error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (QPNetError, OSError, ValueError) as exc:
            code = STAGE_BASE[stage] + error_class(exc)
            print(f"qpnet {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
            return code
        print(f"{stage}: wrote {len(outputs)} file(s)")
    if args.subcommand == "run":
        pipeline.write_text(cfg.path("config.resolved"), cfg.to_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
