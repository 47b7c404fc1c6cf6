import argparse
import json
import logging
import math
import os
import sys

import yaml

try:
    from src.arrowflow import __version__
    from src.arrowflow.errors import ArrowflowError, ConfigError
    from src.arrowflow.field import SYNTHETIC_KINDS, GridSpec
    from src.arrowflow.placement import PRIORITIES
    from src.arrowflow.processor.pipeline_processor import PipelineProcessor
    from src.arrowflow.run_config import RunConfig, load_config
except ImportError:
    # Fallback for when running the file directly
    sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..")))
    from src.arrowflow import __version__
    from src.arrowflow.errors import ArrowflowError, ConfigError
    from src.arrowflow.field import SYNTHETIC_KINDS, GridSpec
    from src.arrowflow.placement import PRIORITIES
    from src.arrowflow.processor.pipeline_processor import PipelineProcessor
    from src.arrowflow.run_config import RunConfig, load_config

logger = logging.getLogger(__name__)

# Configure logging
logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")


def parse_size(text: str):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"Size must look like WIDTHxHEIGHT, got {text!r}") from e
    return (w, h)


def parse_grid(text: str) -> GridSpec:
    parts = text.lower().split("x")
    try:
        nx, ny = int(parts[0]), int(parts[1])
        nt = int(parts[2]) if len(parts) > 2 else 1
    except (IndexError, ValueError) as e:
        raise ConfigError(f"Grid must look like NXxNYxNT, got {text!r}") from e
    return GridSpec(nx, ny, nt)


def parse_param(text: str):
    """``key=value``; values are YAML scalars or lists, ``a,b`` is a pair of numbers."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"Parameter must look like key=value, got {text!r}")
    if "," in raw and not raw.startswith("["):
        try:
            return key, tuple(float(v) for v in raw.split(","))
        except ValueError as e:
            raise ConfigError(f"Invalid numeric list for {key}: {raw!r}") from e
    value = yaml.safe_load(raw)
    if isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, list):
        value = tuple(float(v) for v in value)
    return key, value


def parse_density(text: str):
    """Returns (mode, path) from ``uniform``, ``jacobian`` or ``file=PATH``."""
    if text.startswith("file="):
        return "file", text[len("file=") :]
    if text in ("uniform", "jacobian"):
        return text, None
    raise ConfigError(f"Density must be uniform, jacobian or file=PATH, got {text!r}")


def configure_logging(verbose: bool = False) -> None:
    level = os.environ.get("ARROWFLOW_LOG_LEVEL") or ("DEBUG" if verbose else None)
    if level:
        logging.getLogger().setLevel(level.upper())


def json_safe(value):
    """Replace non-finite floats, which strict JSON cannot carry, by their names."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def _run(description, fn, *args, **kwargs) -> dict:
    try:
        return {**fn(*args, **kwargs), "exit_code": 0}
    except ArrowflowError as e:
        logger.error(f"Error during {description}: {e!s}")
        return {"status": "error", "message": f"{description} failed: {e!s}", "exit_code": e.exit_code}
    except Exception as e:
        logger.error(f"Unexpected error during {description}: {e!s}")
        return {"status": "error", "message": f"{description} failed: {e!s}", "exit_code": 1}


def cmd_synth(kind, grid, params, out, config: RunConfig = None):
    """Write a synthetic field as a VF2D file"""
    return _run("synth", lambda: PipelineProcessor(config or RunConfig()).synth(kind, grid, params or {}, out))


def cmd_generate(config: RunConfig):
    """Place moving arrows and write the ArrowSet plus its run manifest"""
    return _run("generate", lambda: PipelineProcessor(config).generate())


def cmd_render(config: RunConfig, arrows=None):
    """Render the frames of a generated ArrowSet"""
    return _run("render", lambda: PipelineProcessor(config).render(arrows))


def cmd_audit(config: RunConfig, arrows=None, oracle=True):
    """Audit a generated ArrowSet; exits nonzero when separation or coverage fail"""
    return _run("audit", lambda: PipelineProcessor(config).audit(arrows, oracle))


FUNCTION_MAPPING = {
    "synth": cmd_synth,
    "generate": cmd_generate,
    "render": cmd_render,
    "audit": cmd_audit,
}


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--input", help="VF2D field file")
    source.add_argument("--synthetic", choices=SYNTHETIC_KINDS, help="use a synthetic field on the default 64x64x40 grid")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--dsep", type=float, dest="d_sep")
    parser.add_argument("--seed-ratio", type=float)
    parser.add_argument("--scale-max", type=float)
    parser.add_argument("--density", help="uniform | jacobian | file=PATH")
    parser.add_argument("--density-normalization", choices=("global", "per_step"))
    parser.add_argument("--prefilter-sigma", type=float)
    parser.add_argument("--frames-per-step", type=int)
    parser.add_argument("--rng-seed", type=int)
    parser.add_argument("--priority", choices=PRIORITIES)
    parser.add_argument("--no-backward-stage", action="store_const", const=False, dest="backward_stage")
    parser.add_argument("--background", help="background PNG, scaled to the image size")
    parser.add_argument("--size", help="image size WIDTHxHEIGHT")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arrowflow", description="Animated, density-adaptive moving arrows for 2D unsteady vector fields.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic VF2D field")
    synth.add_argument("--kind", required=True, choices=SYNTHETIC_KINDS)
    synth.add_argument("--grid", default="64x64x40", help="NXxNYxNT")
    synth.add_argument("--param", action="append", default=[], help="key=value, repeatable")
    synth.add_argument("--out", required=True, help="output VF2D file")
    synth.add_argument("--verbose", action="store_true")

    generate = sub.add_parser("generate", help="place moving arrows")
    _add_run_arguments(generate)

    render = sub.add_parser("render", help="render frames of an arrow set")
    _add_run_arguments(render)
    render.add_argument("--arrows", help="ArrowSet file; defaults to OUT/arrows.txt")

    audit = sub.add_parser("audit", help="audit an arrow set")
    _add_run_arguments(audit)
    audit.add_argument("--arrows", help="ArrowSet file; defaults to OUT/arrows.txt")
    audit.add_argument("--no-oracle", action="store_false", dest="oracle", help="replay the incremental map instead of the from-scratch solver")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        name: getattr(args, name, None)
        for name in (
            "input",
            "synthetic",
            "out",
            "d_sep",
            "seed_ratio",
            "scale_max",
            "density_normalization",
            "prefilter_sigma",
            "frames_per_step",
            "rng_seed",
            "priority",
            "backward_stage",
            "background",
            "threads",
        )
    }
    if args.density:
        overrides["density"], overrides["density_path"] = parse_density(args.density)
    if args.size:
        overrides["size"] = parse_size(args.size)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    """Main entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose)

    if args.command == "synth":
        try:
            grid = parse_grid(args.grid)
            params = dict(parse_param(p) for p in args.param)
        except ConfigError as e:
            logger.error(f"Error during synth: {e!s}")
            return e.exit_code
        result = FUNCTION_MAPPING["synth"](args.kind, grid, params, args.out)
    else:
        try:
            config = config_from_args(args)
        except ConfigError as e:
            logger.error(f"Invalid configuration: {e!s}")
            return e.exit_code
        extra = {}
        if args.command in ("render", "audit"):
            extra["arrows"] = args.arrows
        if args.command == "audit":
            extra["oracle"] = args.oracle
        result = FUNCTION_MAPPING[args.command](config, **extra)

    print(json.dumps(json_safe(result), default=str, allow_nan=False))
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
