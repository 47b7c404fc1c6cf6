"""
Run configuration.

Defaults come from ``config.yaml``; environment variables override the file and
command-line flags override both.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import yaml

from src.arrowflow import __version__
from src.arrowflow.density import DENSITY_MODES, NORMALIZATIONS
from src.arrowflow.distmap import QUEUES
from src.arrowflow.errors import ConfigError
from src.arrowflow.field import VectorField2D
from src.arrowflow.integrate import IntegratorConfig, auto_length_gain
from src.arrowflow.placement import PRIORITIES, PlacementParams
from src.arrowflow.render import RenderStyle

logger = logging.getLogger(__name__)

PACKAGE_CONFIG = os.path.join(os.path.dirname(__file__), "config.yaml")

# (section, key) pairs whose RunConfig field name differs from the key
SECTION_KEYS = {
    ("density", "mode"): "density",
    ("density", "normalization"): "density_normalization",
    ("density", "path"): "density_path",
}

ENV_OVERRIDES = {
    "ARROWFLOW_DSEP": ("d_sep", float),
    "ARROWFLOW_RNG_SEED": ("rng_seed", int),
    "ARROWFLOW_THREADS": ("threads", int),
    "ARROWFLOW_LOG_LEVEL": ("log_level", str),
    "ARROWFLOW_OUT": ("out", str),
}

# fields that do not change any artifact and stay out of the config hash
RUNTIME_FIELDS = ("out", "threads", "log_level")


@dataclass(frozen=True)
class RunConfig:
    input: Optional[str] = None
    synthetic: Optional[str] = None
    d_sep: float = 8.0
    seed_ratio: float = 2.0
    rng_seed: int = 0
    priority: str = "length"
    backward_stage: bool = True
    queue: str = "heap"
    thickness: Optional[float] = None
    length_gain: Optional[float] = None
    max_aspect_ratio: float = 6.0
    step_h: Optional[float] = None
    substeps_per_dt: int = 8
    prefilter_sigma: float = 0.0
    density: str = "uniform"
    scale_max: float = 4.0
    density_normalization: str = "global"
    density_path: Optional[str] = None
    frames_per_step: int = 4
    size: tuple = (512, 512)
    background: Optional[str] = None
    fill_rgba: tuple = (25, 25, 25, 255)
    outline_rgba: Optional[tuple] = None
    fade_length: float = 1.0
    r_full: float = 3.0
    out: str = "out"
    threads: int = 0
    log_level: str = "INFO"

    def __post_init__(self):
        for name in ("size", "fill_rgba", "outline_rgba"):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))
        if not self.d_sep > 0:
            raise ConfigError(f"d_sep must be > 0, got {self.d_sep}")
        if not self.seed_ratio > 1:
            raise ConfigError(f"seed_ratio must be > 1, got {self.seed_ratio}")
        if self.scale_max < 1:
            raise ConfigError(f"scale_max must be >= 1, got {self.scale_max}")
        if self.prefilter_sigma < 0:
            raise ConfigError(f"prefilter_sigma must be >= 0, got {self.prefilter_sigma}")
        if self.density not in DENSITY_MODES:
            raise ConfigError(f"Unknown density mode {self.density!r}; expected one of {DENSITY_MODES}")
        if self.density == "file" and not self.density_path:
            raise ConfigError("Density mode 'file' needs a density path")
        if self.density_normalization not in NORMALIZATIONS:
            raise ConfigError(f"Unknown density normalization {self.density_normalization!r}")
        if self.priority not in PRIORITIES:
            raise ConfigError(f"Unknown priority {self.priority!r}; expected one of {PRIORITIES}")
        if self.queue not in QUEUES:
            raise ConfigError(f"Unknown queue {self.queue!r}; expected one of {QUEUES}")
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")
        if len(self.size) != 2:
            raise ConfigError(f"size must be (width, height), got {self.size}")

    @property
    def glyph_thickness(self) -> float:
        return self.thickness if self.thickness is not None else 0.5 * self.d_sep

    @property
    def buffer_margin(self) -> float:
        """Half the longest arrow, so arrows enter and leave the visible domain progressively."""
        return 0.5 * self.max_aspect_ratio * self.glyph_thickness

    def artifact_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in RUNTIME_FIELDS}

    def config_hash(self) -> str:
        canonical = json.dumps(self.artifact_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_placement_params(self, field: VectorField2D) -> PlacementParams:
        """``field`` is the prepared field; it resolves the automatic length gain."""
        thickness = self.glyph_thickness
        gain = self.length_gain if self.length_gain is not None else auto_length_gain(field, thickness)
        integrator = IntegratorConfig(
            step_h=self.step_h if self.step_h is not None else self.d_sep / 8.0,
            length_gain=gain,
            max_aspect_ratio=self.max_aspect_ratio,
            substeps_per_dt=self.substeps_per_dt,
        )
        return PlacementParams(
            d_sep=self.d_sep,
            integrator=integrator,
            seed_ratio=self.seed_ratio,
            rng_seed=self.rng_seed,
            thickness=thickness,
            priority=self.priority,
            backward_stage=self.backward_stage,
            queue=self.queue,
        )

    def to_style(self) -> RenderStyle:
        return RenderStyle(
            frames_per_step=self.frames_per_step,
            fill_rgba=tuple(self.fill_rgba),
            outline_rgba=tuple(self.outline_rgba) if self.outline_rgba else None,
            background_path=self.background,
            fade_length=self.fade_length,
            r_full=self.r_full,
            size=tuple(self.size),
        )

    def header(self) -> dict:
        """Metadata embedded in every artifact."""
        return {
            "tool_version": __version__,
            "config_hash": self.config_hash(),
            "prefilter_sigma": self.prefilter_sigma,
            "buffer_margin": self.buffer_margin,
            "density": self.density,
            "scale_max": self.scale_max,
            "density_normalization": self.density_normalization,
            "density_path": self.density_path or "-",
        }


def _read_yaml(paths) -> dict:
    for config_path in paths:
        try:
            with open(config_path) as file:
                config = yaml.safe_load(file) or {}
                logger.info(f"Successfully loaded config from: {config_path}")
                return config
        except FileNotFoundError:
            logger.debug(f"Config file not found at: {config_path}")
            continue
        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML configuration from {config_path}: {e}")
            continue
    logger.warning("No config file found, using built-in defaults")
    return {}


def flatten(config: dict) -> dict:
    """Section mapping -> RunConfig keyword arguments."""
    known = {f.name for f in fields(RunConfig)}
    flat = {}
    for section, values in config.items():
        if not isinstance(values, dict):
            raise ConfigError(f"Config section {section!r} must be a mapping")
        for key, value in values.items():
            name = SECTION_KEYS.get((section, key), key)
            if name not in known:
                raise ConfigError(f"Unknown config key {section}.{key}")
            flat[name] = value
    return flat


def env_overrides() -> dict:
    out = {}
    for var, (name, cast) in ENV_OVERRIDES.items():
        raw = os.environ.get(var)
        if raw is None or raw == "":
            continue
        try:
            out[name] = cast(raw)
        except ValueError as e:
            raise ConfigError(f"Invalid value for {var}: {raw!r}") from e
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """
    Args:
        path: explicit config file, tried before the packaged and working-directory ones
        overrides: RunConfig fields from the command line; None values are ignored
    """
    if path is not None and not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    candidates = ([path] if path else []) + [PACKAGE_CONFIG, "config.yaml"]
    values = flatten(_read_yaml(candidates))
    values.update(env_overrides())
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e!s}") from e
    logger.info(f"Loaded configuration - d_sep: {config.d_sep}, density: {config.density}, rng_seed: {config.rng_seed}, hash: {config.config_hash()[:19]}")
    return config


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
