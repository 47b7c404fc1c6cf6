import logging
import os
from pathlib import Path
from typing import Optional

import yaml

from src.arrowflow import __version__
from src.arrowflow.density import make_density_source
from src.arrowflow.errors import ChecksumMismatch, ConfigError, FormatError, InvariantViolation
from src.arrowflow.field import GridSpec, VectorField2D, make_synthetic, prepare_field
from src.arrowflow.formats import bytes_checksum, encode_vf2d, read_arrow_set, read_vf2d, write_arrow_set, write_vf2d
from src.arrowflow.metrics import build_report
from src.arrowflow.placement import RNG_ALGORITHM, ArrowSet, PlacementContext, placement_raster, place_moving_arrows
from src.arrowflow.processor.processor import Processor
from src.arrowflow.render import render_animation
from src.arrowflow.run_config import RunConfig

logger = logging.getLogger(__name__)

ARROWS_NAME = "arrows.txt"
MANIFEST_NAME = "manifest.yaml"
FRAMES_DIR = "frames"
REPORT_NAME = "audit.csv"

DEFAULT_SYNTH_GRID = GridSpec(64, 64, 40)


def synthesize(kind: str, grid: GridSpec = DEFAULT_SYNTH_GRID, params: Optional[dict] = None) -> VectorField2D:
    """Synthetic field with its features centred in the grid unless ``center`` is given."""
    params = dict(params or {})
    params.setdefault("center", (grid.x0 + 0.5 * (grid.nx - 1) * grid.dx, grid.y0 + 0.5 * (grid.ny - 1) * grid.dy))
    if kind == "dipole":
        params.setdefault("separation", 0.25 * (grid.nx - 1) * grid.dx)
    return make_synthetic(kind, grid, **params)


class PipelineProcessor(Processor):
    """
    Runs the synth, generate, render and audit commands.

    Every artifact written carries the tool version, the config hash and the
    checksum of the input field; render and audit refuse a field whose checksum
    differs from the one recorded at generation.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.out)
        logger.info(f"Initialized pipeline processor: {self.describe()}")

    def describe(self):
        return {"tool_version": __version__, "config_hash": self.config.config_hash(), "out": str(self.out)}

    def check_inputs(self):
        if not self.config.input and not self.config.synthetic:
            raise ConfigError("Either an input field (--input) or a synthetic kind (--synthetic) is required")
        if self.config.input and not os.path.exists(self.config.input):
            raise FormatError(f"Input field not found: {self.config.input}")

    def synth(self, kind: str, grid: GridSpec, params: dict, out_path) -> dict:
        field = synthesize(kind, grid, params)
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        checksum = write_vf2d(out_path, field)
        return {"status": "success", "path": str(out_path), "checksum": checksum, "shape": [field.nt, field.ny, field.nx]}

    def load_field(self):
        """Returns (raw field, checksum, source description)."""
        self.check_inputs()
        if self.config.input:
            field, checksum = read_vf2d(self.config.input)
            return field, checksum, self.config.input
        field = synthesize(self.config.synthetic)
        return field, bytes_checksum(encode_vf2d(field)), f"synthetic:{self.config.synthetic}"

    def _context(self, field: VectorField2D, arrow_set: Optional[ArrowSet] = None) -> PlacementContext:
        if arrow_set is None:
            config = self.config
            params = config.to_placement_params(field)
            mode, scale_max, normalization, path = config.density, config.scale_max, config.density_normalization, config.density_path
        else:
            header = arrow_set.header
            params = arrow_set.params
            mode = header.get("density", "uniform")
            scale_max = float(header.get("scale_max", 1.0))
            normalization = header.get("density_normalization", "global")
            path = header.get("density_path", "-")
            path = None if path in ("-", "None", None) else path
        raster = placement_raster(field, params)
        source = make_density_source(mode, field, raster, scale_max, normalization, path)
        return PlacementContext.build(field, source, params)

    def generate(self) -> dict:
        raw, checksum, source = self.load_field()
        config = self.config
        field = prepare_field(raw, config.prefilter_sigma, config.buffer_margin)
        ctx = self._context(field)
        arrow_set = place_moving_arrows(field, ctx.density_source, ctx.params)
        arrow_set.header.update(config.header())
        arrow_set.header.update(field_checksum=checksum, input=source, rng_algorithm=RNG_ALGORITHM)

        self.out.mkdir(parents=True, exist_ok=True)
        write_arrow_set(self.out / ARROWS_NAME, arrow_set)
        manifest = {
            "tool_version": __version__,
            "config_hash": config.config_hash(),
            "rng_algorithm": RNG_ALGORITHM,
            "input": source,
            "field_checksum": checksum,
            "config": config.artifact_dict(),
            "resolved": {
                "length_gain": ctx.params.integrator.length_gain,
                "step_h": ctx.params.integrator.step_h,
                "thickness": ctx.params.glyph_thickness,
                "buffer_margin": config.buffer_margin,
                "raster": [ctx.raster.width, ctx.raster.height, ctx.raster.pixel_size],
            },
            "arrows": len(arrow_set.arrows),
            "steps": arrow_set.n_steps,
        }
        with open(self.out / MANIFEST_NAME, "w") as fh:
            yaml.safe_dump(manifest, fh, sort_keys=True)
        return {"status": "success", "arrows": len(arrow_set.arrows), "steps": arrow_set.n_steps, "path": str(self.out / ARROWS_NAME)}

    def load_placement(self, arrows_path=None):
        """Re-open an ArrowSet with the field it was generated from; returns (arrow_set, context)."""
        arrow_set = read_arrow_set(arrows_path or self.out / ARROWS_NAME)
        raw, checksum, _ = self.load_field()
        expected = arrow_set.header.get("field_checksum")
        if expected != checksum:
            raise ChecksumMismatch(f"Field checksum {checksum} does not match the one recorded in the arrow set ({expected})")
        version = arrow_set.header.get("tool_version")
        if version != __version__:
            logger.warning(f"Arrow set was written by version {version}, running {__version__}")
        header = arrow_set.header
        field = prepare_field(raw, float(header.get("prefilter_sigma", 0.0)), float(header.get("buffer_margin", 0.0)))
        if field.nt != arrow_set.n_steps:
            raise FormatError(f"Arrow set has {arrow_set.n_steps} steps, field has {field.nt}")
        ctx = self._context(field, arrow_set)
        if ctx.raster != arrow_set.raster:
            raise FormatError(f"Arrow set raster {arrow_set.raster} does not match the field's placement raster {ctx.raster}")
        return arrow_set, ctx

    def render(self, arrows_path=None) -> dict:
        arrow_set, ctx = self.load_placement(arrows_path)
        header = {**arrow_set.header, "render_config_hash": self.config.config_hash()}
        paths = render_animation(arrow_set, ctx, self.config.to_style(), self.out / FRAMES_DIR, self.config.threads or None, header)
        return {"status": "success", "frames": len(paths), "path": str(self.out / FRAMES_DIR)}

    def audit(self, arrows_path=None, oracle: bool = True) -> dict:
        arrow_set, ctx = self.load_placement(arrows_path)
        report = build_report(ctx, arrow_set, oracle)
        report.summary.update(tool_version=__version__, config_hash=arrow_set.header.get("config_hash"))
        self.out.mkdir(parents=True, exist_ok=True)
        report.write_csv(self.out / REPORT_NAME)
        if not report.passed:
            raise InvariantViolation(
                f"Audit failed: separation_ok={report.separation_ok} (min {report.summary['min_separation']}), coverage_ok={report.coverage_ok}"
            )
        return {"status": "success", "steps": len(report.rows), "path": str(self.out / REPORT_NAME), **report.summary}
