"""
Density maps: the local zoom factor in [1, scale_max] that scales arrow spacing.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from src.arrowflow.distmap import RasterSpec
from src.arrowflow.errors import ConfigError, FormatError
from src.arrowflow.field import VectorField2D

logger = logging.getLogger(__name__)

DENSITY_MODES = ("uniform", "jacobian", "file")
NORMALIZATIONS = ("global", "per_step")
RANGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DensityMap:
    values: np.ndarray
    raster: RasterSpec
    scale_max: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.raster.shape:
            raise ConfigError(f"Density values of shape {values.shape} do not match raster {self.raster.shape}")
        if self.scale_max < 1:
            raise ConfigError(f"scale_max must be >= 1, got {self.scale_max}")
        if values.min() < 1.0 - RANGE_TOL or values.max() > self.scale_max + RANGE_TOL:
            raise ConfigError(f"Density values must lie in [1, {self.scale_max}]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def value_at(self, x: float, y: float) -> float:
        ix, iy = self.raster.pixel_of(x, y)
        return float(self.values[iy, ix])


def uniform_density(raster: RasterSpec, scale_max: float = 1.0) -> DensityMap:
    return DensityMap(np.ones(raster.shape), raster, scale_max)


def jacobian_frobenius(field: VectorField2D, step: int) -> np.ndarray:
    """
    Frobenius norm of the velocity Jacobian on the field grid.

    Central differences inside, one-sided differences on the boundary.
    """
    vx = field.data[step, :, :, 0]
    vy = field.data[step, :, :, 1]
    dvx_dy, dvx_dx = np.gradient(vx, field.dy, field.dx)
    dvy_dy, dvy_dx = np.gradient(vy, field.dy, field.dx)
    return np.sqrt(dvx_dx**2 + dvx_dy**2 + dvy_dx**2 + dvy_dy**2)


def resample_to_raster(grid_values: np.ndarray, x0: float, y0: float, dx: float, dy: float, raster: RasterSpec) -> np.ndarray:
    """Bilinear resampling of node values onto raster pixel centres (edges clamped)."""
    X, Y = raster.pixel_centers()
    coords = np.array([(Y - y0) / dy, (X - x0) / dx])
    return ndimage.map_coordinates(grid_values, coords, order=1, mode="nearest")


def normalize(raw: np.ndarray, scale_max: float, lo: Optional[float] = None, hi: Optional[float] = None) -> np.ndarray:
    """Affine map lo -> 1, hi -> scale_max; a constant input maps to all ones."""
    lo = float(raw.min()) if lo is None else lo
    hi = float(raw.max()) if hi is None else hi
    if hi - lo <= 1e-9 * max(abs(hi), 1e-300):
        return np.ones_like(raw)
    out = 1.0 + (raw - lo) / (hi - lo) * (scale_max - 1.0)
    return np.clip(out, 1.0, scale_max)


def jacobian_density(
    field: VectorField2D,
    step: int,
    scale_max: float,
    raster: RasterSpec,
    bounds: Optional[tuple] = None,
) -> DensityMap:
    """
    Density from the Jacobian Frobenius norm at one step.

    ``bounds`` = (lo, hi) of the raw values to normalise against; per-step bounds when omitted.
    """
    if scale_max < 1:
        raise ConfigError(f"scale_max must be >= 1, got {scale_max}")
    raw = resample_to_raster(jacobian_frobenius(field, step), field.x0, field.y0, field.dx, field.dy, raster)
    lo, hi = bounds if bounds is not None else (None, None)
    return DensityMap(normalize(raw, scale_max, lo, hi), raster, scale_max)


def load_density(path, scale_max: float, raster: Optional[RasterSpec] = None) -> DensityMap:
    """
    Read a DM2D density file and clamp it into [1, scale_max].

    Without ``raster`` the file's own grid is used and must have square cells.
    """
    from src.arrowflow.formats import read_dm2d

    grid = read_dm2d(path)
    values = np.clip(grid.values, 1.0, scale_max)
    if raster is None:
        if not np.isclose(grid.dx, grid.dy):
            raise FormatError(f"Density file {path} has non-square cells; a target raster is required")
        raster = RasterSpec(grid.values.shape[1], grid.values.shape[0], grid.x0, grid.y0, grid.dx)
        return DensityMap(values, raster, scale_max)
    # pixel centres of the file grid sit half a cell in from its origin
    resampled = resample_to_raster(values, grid.x0 + 0.5 * grid.dx, grid.y0 + 0.5 * grid.dy, grid.dx, grid.dy, raster)
    return DensityMap(np.clip(resampled, 1.0, scale_max), raster, scale_max)


def save_density(density: DensityMap, path) -> None:
    from src.arrowflow.formats import write_dm2d

    r = density.raster
    write_dm2d(path, density.values, r.x0, r.y0, r.pixel_size, r.pixel_size)


class DensitySource:
    """Supplies the density map of each time step."""

    mode = "uniform"

    def __init__(self, raster: RasterSpec, scale_max: float):
        self.raster = raster
        self.scale_max = scale_max

    def at_step(self, step: int) -> DensityMap:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"density": self.mode, "scale_max": self.scale_max}


class UniformDensitySource(DensitySource):
    mode = "uniform"

    def __init__(self, raster: RasterSpec):
        super().__init__(raster, 1.0)
        self._map = uniform_density(raster)

    def at_step(self, step: int) -> DensityMap:
        return self._map


class StaticDensitySource(DensitySource):
    mode = "file"

    def __init__(self, density: DensityMap, path: str = ""):
        super().__init__(density.raster, density.scale_max)
        self._map = density
        self.path = path

    def at_step(self, step: int) -> DensityMap:
        return self._map

    def describe(self) -> dict:
        return {**super().describe(), "density_path": self.path}


class JacobianDensitySource(DensitySource):
    """Jacobian-norm density, recomputed per step and cached."""

    mode = "jacobian"

    def __init__(self, field: VectorField2D, raster: RasterSpec, scale_max: float, normalization: str = "global"):
        if normalization not in NORMALIZATIONS:
            raise ConfigError(f"Unknown density normalization {normalization!r}; expected one of {NORMALIZATIONS}")
        super().__init__(raster, scale_max)
        self.field = field
        self.normalization = normalization
        self._cache = {}
        self._bounds = None

    def _global_bounds(self):
        if self._bounds is None:
            lo, hi = np.inf, -np.inf
            for step in range(self.field.nt):
                raw = resample_to_raster(jacobian_frobenius(self.field, step), self.field.x0, self.field.y0, self.field.dx, self.field.dy, self.raster)
                lo = min(lo, float(raw.min()))
                hi = max(hi, float(raw.max()))
            self._bounds = (lo, hi)
            logger.info(f"Global Jacobian-norm range over {self.field.nt} steps: [{lo:.6g}, {hi:.6g}]")
        return self._bounds

    def at_step(self, step: int) -> DensityMap:
        step = min(max(step, 0), self.field.nt - 1)
        if step not in self._cache:
            bounds = self._global_bounds() if self.normalization == "global" else None
            self._cache[step] = jacobian_density(self.field, step, self.scale_max, self.raster, bounds)
        return self._cache[step]

    def describe(self) -> dict:
        return {**super().describe(), "density_normalization": self.normalization}


def make_density_source(
    mode: str,
    field: VectorField2D,
    raster: RasterSpec,
    scale_max: float = 4.0,
    normalization: str = "global",
    path: Optional[str] = None,
) -> DensitySource:
    if mode == "uniform":
        return UniformDensitySource(raster)
    if mode == "jacobian":
        return JacobianDensitySource(field, raster, scale_max, normalization)
    if mode == "file":
        if not path:
            raise ConfigError("Density mode 'file' needs a path")
        return StaticDensitySource(load_density(path, scale_max, raster), path)
    raise ConfigError(f"Unknown density mode {mode!r}; expected one of {DENSITY_MODES}")
