"""
Discrete 2D time-dependent vector fields.

A field is an ``nt x ny x nx`` grid of ``(vx, vy)`` samples. It is reconstructed
bilinearly in space and linearly in time; single-slice fields are steady.
"""

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy import ndimage

from src.arrowflow.errors import ConfigError, FieldError, OutOfDomain

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("constant", "rigid_rotation", "source", "sink", "dipole", "translating_vortex", "shear")


@dataclass(frozen=True)
class DomainRect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise FieldError(f"Degenerate domain rectangle: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, other: "DomainRect", tol: float = 1e-9) -> bool:
        return (
            other.xmin >= self.xmin - tol
            and other.ymin >= self.ymin - tol
            and other.xmax <= self.xmax + tol
            and other.ymax <= self.ymax + tol
        )


@dataclass(frozen=True)
class GridSpec:
    """Grid layout used by the synthetic generators."""

    nx: int
    ny: int
    nt: int = 1
    x0: float = 0.0
    y0: float = 0.0
    dx: float = 1.0
    dy: float = 1.0
    t0: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2 or self.nt < 1:
            raise ConfigError(f"Grid needs nx, ny >= 2 and nt >= 1, got {self.nx}x{self.ny}x{self.nt}")
        if self.dx <= 0 or self.dy <= 0 or self.dt <= 0:
            raise ConfigError("Grid spacings dx, dy, dt must be positive")


@dataclass(frozen=True, eq=False)
class VectorField2D:
    """
    Immutable gridded velocity field.

    Args:
        data: array of shape (nt, ny, nx, 2), rows ordered by increasing y
        x0, y0: position of node (0, 0)
        dx, dy: node spacing
        t0, dt: time of slice 0 and slice spacing
        visible_rect: the domain shown to the user; defaults to the full grid rectangle
    """

    data: np.ndarray
    x0: float = 0.0
    y0: float = 0.0
    dx: float = 1.0
    dy: float = 1.0
    t0: float = 0.0
    dt: float = 1.0
    visible_rect: Optional[DomainRect] = dc_field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[3] != 2:
            raise FieldError(f"Field data must have shape (nt, ny, nx, 2), got {data.shape}")
        nt, ny, nx, _ = data.shape
        if nx < 2 or ny < 2 or nt < 1:
            raise FieldError(f"Field needs nx, ny >= 2 and nt >= 1, got {nx}x{ny}x{nt}")
        if self.dx <= 0 or self.dy <= 0 or self.dt <= 0:
            raise FieldError("Field spacings dx, dy, dt must be positive")
        if not np.all(np.isfinite(data)):
            raise FieldError("Field contains non-finite velocity components")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.visible_rect is None:
            object.__setattr__(self, "visible_rect", self.rect)
        elif not self.rect.contains(self.visible_rect):
            raise FieldError(f"Visible rectangle {self.visible_rect} exceeds the field domain {self.rect}")

    @property
    def nt(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nx(self) -> int:
        return self.data.shape[2]

    @property
    def rect(self) -> DomainRect:
        return DomainRect(self.x0, self.y0, self.x0 + (self.nx - 1) * self.dx, self.y0 + (self.ny - 1) * self.dy)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.nt - 1) * self.dt

    def step_time(self, step: float) -> float:
        """Field time of a (possibly fractional) animation step."""
        return self.t0 + step * self.dt

    def sample_many(self, points, t: float):
        """
        Vectorised sampler.

        Returns:
            (velocities, inside): velocities has shape (N, 2); rows whose point lies
            outside the domain are zero and flagged False in ``inside``.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        fx = (pts[:, 0] - self.x0) / self.dx
        fy = (pts[:, 1] - self.y0) / self.dy
        inside = np.isfinite(fx) & np.isfinite(fy) & (fx >= 0.0) & (fx <= self.nx - 1) & (fy >= 0.0) & (fy <= self.ny - 1)
        fx = np.where(inside, fx, 0.0)
        fy = np.where(inside, fy, 0.0)

        i = np.minimum(np.floor(fx).astype(np.intp), self.nx - 2)
        j = np.minimum(np.floor(fy).astype(np.intp), self.ny - 2)
        ax = (fx - i)[:, None]
        ay = (fy - j)[:, None]

        k, w = self._time_bracket(t)
        vel = self._bilinear(self.data[k], i, j, ax, ay)
        if w > 0.0:
            vel = vel * (1.0 - w) + self._bilinear(self.data[k + 1], i, j, ax, ay) * w
        vel[~inside] = 0.0
        return vel, inside

    def _time_bracket(self, t: float):
        if self.nt == 1:
            return 0, 0.0
        s = (t - self.t0) / self.dt
        s = min(max(s, 0.0), self.nt - 1.0)
        k = min(int(math.floor(s)), self.nt - 2)
        return k, s - k

    @staticmethod
    def _bilinear(slice_, i, j, ax, ay):
        v00 = slice_[j, i]
        v10 = slice_[j, i + 1]
        v01 = slice_[j + 1, i]
        v11 = slice_[j + 1, i + 1]
        return (v00 * (1.0 - ax) + v10 * ax) * (1.0 - ay) + (v01 * (1.0 - ax) + v11 * ax) * ay


def sample_velocity(field: VectorField2D, p, t: float) -> np.ndarray:
    """Velocity at one position and time. Raises OutOfDomain outside the extended domain."""
    vel, inside = field.sample_many(np.asarray(p, dtype=np.float64)[None, :], t)
    if not inside[0]:
        raise OutOfDomain(p[0], p[1])
    return vel[0]


def max_speed(field: VectorField2D) -> float:
    return float(np.max(np.hypot(field.data[..., 0], field.data[..., 1])))


def median_speed(field: VectorField2D, eps: float = 1e-9) -> float:
    speeds = np.hypot(field.data[..., 0], field.data[..., 1]).ravel()
    speeds = speeds[speeds > eps]
    return float(np.median(speeds)) if speeds.size else 0.0


def gaussian_prefilter(field: VectorField2D, sigma: float) -> VectorField2D:
    """
    Smooth every time slice with a Gaussian of standard deviation ``sigma`` (domain units).

    The kernel is truncated at 3 sigma and renormalised; edges are clamped.
    """
    if sigma < 0:
        raise ConfigError(f"Prefilter sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return field
    smoothed = ndimage.gaussian_filter(
        field.data,
        sigma=(0.0, sigma / field.dy, sigma / field.dx, 0.0),
        mode="nearest",
        truncate=3.0,
    )
    logger.info(f"Prefiltered field with sigma={sigma}")
    return VectorField2D(smoothed, field.x0, field.y0, field.dx, field.dy, field.t0, field.dt, field.visible_rect)


def extend_domain(field: VectorField2D, margin: float) -> VectorField2D:
    """Pad the grid by ``margin`` on each side with nearest-edge values; the visible rectangle is kept."""
    if margin < 0:
        raise ConfigError(f"Buffer margin must be >= 0, got {margin}")
    mx = math.ceil(margin / field.dx)
    my = math.ceil(margin / field.dy)
    if mx == 0 and my == 0:
        return field
    padded = np.pad(field.data, ((0, 0), (my, my), (mx, mx), (0, 0)), mode="edge")
    return VectorField2D(
        padded,
        field.x0 - mx * field.dx,
        field.y0 - my * field.dy,
        field.dx,
        field.dy,
        field.t0,
        field.dt,
        field.visible_rect,
    )


def prepare_field(raw: VectorField2D, prefilter_sigma: float, margin: float) -> VectorField2D:
    """Prefilter then extend; render and audit replay exactly this to rebuild the placement field."""
    return extend_domain(gaussian_prefilter(raw, prefilter_sigma), margin)


def _radial(xs, ys, center, strength, eps):
    rx = xs - center[0]
    ry = ys - center[1]
    r = np.maximum(np.hypot(rx, ry), eps)
    return strength * rx / r, strength * ry / r


def make_synthetic(kind: str, grid: GridSpec, **params) -> VectorField2D:
    """
    Sample an analytic field on ``grid``.

    Params by kind:
        constant: velocity=(vx, vy)
        rigid_rotation: omega, center
        source / sink: strength, center, eps
        dipole: strength, center, separation, eps
        translating_vortex: omega, center, center_velocity, core_radius
        shear: rate, center
    """
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"Unknown synthetic field kind: {kind!r} (expected one of {', '.join(SYNTHETIC_KINDS)})")

    xs = grid.x0 + grid.dx * np.arange(grid.nx)
    ys = grid.y0 + grid.dy * np.arange(grid.ny)
    X, Y = np.meshgrid(xs, ys)
    data = np.zeros((grid.nt, grid.ny, grid.nx, 2))
    center = tuple(params.get("center", (0.0, 0.0)))
    eps = float(params.get("eps", 1e-6))

    for k in range(grid.nt):
        t = grid.t0 + k * grid.dt
        if kind == "constant":
            vx, vy = params.get("velocity", (1.0, 0.0))
            u = np.full_like(X, float(vx))
            v = np.full_like(X, float(vy))
        elif kind == "rigid_rotation":
            omega = float(params.get("omega", 1.0))
            u = -omega * (Y - center[1])
            v = omega * (X - center[0])
        elif kind in ("source", "sink"):
            strength = float(params.get("strength", 1.0))
            u, v = _radial(X, Y, center, strength if kind == "source" else -strength, eps)
        elif kind == "dipole":
            strength = float(params.get("strength", 1.0))
            half = 0.5 * float(params.get("separation", 1.0))
            su, sv = _radial(X, Y, (center[0] - half, center[1]), strength, eps)
            ku, kv = _radial(X, Y, (center[0] + half, center[1]), -strength, eps)
            u, v = su + ku, sv + kv
        elif kind == "translating_vortex":
            omega = float(params.get("omega", 1.0))
            cvx, cvy = params.get("center_velocity", (1.0, 0.0))
            cx = center[0] + float(cvx) * (t - grid.t0)
            cy = center[1] + float(cvy) * (t - grid.t0)
            u = -omega * (Y - cy)
            v = omega * (X - cx)
            core = params.get("core_radius")
            if core:
                r2 = (X - cx) ** 2 + (Y - cy) ** 2
                decay = np.where(r2 > core * core, core * core / np.maximum(r2, 1e-300), 1.0)
                u = u * decay
                v = v * decay
        else:  # shear
            rate = float(params.get("rate", 1.0))
            u = rate * (Y - center[1])
            v = np.zeros_like(X)
        data[k, :, :, 0] = u
        data[k, :, :, 1] = v

    logger.debug(f"Synthesised {kind} field on {grid.nx}x{grid.ny}x{grid.nt} grid")
    return VectorField2D(data, grid.x0, grid.y0, grid.dx, grid.dy, grid.t0, grid.dt)
