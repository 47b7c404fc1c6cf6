"""
RK4 integration of streamlets and handle pathlines.

Streamlets are integrated at a fixed field time along the unit direction field, so
the integration parameter is arc length and samples are spaced ``step_h`` apart.
Handles are advected through the time-dependent field.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from src.arrowflow.errors import ConfigError, OutOfDomain
from src.arrowflow.field import VectorField2D, median_speed

logger = logging.getLogger(__name__)

DEGENERATE_SPEED = 1e-9


@dataclass(frozen=True)
class IntegratorConfig:
    """
    Args:
        step_h: arc-length step of streamlet integration (domain units)
        length_gain: c, the target streamlet length is c * |v(handle)|
        max_aspect_ratio: cap on arc_length / thickness
        substeps_per_dt: RK4 substeps used to advect a handle across one time step
        eps_v: speeds below this mark a degenerate (critical) point
    """

    step_h: float
    length_gain: float = 1.0
    max_aspect_ratio: float = 6.0
    substeps_per_dt: int = 8
    eps_v: float = DEGENERATE_SPEED

    def __post_init__(self):
        if self.step_h <= 0:
            raise ConfigError(f"step_h must be > 0, got {self.step_h}")
        if self.length_gain <= 0:
            raise ConfigError(f"length_gain must be > 0, got {self.length_gain}")
        if self.max_aspect_ratio < 1:
            raise ConfigError(f"max_aspect_ratio must be >= 1, got {self.max_aspect_ratio}")
        if self.substeps_per_dt < 1:
            raise ConfigError(f"substeps_per_dt must be >= 1, got {self.substeps_per_dt}")


@dataclass(frozen=True, eq=False)
class Streamlet:
    """Polyline from the backward tip to the forward tip; ``points[handle_index]`` is the handle."""

    points: np.ndarray
    handle_index: int
    arc_length: float
    thickness: float
    velocity_at_handle: np.ndarray

    @property
    def handle(self) -> np.ndarray:
        return self.points[self.handle_index]

    @property
    def is_degenerate(self) -> bool:
        return len(self.points) < 2 or self.arc_length <= 0.0

    @cached_property
    def cumulative(self) -> np.ndarray:
        seg = np.hypot(*np.diff(self.points, axis=0).T) if len(self.points) > 1 else np.zeros(0)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length ``s`` from the backward tip, clamped to the polyline."""
        if len(self.points) == 1:
            return self.points[0].copy()
        cum = self.cumulative
        s = min(max(s, 0.0), cum[-1])
        k = int(np.searchsorted(cum, s, side="right")) - 1
        k = min(max(k, 0), len(cum) - 2)
        seg = cum[k + 1] - cum[k]
        a = 0.0 if seg <= 0 else (s - cum[k]) / seg
        return self.points[k] * (1.0 - a) + self.points[k + 1] * a

    def tangent_at(self, s: float) -> np.ndarray:
        """Unit tangent of the segment containing arc length ``s``; zero for a single point."""
        if len(self.points) == 1:
            return np.zeros(2)
        cum = self.cumulative
        k = int(np.searchsorted(cum, min(max(s, 0.0), cum[-1]), side="right")) - 1
        k = min(max(k, 0), len(cum) - 2)
        d = self.points[k + 1] - self.points[k]
        n = np.hypot(d[0], d[1])
        return d / n if n > 0 else np.zeros(2)

    @property
    def handle_arc(self) -> float:
        return float(self.cumulative[self.handle_index])


def _polyline_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T)))


def _directions(field: VectorField2D, pts: np.ndarray, t: float, eps_v: float):
    vel, inside = field.sample_many(pts, t)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    ok = inside & (speed >= eps_v)
    return vel / np.where(ok, speed, 1.0)[:, None], ok


def _rk4_arc_step(field, pts, t, h, eps_v):
    hh = h[:, None]
    k1, ok1 = _directions(field, pts, t, eps_v)
    k2, ok2 = _directions(field, pts + 0.5 * hh * k1, t, eps_v)
    k3, ok3 = _directions(field, pts + 0.5 * hh * k2, t, eps_v)
    k4, ok4 = _directions(field, pts + hh * k3, t, eps_v)
    new = pts + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _, ok_new = field.sample_many(new, t)
    return new, ok1 & ok2 & ok3 & ok4 & ok_new


def _march(field, starts, t, half, sign, cfg):
    """Sample each start outward until its half-length is reached, the boundary is hit or the flow stalls."""
    pos = starts.copy()
    travelled = np.zeros(len(starts))
    active = half > 0.0
    samples = [[] for _ in range(len(starts))]
    tol = cfg.step_h * 1e-9
    while active.any():
        idx = np.nonzero(active)[0]
        h = np.minimum(cfg.step_h, half[idx] - travelled[idx])
        new, ok = _rk4_arc_step(field, pos[idx], t, sign * h, cfg.eps_v)
        moved = idx[ok]
        pos[moved] = new[ok]
        travelled[moved] += h[ok]
        for n, q in zip(moved, new[ok]):
            samples[n].append(q)
        active[idx[~ok]] = False
        active[moved] = half[moved] - travelled[moved] > tol
    return samples


def clamp_aspect(streamlet: Streamlet, max_aspect_ratio: float) -> Streamlet:
    """Trim both tips symmetrically in arc length so that arc_length / thickness <= max_aspect_ratio."""
    target = max_aspect_ratio * streamlet.thickness
    if streamlet.is_degenerate or streamlet.arc_length <= target:
        return streamlet

    cum = streamlet.cumulative
    hi = streamlet.handle_index
    back_len = cum[hi]
    fwd_len = cum[-1] - cum[hi]
    trim = 0.5 * (cum[-1] - target)
    trim_back, trim_fwd = trim, trim
    if trim_back > back_len:
        trim_fwd += trim_back - back_len
        trim_back = back_len
    if trim_fwd > fwd_len:
        trim_back = min(back_len, trim_back + trim_fwd - fwd_len)
        trim_fwd = fwd_len

    start_s = trim_back
    end_s = cum[-1] - trim_fwd
    pts = [streamlet.point_at(start_s)]
    handle_index = 0
    for i in range(len(cum)):
        if start_s < cum[i] < end_s:
            if i == hi:
                handle_index = len(pts)
            pts.append(streamlet.points[i])
    if end_s > start_s:
        if end_s == cum[hi] and start_s < cum[hi]:
            handle_index = len(pts)
        pts.append(streamlet.point_at(end_s))
    points = np.array(pts)
    points[handle_index] = streamlet.handle
    arc = min(_polyline_length(points), target)
    return Streamlet(points, handle_index, arc, streamlet.thickness, streamlet.velocity_at_handle)


def integrate_streamlets(field: VectorField2D, points, t: float, cfg: IntegratorConfig, thickness: float) -> list:
    """
    Integrate one streamlet per point at field time ``t``.

    Points outside the domain or at degenerate positions give one-point streamlets;
    use ``integrate_streamlet`` when the caller needs OutOfDomain raised.
    """
    starts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    vel, inside = field.sample_many(starts, t)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    half = np.where(inside & (speed >= cfg.eps_v), 0.5 * cfg.length_gain * speed, 0.0)

    backward = _march(field, starts, t, half, -1.0, cfg)
    forward = _march(field, starts, t, half, 1.0, cfg)

    streamlets = []
    for n in range(len(starts)):
        poly = [*reversed(backward[n]), starts[n], *forward[n]]
        pts = np.array(poly)
        raw = Streamlet(pts, len(backward[n]), _polyline_length(pts), thickness, vel[n].copy())
        streamlets.append(clamp_aspect(raw, cfg.max_aspect_ratio))
    return streamlets


def integrate_streamlet(field: VectorField2D, p, t: float, cfg: IntegratorConfig, thickness: float) -> Streamlet:
    _, inside = field.sample_many(np.asarray(p, dtype=np.float64)[None, :], t)
    if not inside[0]:
        raise OutOfDomain(p[0], p[1])
    return integrate_streamlets(field, [p], t, cfg, thickness)[0]


def advect_handles(field: VectorField2D, points, t_from: float, t_to: float, cfg: IntegratorConfig):
    """
    RK4 pathline advection of many handles from ``t_from`` to ``t_to``.

    Returns:
        (positions, alive): ``alive`` is False for trajectories that left the domain.
    """
    pos = np.asarray(points, dtype=np.float64).reshape(-1, 2).copy()
    _, alive = field.sample_many(pos, t_from)
    h = (t_to - t_from) / cfg.substeps_per_dt
    t = t_from
    for _ in range(cfg.substeps_per_dt):
        k1, ok1 = field.sample_many(pos, t)
        k2, ok2 = field.sample_many(pos + 0.5 * h * k1, t + 0.5 * h)
        k3, ok3 = field.sample_many(pos + 0.5 * h * k2, t + 0.5 * h)
        k4, ok4 = field.sample_many(pos + h * k3, t + h)
        pos = pos + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        alive &= ok1 & ok2 & ok3 & ok4
        t += h
    _, ok_end = field.sample_many(pos, t_to)
    alive &= ok_end
    return pos, alive


def advect_handle(field: VectorField2D, p, t_from: float, t_to: float, cfg: IntegratorConfig) -> Optional[np.ndarray]:
    """Advect one handle; None means the trajectory died (left the extended domain)."""
    pos, alive = advect_handles(field, [p], t_from, t_to, cfg)
    return pos[0] if alive[0] else None


def auto_length_gain(field: VectorField2D, thickness: float, target_ratio: float = 3.0) -> float:
    """Gain c giving the median-speed arrow an aspect ratio of ``target_ratio``."""
    med = median_speed(field)
    if med <= 0.0:
        logger.warning("Field has no non-zero velocity; using length gain 1.0")
        return 1.0
    return target_ratio * thickness / med
