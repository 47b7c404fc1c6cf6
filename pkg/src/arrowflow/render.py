"""
Frame rendering.

Handles are Hermite-interpolated between time steps, streamlets are re-integrated
at the frame time, and the arrow glyph is warped along them. Slow arrows morph
into discs and arrows fade in and out around their birth and death.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from src.arrowflow.errors import ConfigError, RenderError
from src.arrowflow.integrate import Streamlet, integrate_streamlets
from src.arrowflow.placement import Arrow, ArrowSet, PlacementContext

logger = logging.getLogger(__name__)

FRAME_PATTERN = "frame_{:06d}.png"
MANIFEST_NAME = "manifest.txt"


@dataclass(frozen=True)
class RenderStyle:
    """
    Args:
        frames_per_step: frames rendered per field time step
        fade_length: duration of the fade ramps, in steps
        r_full: length / thickness ratio at and above which the glyph is a full arrow
        disc_radius_factor: disc radius as a fraction of the drawn thickness
        size: (width, height) of the output image in pixels
        head_length, head_width, shaft_width: glyph proportions on the unit support
    """

    frames_per_step: int = 4
    fill_rgba: tuple = (25, 25, 25, 255)
    outline_rgba: Optional[tuple] = None
    background_rgba: tuple = (255, 255, 255, 255)
    background_path: Optional[str] = None
    fade_length: float = 1.0
    r_full: float = 3.0
    disc_radius_factor: float = 0.5
    size: tuple = (512, 512)
    head_length: float = 0.35
    head_width: float = 1.0
    shaft_width: float = 0.4
    shaft_samples: int = 16
    supersample: int = 4

    def __post_init__(self):
        if self.frames_per_step < 1:
            raise ConfigError(f"frames_per_step must be >= 1, got {self.frames_per_step}")
        if not 0 < self.fade_length <= 1:
            raise ConfigError(f"fade_length must lie in (0, 1], got {self.fade_length}")
        if not self.r_full > 1:
            raise ConfigError(f"r_full must be > 1, got {self.r_full}")
        if self.size[0] < 1 or self.size[1] < 1:
            raise ConfigError(f"Image size must be positive, got {self.size}")
        if self.supersample < 1 or self.shaft_samples < 2:
            raise ConfigError("supersample must be >= 1 and shaft_samples >= 2")


@dataclass(frozen=True, eq=False)
class FrameImage:
    """8-bit RGBA with straight (non-premultiplied) alpha, row 0 at the top."""

    pixels: np.ndarray

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def save_png(self, path) -> None:
        Image.fromarray(self.pixels, "RGBA").save(path, format="PNG")


def hermite(p0, p1, m0, m1, s: float) -> np.ndarray:
    s2 = s * s
    s3 = s2 * s
    return (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * m1


def interpolate_handle(arrow: Arrow, tau: float, dt: float = 1.0) -> np.ndarray:
    """Cubic Hermite handle position at step time tau; tangents are the recorded velocities times dt."""
    if not arrow.birth_step <= tau <= arrow.death_step:
        raise RenderError(f"tau={tau} outside lifetime [{arrow.birth_step}, {arrow.death_step}] of arrow {arrow.id}")
    k = int(math.floor(tau))
    if k == tau or k >= arrow.death_step:
        return arrow.records[min(k, arrow.death_step)].handle.copy()
    r0 = arrow.records[k]
    r1 = arrow.records[k + 1]
    return hermite(r0.handle, r1.handle, r0.velocity * dt, r1.velocity * dt, tau - k)


def morph_parameter(arc_length: float, thickness: float, r_full: float) -> float:
    """0 for a full arrow (ratio >= r_full), 1 for a disc (ratio <= 1), linear in between."""
    if thickness <= 0:
        raise RenderError(f"thickness must be > 0, got {thickness}")
    ratio = arc_length / thickness
    return min(max((r_full - ratio) / (r_full - 1.0), 0.0), 1.0)


def smoothstep(x: float) -> float:
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


def fade_ramps(arrow: Arrow, fade_length: float, n_steps: int):
    """
    (delay, ramp width) actually used for ``arrow``.

    When the lifetime is too short for the faded ends, delay and ramp shrink by
    the same factor so the ramps meet and the arrow reaches full opacity.
    """
    faded = (arrow.birth_step > 0) + (arrow.death_step < n_steps - 1)
    span = arrow.death_step - arrow.birth_step
    need = faded * (arrow.fade_delay + fade_length)
    scale = 1.0 if need <= span else span / need
    return arrow.fade_delay * scale, fade_length * scale


def opacity(arrow: Arrow, tau: float, fade_length: float, n_steps: int) -> float:
    """
    Fade-in after ``birth + fade_delay`` and fade-out ending at ``death - fade_delay``.

    Arrows alive at the first or last step are not faded there. Ramps are
    clipped to short lifetimes (see ``fade_ramps``); an arrow alive for a single
    step is drawn opaque at that step.
    """
    if not arrow.birth_step <= tau <= arrow.death_step:
        return 0.0
    delay, ramp = fade_ramps(arrow, fade_length, n_steps)
    if ramp <= 0.0:
        return 1.0
    alpha = 1.0
    if arrow.birth_step > 0:
        alpha = min(alpha, smoothstep((tau - arrow.birth_step - delay) / ramp))
    if arrow.death_step < n_steps - 1:
        alpha = min(alpha, smoothstep((arrow.death_step - delay - tau) / ramp))
    return alpha


def glyph_outline(style: RenderStyle) -> np.ndarray:
    """Arrow outline on the unit support: u along the streamlet (tail 0, tip 1), v across it. Counter-clockwise."""
    neck = 1.0 - style.head_length
    half_shaft = 0.5 * style.shaft_width
    half_head = 0.5 * style.head_width
    us = np.linspace(0.0, neck, style.shaft_samples)
    bottom = [(u, -half_shaft) for u in us]
    head = [(neck, -half_head), (1.0, 0.0), (neck, half_head)]
    top = [(u, half_shaft) for u in us[::-1]]
    return np.array(bottom + head + top)


def _extremity_direction(streamlet: Streamlet) -> np.ndarray:
    d = streamlet.points[-1] - streamlet.points[0]
    n = math.hypot(d[0], d[1])
    if n == 0.0:
        v = streamlet.velocity_at_handle
        n = math.hypot(v[0], v[1])
        return np.array([1.0, 0.0]) if n == 0.0 else np.asarray(v, dtype=np.float64) / n
    return d / n


def warp_glyph(streamlet: Streamlet, thickness: float, m: float, density: float = 1.0, style: Optional[RenderStyle] = None) -> np.ndarray:
    """
    Polygon (M, 2) in domain coordinates.

    The outline is mapped onto the streamlet's arc length and offset along its
    normals by the drawn width ``thickness / density``; it is blended toward a disc
    as m goes to 1. Streamlets shorter than the width use a square support
    oriented by the extremity vector.
    """
    style = style or RenderStyle()
    width = thickness / density
    uv = glyph_outline(style)
    handle = streamlet.handle
    direction = _extremity_direction(streamlet)
    normal = np.array([-direction[1], direction[0]])

    if streamlet.is_degenerate or streamlet.arc_length < width:
        arrow = handle + np.outer((uv[:, 0] - 0.5) * width, direction) + np.outer(uv[:, 1] * width, normal)
    else:
        arrow = np.empty_like(uv)
        for i, (u, v) in enumerate(uv):
            s = u * streamlet.arc_length
            t = streamlet.tangent_at(s)
            arrow[i] = streamlet.point_at(s) + v * width * np.array([-t[1], t[0]])

    if m <= 0.0:
        return arrow
    radius = style.disc_radius_factor * width
    phi = math.atan2(direction[1], direction[0]) + math.pi
    angles = phi + 2.0 * math.pi * np.arange(len(uv)) / len(uv)
    disc = handle + radius * np.column_stack([np.cos(angles), np.sin(angles)])
    if m >= 1.0:
        return disc
    return (1.0 - m) * arrow + m * disc


def frame_times(n_steps: int, frames_per_step: int) -> list:
    return [k / frames_per_step for k in range((n_steps - 1) * frames_per_step + 1)]


def load_background(style: RenderStyle) -> np.ndarray:
    width, height = style.size
    if style.background_path:
        image = Image.open(style.background_path).convert("RGBA")
        if image.size != (width, height):
            image = image.resize((width, height), Image.Resampling.BILINEAR)
        return np.asarray(image, dtype=np.uint8).copy()
    return np.tile(np.array(style.background_rgba, dtype=np.uint8), (height, width, 1))


class _Canvas:
    """Premultiplied float RGBA buffer with supersampled polygon coverage."""

    def __init__(self, background: np.ndarray, rect, supersample: int):
        bg = background.astype(np.float64)
        self.alpha = bg[..., 3] / 255.0
        self.rgb = bg[..., :3] * self.alpha[..., None]
        self.height, self.width = bg.shape[:2]
        self.rect = rect
        self.ss = supersample

    def to_image(self, points: np.ndarray) -> np.ndarray:
        r = self.rect
        px = (points[:, 0] - r.xmin) / r.width * self.width
        py = (r.ymax - points[:, 1]) / r.height * self.height
        return np.column_stack([px, py])

    def coverage(self, poly: np.ndarray, outline: bool = False):
        x0 = max(int(math.floor(poly[:, 0].min())) - 1, 0)
        y0 = max(int(math.floor(poly[:, 1].min())) - 1, 0)
        x1 = min(int(math.ceil(poly[:, 0].max())) + 1, self.width)
        y1 = min(int(math.ceil(poly[:, 1].max())) + 1, self.height)
        if x1 <= x0 or y1 <= y0:
            return None
        ss = self.ss
        mask = Image.new("L", ((x1 - x0) * ss, (y1 - y0) * ss), 0)
        draw = ImageDraw.Draw(mask)
        pts = [((x - x0) * ss - 0.5, (y - y0) * ss - 0.5) for x, y in poly]
        if outline:
            draw.line([*pts, pts[0]], fill=255, width=ss)
        else:
            draw.polygon(pts, fill=255)
        cov = np.asarray(mask, dtype=np.float64).reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3)) / 255.0
        return (slice(y0, y1), slice(x0, x1)), cov

    def fill(self, poly_domain: np.ndarray, rgba: tuple, alpha: float, outline: bool = False) -> None:
        hit = self.coverage(self.to_image(poly_domain), outline)
        if hit is None:
            return
        window, cov = hit
        a = cov * alpha * (rgba[3] / 255.0)
        src = np.array(rgba[:3], dtype=np.float64)
        self.rgb[window] = src * a[..., None] + self.rgb[window] * (1.0 - a[..., None])
        self.alpha[window] = a + self.alpha[window] * (1.0 - a)

    def pixels(self) -> np.ndarray:
        alpha = self.alpha
        safe = np.where(alpha > 0, alpha, 1.0)
        rgb = self.rgb / safe[..., None]
        out = np.concatenate([rgb, (alpha * 255.0)[..., None]], axis=2)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def frame_streamlets(ctx: PlacementContext, arrows: list, tau: float):
    """Interpolated handles and re-integrated streamlets at tau; None for handles outside the domain."""
    if not arrows:
        return []
    handles = np.array([interpolate_handle(a, tau, ctx.field.dt) for a in arrows])
    _, inside = ctx.field.sample_many(handles, ctx.step_time(tau))
    streamlets = integrate_streamlets(ctx.field, handles, ctx.step_time(tau), ctx.params.integrator, ctx.params.glyph_thickness)
    return [s if ok else None for s, ok in zip(streamlets, inside)]


def render_frame(arrow_set: ArrowSet, ctx: PlacementContext, tau: float, style: RenderStyle, background: Optional[np.ndarray] = None) -> FrameImage:
    """Draw every arrow alive at tau over the background, in ascending id order."""
    tmax = arrow_set.n_steps - 1
    if not 0.0 <= tau <= tmax:
        raise RenderError(f"tau={tau} outside the animation [0, {tmax}]")
    if background is None:
        background = load_background(style)
    canvas = _Canvas(background, ctx.field.visible_rect, style.supersample)

    alive = []
    for arrow in sorted(arrow_set.arrows, key=lambda a: a.id):
        if arrow.birth_step <= tau <= arrow.death_step:
            alpha = opacity(arrow, tau, style.fade_length, arrow_set.n_steps)
            if alpha > 0.0:
                alive.append((arrow, alpha))
    if not alive:
        return FrameImage(background.copy())

    density = ctx.density(min(int(math.floor(tau)), tmax))
    thickness = ctx.params.glyph_thickness
    streamlets = frame_streamlets(ctx, [a for a, _ in alive], tau)
    for (arrow, alpha), streamlet in zip(alive, streamlets):
        if streamlet is None:
            continue
        hx, hy = streamlet.handle
        rho = density.value_at(float(hx), float(hy))
        m = morph_parameter(streamlet.arc_length, thickness / rho, style.r_full)
        poly = warp_glyph(streamlet, thickness, m, rho, style)
        canvas.fill(poly, style.fill_rgba, alpha)
        if style.outline_rgba is not None:
            canvas.fill(poly, style.outline_rgba, alpha, outline=True)
    return FrameImage(canvas.pixels())


def render_animation(arrow_set: ArrowSet, ctx: PlacementContext, style: RenderStyle, out_dir, threads: Optional[int] = None, header: Optional[dict] = None) -> list:
    """
    Render ``frames_per_step * tmax + 1`` frames to ``out_dir`` plus a manifest.

    Frames are independent; up to ``threads`` are rendered concurrently.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    taus = frame_times(arrow_set.n_steps, style.frames_per_step)
    background = load_background(style)
    for t in range(arrow_set.n_steps):
        ctx.density(t)

    def render_one(k):
        path = out / FRAME_PATTERN.format(k)
        render_frame(arrow_set, ctx, taus[k], style, background).save_png(path)
        return path

    workers = threads or int(os.environ.get("ARROWFLOW_THREADS", "0") or 0) or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        paths = list(pool.map(render_one, range(len(taus))))

    lines = [f"frames {len(taus)}", f"frames_per_step {style.frames_per_step}"]
    for key, value in sorted((header or {}).items()):
        lines.append(f"meta {key} {value}")
    for key, value in asdict(style).items():
        lines.append(f"style {key} {value}")
    lines += [f"{FRAME_PATTERN.format(k)} {tau!r}" for k, tau in enumerate(taus)]
    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Rendered {len(taus)} frames to {out} with {workers} threads")
    return paths
