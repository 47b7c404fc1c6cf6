"""
Independent oracles for the test-suite.

Everything here is written from the definitions, without reusing the library's
solvers, so the library can be checked against it.
"""

import heapq
import math
from types import SimpleNamespace
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from src.arrowflow.density import UniformDensitySource, make_density_source
from src.arrowflow.distmap import rasterize_streamlet
from src.arrowflow.field import prepare_field
from src.arrowflow.integrate import IntegratorConfig, Streamlet
from src.arrowflow.placement import (
    ArrowRecord,
    ArrowSet,
    PlacementContext,
    PlacementParams,
    arrow_streamlet,
    candidate_streamlets,
    place_moving_arrows,
    placement_raster,
    seed_positions,
)
from src.arrowflow.run_config import RunConfig


def brute_force_dijkstra(density: np.ndarray, pixel_size: float, sources: Iterable) -> np.ndarray:
    """Plain multi-source Dijkstra on the weighted 8-connected pixel graph; sources are (ix, iy)."""
    h, w = density.shape
    dist = np.full((h, w), math.inf)
    heap = []
    for ix, iy in sources:
        dist[iy, ix] = 0.0
        heap.append((0.0, ix, iy))
    heapq.heapify(heap)
    while heap:
        d, ix, iy = heapq.heappop(heap)
        if d > dist[iy, ix]:
            continue
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                if ox == 0 and oy == 0:
                    continue
                jx, jy = ix + ox, iy + oy
                if not (0 <= jx < w and 0 <= jy < h):
                    continue
                length = math.sqrt(2.0) if ox and oy else 1.0
                nd = d + pixel_size * length * (density[iy, ix] + density[jy, jx]) * 0.5
                if nd < dist[jy, jx]:
                    dist[jy, jx] = nd
                    heapq.heappush(heap, (nd, jx, jy))
    return dist


def octile(dx: int, dy: int, pixel_size: float = 1.0) -> float:
    a, b = abs(dx), abs(dy)
    return pixel_size * (max(a, b) + (math.sqrt(2.0) - 1.0) * min(a, b))


def polygon_area(points: np.ndarray) -> float:
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def straight_streamlet(start, end, n: int, handle_index: Optional[int] = None, thickness: float = 1.0) -> Streamlet:
    points = np.linspace(np.asarray(start, dtype=float), np.asarray(end, dtype=float), n)
    length = float(np.hypot(*(points[-1] - points[0])))
    return Streamlet(points, n // 2 if handle_index is None else handle_index, length, thickness, np.zeros(2))


def brute_force_pairwise(ctx: PlacementContext, arrow_set: ArrowSet, t: int) -> float:
    """Minimum distance between alive arrows from one from-scratch map per arrow."""
    density = ctx.density(t).values
    pixel_sets = [rasterize_streamlet(arrow_streamlet(ctx, a, t), ctx.raster) for a in arrow_set.alive(t)]
    best = math.inf
    for i, sources in enumerate(pixel_sets):
        dist = brute_force_dijkstra(density, ctx.raster.pixel_size, sources)
        for other in pixel_sets[i + 1 :]:
            best = min(best, min(dist[iy, ix] for ix, iy in other))
    return best


def brute_force_coverage(ctx: PlacementContext, arrow_set: ArrowSet, t: int) -> float:
    alive = arrow_set.alive(t)
    if not alive:
        return 0.0
    sources = [p for a in alive for p in rasterize_streamlet(arrow_streamlet(ctx, a, t), ctx.raster)]
    dist = brute_force_dijkstra(ctx.density(t).values, ctx.raster.pixel_size, sources)
    candidates = candidate_streamlets(ctx, seed_positions(ctx), t)
    covered = 0
    for s in candidates:
        if min(dist[iy, ix] for ix, iy in rasterize_streamlet(s, ctx.raster)) <= ctx.params.d_seed:
            covered += 1
    return covered / len(candidates)


def add_trajectory(ctx: PlacementContext, arrow_set: ArrowSet, start_step: int, handles, fade_delay: float = 0.0):
    """Hand-build an arrow whose handle visits ``handles`` from ``start_step`` on."""
    first = candidate_streamlets(ctx, [handles[0]], start_step)[0]
    arrow = arrow_set.new_arrow(start_step, first, fade_delay)
    for k, p in enumerate(handles[1:], start=1):
        s = candidate_streamlets(ctx, [p], start_step + k)[0]
        arrow.records[start_step + k] = ArrowRecord(s.handle.copy(), np.asarray(s.velocity_at_handle, dtype=float).copy(), s)
        arrow.death_step = start_step + k
    return arrow


def read_report(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def build_context(field, d_sep=4.0, length_gain=1.0, thickness=None, step_h=None, max_aspect_ratio=6.0, density_source=None, **params):
    """
    PlacementContext over ``field`` as given (no buffer extension).

    Extra keyword arguments go to PlacementParams.
    """
    integrator = IntegratorConfig(step_h=step_h or d_sep / 8.0, length_gain=length_gain, max_aspect_ratio=max_aspect_ratio)
    placement = PlacementParams(d_sep=d_sep, integrator=integrator, thickness=thickness, **params)
    source = density_source or UniformDensitySource(placement_raster(field, placement))
    return PlacementContext.build(field, source, placement)


def run_pipeline_placement(raw, config: RunConfig):
    """Prepare ``raw`` and place arrows exactly as the generate command does."""
    field = prepare_field(raw, config.prefilter_sigma, config.buffer_margin)
    params = config.to_placement_params(field)
    source = make_density_source(config.density, field, placement_raster(field, params), config.scale_max, config.density_normalization)
    arrow_set = place_moving_arrows(field, source, params)
    ctx = PlacementContext.build(field, source, params)
    return SimpleNamespace(raw=raw, field=field, params=params, ctx=ctx, arrow_set=arrow_set, config=config)
