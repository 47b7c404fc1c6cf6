"""
Placement of moving arrows.

``place_moving_arrows`` runs three stages over the time steps of a field:
S1 fills step 0 with evenly spaced arrows, S2 walks forward propagating the
previous step's arrows and then completing each step with new ones, and S3 walks
backward extending arrow lifetimes into free space behind their birth.
"""

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from src.arrowflow.density import DensityMap, DensitySource
from src.arrowflow.distmap import QUEUES, DistanceMap, RasterSpec, rasterize_streamlet
from src.arrowflow.errors import ConfigError
from src.arrowflow.field import VectorField2D
from src.arrowflow.integrate import IntegratorConfig, Streamlet, advect_handles, integrate_streamlets

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"
PRIORITIES = ("length", "random", "short_first")

# independent PRNG streams derived from (rng_seed, step, stream)
STREAM_SEEDS = 0
STREAM_PRIORITY = 1


@dataclass(frozen=True)
class PlacementParams:
    """
    Args:
        d_sep: minimal weighted separation between alive arrows (domain units)
        integrator: streamlet / pathline integration settings
        seed_ratio: d_seed / d_sep
        rng_seed: seed of the shuffling and fade-delay PRNG
        thickness: glyph thickness in domain units; d_sep / 2 when omitted
        priority: propagation order, "length" (longest screen-space streamlet first),
            "short_first" or "random"
        backward_stage: run stage S3
        queue: Dijkstra priority queue, "heap" or "bucket"
    """

    d_sep: float
    integrator: IntegratorConfig
    seed_ratio: float = 2.0
    rng_seed: int = 0
    thickness: Optional[float] = None
    priority: str = "length"
    backward_stage: bool = True
    queue: str = "heap"

    def __post_init__(self):
        if not self.d_sep > 0:
            raise ConfigError(f"d_sep must be > 0, got {self.d_sep}")
        if not self.seed_ratio > 1:
            raise ConfigError(f"seed_ratio must be > 1, got {self.seed_ratio}")
        if self.thickness is not None and not self.thickness > 0:
            raise ConfigError(f"thickness must be > 0, got {self.thickness}")
        if self.priority not in PRIORITIES:
            raise ConfigError(f"Unknown priority {self.priority!r}; expected one of {PRIORITIES}")
        if self.queue not in QUEUES:
            raise ConfigError(f"Unknown queue {self.queue!r}; expected one of {QUEUES}")

    @property
    def d_seed(self) -> float:
        return self.seed_ratio * self.d_sep

    @property
    def glyph_thickness(self) -> float:
        return self.thickness if self.thickness is not None else 0.5 * self.d_sep

    @property
    def pixel_size(self) -> float:
        return self.d_sep / 4.0

    @property
    def seed_pitch(self) -> float:
        return self.d_sep / 2.0


@dataclass(eq=False)
class ArrowRecord:
    handle: np.ndarray
    velocity: np.ndarray
    streamlet: Optional[Streamlet] = None


@dataclass(eq=False)
class Arrow:
    id: int
    seed_step: int
    birth_step: int
    death_step: int
    fade_delay: float = 0.0
    records: dict = dc_field(default_factory=dict)

    def alive_at(self, t: int) -> bool:
        return self.birth_step <= t <= self.death_step

    @property
    def lifetime(self) -> int:
        """Number of time steps the arrow is alive."""
        return self.death_step - self.birth_step + 1

    def handle_at(self, t: int) -> np.ndarray:
        return self.records[t].handle


@dataclass(eq=False)
class ArrowSet:
    n_steps: int
    params: PlacementParams
    raster: RasterSpec
    arrows: list = dc_field(default_factory=list)
    header: dict = dc_field(default_factory=dict)

    def new_arrow(self, t: int, streamlet: Streamlet, fade_delay: float) -> Arrow:
        arrow = Arrow(len(self.arrows), t, t, t, fade_delay)
        arrow.records[t] = ArrowRecord(streamlet.handle.copy(), np.asarray(streamlet.velocity_at_handle, dtype=np.float64).copy(), streamlet)
        self.arrows.append(arrow)
        return arrow

    def alive(self, t: int) -> list:
        return [a for a in self.arrows if a.alive_at(t)]

    def total_lifetime(self) -> int:
        return sum(a.lifetime for a in self.arrows)


@dataclass
class PlacementContext:
    """Everything placement, audits and rendering need to (re)derive streamlets and distances."""

    field: VectorField2D
    density_source: DensitySource
    params: PlacementParams
    raster: RasterSpec

    @classmethod
    def build(cls, field: VectorField2D, density_source: DensitySource, params: PlacementParams) -> "PlacementContext":
        raster = placement_raster(field, params)
        if density_source.raster != raster:
            raise ConfigError(f"Density raster {density_source.raster} does not match placement raster {raster}")
        return cls(field, density_source, params, raster)

    def density(self, t: int) -> DensityMap:
        return self.density_source.at_step(t)

    @property
    def cutoff(self) -> float:
        return self.params.d_seed * self.density_source.scale_max

    def step_time(self, t: float) -> float:
        return self.field.step_time(t)


def placement_raster(field: VectorField2D, params: PlacementParams) -> RasterSpec:
    """Distance-map raster over the extended domain with pixels a quarter of d_sep wide."""
    return RasterSpec.covering(field.rect, params.pixel_size)


def step_rng(rng_seed: int, t: int, stream: int = STREAM_SEEDS) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=rng_seed, spawn_key=(t, stream))))


def seed_positions(ctx: PlacementContext) -> np.ndarray:
    """Grid of pitch d_sep / 2 centred in the extended domain, row-major."""
    rect = ctx.field.rect
    pitch = ctx.params.seed_pitch
    nx = max(1, int(math.floor(rect.width / pitch)))
    ny = max(1, int(math.floor(rect.height / pitch)))
    xs = rect.xmin + 0.5 * (rect.width - (nx - 1) * pitch) + np.arange(nx) * pitch
    ys = rect.ymin + 0.5 * (rect.height - (ny - 1) * pitch) + np.arange(ny) * pitch
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def candidate_streamlets(ctx: PlacementContext, points, t: int) -> list:
    return integrate_streamlets(ctx.field, points, ctx.step_time(t), ctx.params.integrator, ctx.params.glyph_thickness)


def new_step_map(ctx: PlacementContext, t: int) -> DistanceMap:
    return DistanceMap(ctx.raster, ctx.density(t), cutoff=ctx.cutoff, queue=ctx.params.queue)


def arrow_streamlet(ctx: PlacementContext, arrow: Arrow, t: int) -> Streamlet:
    """The arrow's streamlet at step t, integrated on demand for records loaded from disk."""
    record = arrow.records[t]
    if record.streamlet is None:
        record.streamlet = candidate_streamlets(ctx, [record.handle], t)[0]
    return record.streamlet


def build_step_map(ctx: PlacementContext, arrow_set: ArrowSet, t: int) -> DistanceMap:
    """Fresh map holding every arrow alive at t, inserted in id order."""
    dmap = new_step_map(ctx, t)
    for arrow in arrow_set.alive(t):
        dmap.insert_arrow(arrow_streamlet(ctx, arrow, t))
    return dmap


def screen_length(streamlet: Streamlet, density: DensityMap) -> float:
    """Arc length as drawn: glyphs are scaled down by the density at their handle."""
    x, y = streamlet.handle
    return streamlet.arc_length / density.value_at(float(x), float(y))


def priority_key(ctx: PlacementContext, arrow: Arrow, t: int):
    """Ascending sort key putting the longest screen-space streamlet at step t first; ties by id."""
    return (-screen_length(arrow_streamlet(ctx, arrow, t), ctx.density(t)), arrow.id)


def _order_candidates(ctx: PlacementContext, candidates: list, prev: int, t: int) -> list:
    policy = ctx.params.priority
    if policy == "length":
        return sorted(candidates, key=lambda a: priority_key(ctx, a, prev))
    if policy == "short_first":
        return sorted(candidates, key=lambda a: (-priority_key(ctx, a, prev)[0], a.id))
    ordered = sorted(candidates, key=lambda a: a.id)
    perm = step_rng(ctx.params.rng_seed, t, STREAM_PRIORITY).permutation(len(ordered))
    return [ordered[i] for i in perm]


def complete_time_step(ctx: PlacementContext, t: int, arrow_set: ArrowSet, dmap: DistanceMap, rng: np.random.Generator) -> int:
    """
    Greedily insert new arrows at step t.

    Seeds are visited in shuffled order; a candidate is kept when its weighted
    distance to the arrows already in ``dmap`` is strictly greater than d_seed.

    Returns:
        number of arrows inserted
    """
    seeds = seed_positions(ctx)
    seeds = seeds[rng.permutation(len(seeds))]
    streamlets = candidate_streamlets(ctx, seeds, t)
    d_seed = ctx.params.d_seed
    inserted = 0
    for streamlet in streamlets:
        pixels = rasterize_streamlet(streamlet, ctx.raster)
        if dmap.distance_to_pixels(pixels) > d_seed:
            dmap.insert_pixels(pixels)
            arrow_set.new_arrow(t, streamlet, float(rng.random()))
            inserted += 1
    logger.debug(f"Step {t}: {inserted} of {len(seeds)} seed candidates inserted")
    return inserted


def propagate_arrows_one_step(ctx: PlacementContext, t: int, direction: int, arrow_set: ArrowSet, dmap: DistanceMap) -> int:
    """
    Extend arrows alive at ``t - direction`` (and not at ``t``) to step t.

    Candidates are advected in priority order and kept when they stay in the
    domain and their weighted distance to ``dmap`` is at least d_sep.

    Returns:
        number of arrows propagated
    """
    if direction not in (1, -1):
        raise ConfigError(f"direction must be +1 or -1, got {direction}")
    prev = t - direction
    candidates = [a for a in arrow_set.arrows if a.alive_at(prev) and not a.alive_at(t)]
    if not candidates:
        return 0
    ordered = _order_candidates(ctx, candidates, prev, t)

    handles = np.array([a.records[prev].handle for a in ordered])
    positions, alive = advect_handles(ctx.field, handles, ctx.step_time(prev), ctx.step_time(t), ctx.params.integrator)
    streamlets = candidate_streamlets(ctx, positions, t)

    d_sep = ctx.params.d_sep
    accepted = 0
    for arrow, ok, streamlet in zip(ordered, alive, streamlets):
        if not ok:
            continue
        pixels = rasterize_streamlet(streamlet, ctx.raster)
        if dmap.distance_to_pixels(pixels) < d_sep:
            continue
        dmap.insert_pixels(pixels)
        arrow.records[t] = ArrowRecord(streamlet.handle.copy(), np.asarray(streamlet.velocity_at_handle, dtype=np.float64).copy(), streamlet)
        if direction > 0:
            arrow.death_step = t
        else:
            arrow.birth_step = t
        accepted += 1
    logger.debug(f"Step {t} ({'forward' if direction > 0 else 'backward'}): {accepted} of {len(ordered)} arrows propagated")
    return accepted


def place_moving_arrows(field: VectorField2D, density_source: DensitySource, params: PlacementParams) -> ArrowSet:
    """Place moving arrows over every time step of ``field`` (already extended by its buffer zone)."""
    ctx = PlacementContext.build(field, density_source, params)
    arrow_set = ArrowSet(field.nt, params, ctx.raster)
    tmax = field.nt - 1

    # seed step 0
    inserted = complete_time_step(ctx, 0, arrow_set, new_step_map(ctx, 0), step_rng(params.rng_seed, 0))
    logger.info(f"Step 0: {inserted} arrows seeded")

    # forward: propagate, then complete
    for t in range(1, tmax + 1):
        dmap = new_step_map(ctx, t)
        propagated = propagate_arrows_one_step(ctx, t, 1, arrow_set, dmap)
        inserted = complete_time_step(ctx, t, arrow_set, dmap, step_rng(params.rng_seed, t))
        logger.info(f"Step {t}: {propagated} propagated, {inserted} inserted")

    # backward: extend births only, no completion afterwards
    if params.backward_stage:
        extended = 0
        for t in range(tmax - 1, -1, -1):
            extended += propagate_arrows_one_step(ctx, t, -1, arrow_set, build_step_map(ctx, arrow_set, t))
        logger.info(f"Backward stage extended {extended} arrow births")

    logger.info(f"Placed {len(arrow_set.arrows)} arrows over {field.nt} steps (total lifetime {arrow_set.total_lifetime()})")
    return arrow_set
