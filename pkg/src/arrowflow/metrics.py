"""
Audits of a placed ArrowSet.

The separation oracle solves each step from scratch with ``scipy.sparse.csgraph``
on the same weighted 8-connected pixel graph the placement uses.
"""

import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse import csgraph

from src.arrowflow.distmap import NEIGHBORS, DistanceMap, RasterSpec, rasterize_streamlet
from src.arrowflow.placement import ArrowSet, PlacementContext, arrow_streamlet, build_step_map, candidate_streamlets, seed_positions

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["step", "alive", "births", "deaths", "survivors", "min_distance", "coverage", "max_disp_ratio"]

Violation = namedtuple("Violation", ["arrow_id", "step", "displacement", "arc_length"])


def pixel_graph(raster: RasterSpec, density_values: np.ndarray) -> sparse.csr_matrix:
    """Sparse adjacency of the weighted 8-connected pixel graph (row-major node index iy * width + ix)."""
    h, w = raster.shape
    rho = np.asarray(density_values, dtype=np.float64)
    index = np.arange(h * w).reshape(h, w)
    rows, cols, weights = [], [], []
    for ox, oy, length in NEIGHBORS:
        ys = slice(max(0, -oy), h - max(0, oy))
        xs = slice(max(0, -ox), w - max(0, ox))
        yn = slice(max(0, oy), h + min(0, oy))
        xn = slice(max(0, ox), w + min(0, ox))
        rows.append(index[ys, xs].ravel())
        cols.append(index[yn, xn].ravel())
        weights.append((raster.pixel_size * length * 0.5 * (rho[ys, xs] + rho[yn, xn])).ravel())
    n = h * w
    return sparse.csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def _arrow_pixels(ctx: PlacementContext, arrow_set: ArrowSet, t: int) -> list:
    w = ctx.raster.width
    out = []
    for arrow in arrow_set.alive(t):
        pixels = rasterize_streamlet(arrow_streamlet(ctx, arrow, t), ctx.raster)
        out.append(np.array([iy * w + ix for ix, iy in pixels], dtype=np.intp))
    return out


def separation_audit(ctx: PlacementContext, arrow_set: ArrowSet, t: int, oracle: bool = True) -> float:
    """
    Minimum weighted distance between any two arrows alive at step t; +inf with fewer than two.

    ``oracle=False`` replays the incremental map instead, whose values above the
    placement cutoff are only upper bounds.
    """
    pixel_sets = _arrow_pixels(ctx, arrow_set, t)
    if len(pixel_sets) < 2:
        return math.inf
    best = math.inf
    if oracle:
        graph = pixel_graph(ctx.raster, ctx.density(t).values)
        for i, sources in enumerate(pixel_sets[:-1]):
            dist = csgraph.dijkstra(graph, directed=False, indices=sources, min_only=True)
            for other in pixel_sets[i + 1 :]:
                best = min(best, float(dist[other].min()))
        return best
    dmap = DistanceMap(ctx.raster, ctx.density(t), cutoff=ctx.cutoff, queue=ctx.params.queue)
    w = ctx.raster.width
    for pixels in pixel_sets:
        as_xy = [(int(i % w), int(i // w)) for i in pixels]
        best = min(best, dmap.distance_to_pixels(as_xy))
        dmap.insert_pixels(as_xy)
    return best


def coverage_audit(ctx: PlacementContext, arrow_set: ArrowSet, t: int) -> float:
    """Fraction of seed-grid candidates whose streamlet lies within d_seed of an alive arrow."""
    if not arrow_set.alive(t):
        return 0.0
    dmap = build_step_map(ctx, arrow_set, t)
    streamlets = candidate_streamlets(ctx, seed_positions(ctx), t)
    d_seed = ctx.params.d_seed
    covered = sum(1 for s in streamlets if dmap.distance_to_arrows(s) <= d_seed)
    return covered / len(streamlets)


def popping_score(arrow_set: ArrowSet) -> pd.DataFrame:
    """
    Births and deaths per step.

    A birth at step t is an arrow first alive at t > 0; a death at step t is an
    arrow alive at t - 1 and gone at t. The ``total`` column is cumulative.
    """
    n = arrow_set.n_steps
    births = np.zeros(n, dtype=int)
    deaths = np.zeros(n, dtype=int)
    for arrow in arrow_set.arrows:
        if arrow.birth_step > 0:
            births[arrow.birth_step] += 1
        if arrow.death_step < n - 1:
            deaths[arrow.death_step + 1] += 1
    df = pd.DataFrame({"step": np.arange(n), "births": births, "deaths": deaths})
    df["total"] = (df["births"] + df["deaths"]).cumsum()
    return df


def total_popping(arrow_set: ArrowSet) -> int:
    df = popping_score(arrow_set)
    return int(df["births"].sum() + df["deaths"].sum())


def _displacements(ctx: PlacementContext, arrow_set: ArrowSet):
    """Yields (arrow, step, displacement from step - 1, arc length at step)."""
    for arrow in arrow_set.arrows:
        for t in range(arrow.birth_step + 1, arrow.death_step + 1):
            disp = float(np.hypot(*(arrow.records[t].handle - arrow.records[t - 1].handle)))
            yield arrow, t, disp, arrow_streamlet(ctx, arrow, t).arc_length


def time_resolution_audit(ctx: PlacementContext, arrow_set: ArrowSet) -> list:
    """Every (arrow, step) whose handle moved farther than the step's streamlet is long."""
    violations = [Violation(a.id, t, disp, arc) for a, t, disp, arc in _displacements(ctx, arrow_set) if disp > arc]
    if violations:
        logger.warning(f"{len(violations)} arrow steps move farther than their arrow length; consider a finer time resolution")
    return violations


def lifetime_stats(arrow_set: ArrowSet) -> dict:
    lifetimes = np.array([a.lifetime for a in arrow_set.arrows], dtype=float)
    if lifetimes.size == 0:
        return {"arrows": 0, "mean_lifetime": 0.0, "median_lifetime": 0.0, "max_lifetime": 0}
    return {
        "arrows": int(lifetimes.size),
        "mean_lifetime": float(lifetimes.mean()),
        "median_lifetime": float(np.median(lifetimes)),
        "max_lifetime": int(lifetimes.max()),
    }


@dataclass
class MetricsReport:
    rows: pd.DataFrame
    summary: dict = dc_field(default_factory=dict)

    @property
    def separation_ok(self) -> bool:
        return bool(self.summary.get("separation_ok", False))

    @property
    def coverage_ok(self) -> bool:
        return bool(self.summary.get("coverage_ok", False))

    @property
    def passed(self) -> bool:
        return self.separation_ok and self.coverage_ok

    def write_csv(self, path) -> None:
        path = Path(path)
        self.rows.to_csv(path, index=False, float_format="%.10g")
        with path.open("a", encoding="utf-8") as fh:
            for key, value in self.summary.items():
                fh.write(f"# {key}: {value}\n")
        logger.info(f"Wrote metrics report ({len(self.rows)} steps) to {path}")


def build_report(ctx: PlacementContext, arrow_set: ArrowSet, oracle: bool = True) -> MetricsReport:
    """Run every audit over every step."""
    n = arrow_set.n_steps
    popping = popping_score(arrow_set)
    max_ratio = np.zeros(n)
    violations = 0
    for _, t, disp, arc in _displacements(ctx, arrow_set):
        ratio = disp / arc if arc > 0 else (math.inf if disp > 0 else 0.0)
        max_ratio[t] = max(max_ratio[t], ratio)
        violations += disp > arc

    rows = []
    for t in range(n):
        alive = arrow_set.alive(t)
        born = sum(1 for a in alive if a.birth_step == t)
        gone = sum(1 for a in arrow_set.arrows if t > 0 and a.death_step == t - 1)
        rows.append(
            {
                "step": t,
                "alive": len(alive),
                "births": born,
                "deaths": gone,
                "survivors": len(alive) - born,
                "min_distance": separation_audit(ctx, arrow_set, t, oracle),
                "coverage": coverage_audit(ctx, arrow_set, t),
                "max_disp_ratio": float(max_ratio[t]),
            }
        )
        logger.debug(f"Audited step {t}: {rows[-1]}")
    df = pd.DataFrame(rows, columns=REPORT_COLUMNS)

    d_sep = ctx.params.d_sep
    summary = {
        **lifetime_stats(arrow_set),
        "total_births": int(popping["births"].sum()),
        "total_deaths": int(popping["deaths"].sum()),
        "total_popping": int(popping["births"].sum() + popping["deaths"].sum()),
        "time_resolution_violations": int(violations),
        "min_separation": float(df["min_distance"].min()) if n else math.inf,
        "separation_ok": bool((df["min_distance"] >= d_sep).all()),
        "coverage_ok": bool((df["coverage"] == 1.0).all()),
    }
    logger.info(f"Audit: separation_ok={summary['separation_ok']} coverage_ok={summary['coverage_ok']} popping={summary['total_popping']}")
    return MetricsReport(df, summary)
