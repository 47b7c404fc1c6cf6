"""
Weighted distance map over an 8-connected pixel graph.

Each pixel holds the density-weighted distance to the nearest inserted arrow.
Arrows are inserted incrementally with a multi-source Dijkstra seeded at every
pixel of the arrow's rasterised streamlet; values only ever decrease.
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from src.arrowflow.errors import ConfigError

if TYPE_CHECKING:
    from src.arrowflow.density import DensityMap
    from src.arrowflow.field import DomainRect
    from src.arrowflow.integrate import Streamlet

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
NEIGHBORS = (
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
)
QUEUES = ("heap", "bucket")


@dataclass(frozen=True)
class RasterSpec:
    """Pixel (ix, iy) covers [x0 + ix*ps, x0 + (ix+1)*ps) x [y0 + iy*ps, y0 + (iy+1)*ps)."""

    width: int
    height: int
    x0: float
    y0: float
    pixel_size: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"Raster must be at least 1x1, got {self.width}x{self.height}")
        if self.pixel_size <= 0:
            raise ConfigError(f"Raster pixel size must be > 0, got {self.pixel_size}")

    @classmethod
    def covering(cls, rect: "DomainRect", pixel_size: float) -> "RasterSpec":
        if pixel_size <= 0:
            raise ConfigError(f"Raster pixel size must be > 0, got {pixel_size}")
        width = max(1, math.ceil(rect.width / pixel_size - 1e-9))
        height = max(1, math.ceil(rect.height / pixel_size - 1e-9))
        return cls(width, height, rect.xmin, rect.ymin, pixel_size)

    @property
    def shape(self):
        return (self.height, self.width)

    def pixel_of(self, x: float, y: float):
        ix = int(math.floor((x - self.x0) / self.pixel_size))
        iy = int(math.floor((y - self.y0) / self.pixel_size))
        return min(max(ix, 0), self.width - 1), min(max(iy, 0), self.height - 1)

    def pixel_centers(self):
        xs = self.x0 + (np.arange(self.width) + 0.5) * self.pixel_size
        ys = self.y0 + (np.arange(self.height) + 0.5) * self.pixel_size
        return np.meshgrid(xs, ys)


def _line_pixels(x0: int, y0: int, x1: int, y1: int):
    """Integer Bresenham line, both endpoints included."""
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield (x0, y0)
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def rasterize_streamlet(streamlet: "Streamlet", raster: RasterSpec) -> list:
    """Pixels (ix, iy) traversed by the streamlet polyline, without duplicates."""
    cells = [raster.pixel_of(float(x), float(y)) for x, y in streamlet.points]
    touched = {cells[0]: None}
    for a, b in zip(cells, cells[1:]):
        if a == b:
            continue
        for pixel in _line_pixels(a[0], a[1], b[0], b[1]):
            touched[pixel] = None
    return list(touched)


class DistanceMap:
    """
    Incrementally updated weighted distance map.

    Edge weight between 8-neighbours a, b is ``pixel_size * len * (rho(a) + rho(b)) / 2``
    with len 1 or sqrt(2). Nodes farther than ``cutoff`` are recorded but not expanded.
    """

    def __init__(self, raster: RasterSpec, density: "DensityMap", cutoff: float = math.inf, queue: str = "heap"):
        if density.raster != raster:
            raise ConfigError(f"Density raster {density.raster} does not match distance map raster {raster}")
        if queue not in QUEUES:
            raise ConfigError(f"Unknown priority queue {queue!r}; expected one of {QUEUES}")
        self.raster = raster
        self.density = density
        self.cutoff = cutoff
        self.queue = queue
        self._width = raster.width
        self._height = raster.height
        self._dist = [math.inf] * (raster.width * raster.height)
        self._rho = [float(v) for v in density.values.ravel()]
        self._min_edge = raster.pixel_size * min(self._rho)
        self.inserted = 0

    @property
    def values(self) -> np.ndarray:
        return np.array(self._dist).reshape(self._height, self._width)

    def value(self, ix: int, iy: int) -> float:
        return self._dist[iy * self._width + ix]

    def distance_at(self, x: float, y: float) -> float:
        ix, iy = self.raster.pixel_of(x, y)
        return self.value(ix, iy)

    def distance_to_pixels(self, pixels) -> float:
        dist = self._dist
        w = self._width
        return min((dist[iy * w + ix] for ix, iy in pixels), default=math.inf)

    def distance_to_arrows(self, streamlet: "Streamlet") -> float:
        return self.distance_to_pixels(rasterize_streamlet(streamlet, self.raster))

    def insert_arrow(self, streamlet: "Streamlet") -> None:
        self.insert_pixels(rasterize_streamlet(streamlet, self.raster))

    def insert_pixels(self, pixels) -> None:
        sources = []
        for ix, iy in pixels:
            idx = iy * self._width + ix
            if self._dist[idx] > 0.0:
                self._dist[idx] = 0.0
                sources.append(idx)
        self.inserted += 1
        if not sources:
            return
        if self.queue == "bucket":
            pops = self._run_buckets(sources)
        else:
            pops = self._run_heap(sources)
        logger.debug(f"Inserted arrow #{self.inserted}: {len(sources)} sources, {pops} pops")

    def _neighbors(self, idx: int, d: float):
        w = self._width
        h = self._height
        x = idx % w
        y = idx // w
        rho_a = self._rho[idx]
        ps = self.raster.pixel_size
        for ox, oy, length in NEIGHBORS:
            nx = x + ox
            ny = y + oy
            if 0 <= nx < w and 0 <= ny < h:
                nidx = ny * w + nx
                yield nidx, d + ps * length * (rho_a + self._rho[nidx]) * 0.5

    def _run_heap(self, sources) -> int:
        dist = self._dist
        cutoff = self.cutoff
        heap = [(0.0, idx) for idx in sources]
        heapq.heapify(heap)
        pops = 0
        while heap:
            d, idx = heapq.heappop(heap)
            if d > dist[idx]:
                continue
            pops += 1
            for nidx, nd in self._neighbors(idx, d):
                if nd < dist[nidx]:
                    dist[nidx] = nd
                    if nd <= cutoff:
                        heapq.heappush(heap, (nd, nidx))
        return pops

    def _run_buckets(self, sources) -> int:
        # Bucket width equals the smallest edge weight, so a node can never lower
        # another node of its own bucket below that bucket. Each (node, value) pair
        # is expanded once; entries whose value has since dropped are skipped.
        dist = self._dist
        cutoff = self.cutoff
        width = self._min_edge
        pending = {0: list(sources)}
        keys = [0]
        expanded = {}
        pops = 0
        while keys:
            key = heapq.heappop(keys)
            bucket = pending[key]
            i = 0
            while i < len(bucket):
                idx = bucket[i]
                i += 1
                d = dist[idx]
                if expanded.get(idx) == d:
                    continue
                expanded[idx] = d
                pops += 1
                for nidx, nd in self._neighbors(idx, d):
                    if nd < dist[nidx]:
                        dist[nidx] = nd
                        if nd <= cutoff:
                            nkey = max(int(nd / width), key)
                            if nkey not in pending:
                                pending[nkey] = []
                                heapq.heappush(keys, nkey)
                            pending[nkey].append(nidx)
            del pending[key]
        return pops

    def dump(self, path) -> None:
        """Write the map as a DM2D file (unreached pixels are written as +inf)."""
        from src.arrowflow.formats import write_dm2d

        write_dm2d(path, self.values, self.raster.x0, self.raster.y0, self.raster.pixel_size, self.raster.pixel_size)


def new_distance_map(raster: RasterSpec, density: "DensityMap", cutoff: float = math.inf, queue: str = "heap") -> DistanceMap:
    return DistanceMap(raster, density, cutoff=cutoff, queue=queue)


def dijkstra_from_sources(raster: RasterSpec, density: "DensityMap", pixels, cutoff: float = math.inf) -> np.ndarray:
    """From-scratch single-run multi-source Dijkstra; used by audits."""
    dmap = DistanceMap(raster, density, cutoff=cutoff)
    dmap.insert_pixels(pixels)
    return dmap.values
