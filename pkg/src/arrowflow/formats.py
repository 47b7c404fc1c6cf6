"""
File formats.

VF2D: little-endian binary vector field (f32 samples).
DM2D: little-endian binary scalar grid (densities, distance-map dumps).
ArrowSet: versioned UTF-8 text, one record per arrow; streamlets are re-derived on load.
"""

import hashlib
import logging
import struct
from collections import namedtuple
from pathlib import Path

import numpy as np

from src.arrowflow.distmap import RasterSpec
from src.arrowflow.errors import ArrowflowError, FormatError
from src.arrowflow.field import VectorField2D
from src.arrowflow.integrate import IntegratorConfig
from src.arrowflow.placement import Arrow, ArrowRecord, ArrowSet, PlacementParams

logger = logging.getLogger(__name__)

VF2D_MAGIC = b"VF2D"
DM2D_MAGIC = b"DM2D"
BINARY_VERSION = 1
ARROWSET_VERSION = 1

_VF2D_HEADER = struct.Struct("<4sIIII6d")
_DM2D_HEADER = struct.Struct("<4sIII4d")

DensityGrid = namedtuple("DensityGrid", ["values", "x0", "y0", "dx", "dy"])


def bytes_checksum(payload: bytes) -> str:
    return "sha256:" + hashlib.sha256(payload).hexdigest()


def file_checksum(path) -> str:
    return bytes_checksum(Path(path).read_bytes())


def encode_vf2d(field: VectorField2D) -> bytes:
    header = _VF2D_HEADER.pack(VF2D_MAGIC, BINARY_VERSION, field.nx, field.ny, field.nt, field.x0, field.y0, field.dx, field.dy, field.t0, field.dt)
    return header + field.data.astype("<f4").tobytes(order="C")


def decode_vf2d(payload: bytes, source: str = "<bytes>") -> VectorField2D:
    if len(payload) < _VF2D_HEADER.size:
        raise FormatError(f"{source}: truncated VF2D header")
    magic, version, nx, ny, nt, x0, y0, dx, dy, t0, dt = _VF2D_HEADER.unpack_from(payload)
    if magic != VF2D_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {VF2D_MAGIC!r}")
    if version != BINARY_VERSION:
        raise FormatError(f"{source}: unsupported VF2D version {version}")
    expected = _VF2D_HEADER.size + nt * ny * nx * 2 * 4
    if len(payload) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for {nx}x{ny}x{nt} field, found {len(payload)}")
    if not np.all(np.isfinite([x0, y0, dx, dy, t0, dt])):
        raise FormatError(f"{source}: non-finite grid header")
    data = np.frombuffer(payload, dtype="<f4", offset=_VF2D_HEADER.size).reshape(nt, ny, nx, 2)
    try:
        return VectorField2D(data.astype(np.float64), x0, y0, dx, dy, t0, dt)
    except ArrowflowError as e:
        raise FormatError(f"{source}: {e!s}") from e


def write_vf2d(path, field: VectorField2D) -> str:
    """Write ``field``; returns the checksum of the written bytes."""
    payload = encode_vf2d(field)
    Path(path).write_bytes(payload)
    logger.info(f"Wrote VF2D field {field.nx}x{field.ny}x{field.nt} to {path}")
    return bytes_checksum(payload)


def read_vf2d(path):
    """Returns (field, checksum)."""
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"Cannot read field file {path}: {e!s}") from e
    return decode_vf2d(payload, str(path)), bytes_checksum(payload)


def write_dm2d(path, values: np.ndarray, x0: float, y0: float, dx: float, dy: float) -> None:
    values = np.asarray(values)
    ny, nx = values.shape
    header = _DM2D_HEADER.pack(DM2D_MAGIC, BINARY_VERSION, nx, ny, x0, y0, dx, dy)
    Path(path).write_bytes(header + values.astype("<f4").tobytes(order="C"))


def read_dm2d(path) -> DensityGrid:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"Cannot read density file {path}: {e!s}") from e
    if len(payload) < _DM2D_HEADER.size:
        raise FormatError(f"{path}: truncated DM2D header")
    magic, version, nx, ny, x0, y0, dx, dy = _DM2D_HEADER.unpack_from(payload)
    if magic != DM2D_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DM2D_MAGIC!r}")
    if version != BINARY_VERSION:
        raise FormatError(f"{path}: unsupported DM2D version {version}")
    expected = _DM2D_HEADER.size + nx * ny * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {nx}x{ny} grid, found {len(payload)}")
    if nx < 1 or ny < 1 or not (dx > 0 and dy > 0):
        raise FormatError(f"{path}: invalid grid {nx}x{ny} with spacing ({dx}, {dy})")
    values = np.frombuffer(payload, dtype="<f4", offset=_DM2D_HEADER.size).reshape(ny, nx).astype(np.float64)
    if np.isnan(values).any():
        raise FormatError(f"{path}: NaN values")
    return DensityGrid(values, x0, y0, dx, dy)


_PARAM_TYPES = {
    "d_sep": float,
    "seed_ratio": float,
    "rng_seed": int,
    "thickness": float,
    "priority": str,
    "backward_stage": lambda s: s == "true",
    "queue": str,
}
_INTEGRATOR_TYPES = {
    "step_h": float,
    "length_gain": float,
    "max_aspect_ratio": float,
    "substeps_per_dt": int,
    "eps_v": float,
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def encode_arrow_set(arrow_set: ArrowSet) -> str:
    p = arrow_set.params
    lines = [f"ARROWSET {ARROWSET_VERSION}"]
    for key, value in sorted(arrow_set.header.items()):
        lines.append(f"meta {key} {_fmt(value)}")
    params = {
        "d_sep": float(p.d_sep),
        "seed_ratio": float(p.seed_ratio),
        "rng_seed": int(p.rng_seed),
        "thickness": float(p.glyph_thickness),
        "priority": p.priority,
        "backward_stage": p.backward_stage,
        "queue": p.queue,
    }
    cfg = p.integrator
    params.update(
        step_h=float(cfg.step_h),
        length_gain=float(cfg.length_gain),
        max_aspect_ratio=float(cfg.max_aspect_ratio),
        substeps_per_dt=int(cfg.substeps_per_dt),
        eps_v=float(cfg.eps_v),
    )
    for key, value in params.items():
        lines.append(f"param {key} {_fmt(value)}")
    r = arrow_set.raster
    lines.append(f"raster {r.width} {r.height} {_fmt(float(r.x0))} {_fmt(float(r.y0))} {_fmt(float(r.pixel_size))}")
    lines.append(f"steps {arrow_set.n_steps}")
    lines.append(f"arrows {len(arrow_set.arrows)}")
    for a in arrow_set.arrows:
        lines.append(f"arrow {a.id} {a.birth_step} {a.seed_step} {a.death_step} {_fmt(float(a.fade_delay))}")
        for t in range(a.birth_step, a.death_step + 1):
            rec = a.records[t]
            hx, hy = (float(v) for v in rec.handle)
            vx, vy = (float(v) for v in rec.velocity)
            lines.append(f"{t} {_fmt(hx)} {_fmt(hy)} {_fmt(vx)} {_fmt(vy)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def write_arrow_set(path, arrow_set: ArrowSet) -> None:
    Path(path).write_text(encode_arrow_set(arrow_set), encoding="utf-8")
    logger.info(f"Wrote {len(arrow_set.arrows)} arrows to {path}")


def decode_arrow_set(text: str, source: str = "<text>") -> ArrowSet:
    lines = text.splitlines()
    if not lines or lines[0] != f"ARROWSET {ARROWSET_VERSION}":
        raise FormatError(f"{source}: not an ArrowSet v{ARROWSET_VERSION} file")
    header, params, integrator = {}, {}, {}
    raster = None
    n_steps = n_arrows = None
    arrows = []
    i = 1
    try:
        while i < len(lines):
            parts = lines[i].split(" ")
            tag = parts[0]
            i += 1
            if tag == "meta":
                header[parts[1]] = " ".join(parts[2:])
            elif tag == "param":
                key, value = parts[1], parts[2]
                if key in _PARAM_TYPES:
                    params[key] = _PARAM_TYPES[key](value)
                elif key in _INTEGRATOR_TYPES:
                    integrator[key] = _INTEGRATOR_TYPES[key](value)
                else:
                    raise FormatError(f"{source}: unknown parameter {key!r}")
            elif tag == "raster":
                raster = RasterSpec(int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]))
            elif tag == "steps":
                n_steps = int(parts[1])
            elif tag == "arrows":
                n_arrows = int(parts[1])
            elif tag == "arrow":
                arrow = Arrow(int(parts[1]), int(parts[3]), int(parts[2]), int(parts[4]), float(parts[5]))
                for t in range(arrow.birth_step, arrow.death_step + 1):
                    rec = lines[i].split(" ")
                    i += 1
                    if int(rec[0]) != t:
                        raise FormatError(f"{source}: arrow {arrow.id} record for step {rec[0]}, expected {t}")
                    arrow.records[t] = ArrowRecord(np.array([float(rec[1]), float(rec[2])]), np.array([float(rec[3]), float(rec[4])]))
                arrows.append(arrow)
            elif tag == "end":
                break
            else:
                raise FormatError(f"{source}: unexpected line {lines[i - 1]!r}")
        else:
            raise FormatError(f"{source}: missing 'end' line")
    except (IndexError, ValueError) as e:
        raise FormatError(f"{source}: malformed line {i}: {e!s}") from e

    if raster is None or n_steps is None or n_arrows is None:
        raise FormatError(f"{source}: missing raster/steps/arrows header")
    if n_arrows != len(arrows):
        raise FormatError(f"{source}: header announces {n_arrows} arrows, found {len(arrows)}")
    try:
        placement_params = PlacementParams(integrator=IntegratorConfig(**integrator), **params)
    except (TypeError, ArrowflowError) as e:
        raise FormatError(f"{source}: invalid parameters: {e!s}") from e
    return ArrowSet(n_steps, placement_params, raster, arrows, header)


def read_arrow_set(path) -> ArrowSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"Cannot read arrow set {path}: {e!s}") from e
    return decode_arrow_set(text, str(path))
