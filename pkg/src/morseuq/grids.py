"""Dense 2D/3D grid types, neighborhood arithmetic, and GRD1/PGM file I/O.

All grids are row-major (last index fastest) and immutable after
construction, so they can be shared read-only across parallel workers.
Likelihood values are not clamped or renormalized on load; a warning is
logged when a nominal [0,1] field strays outside that range, since perturbed
fields legitimately do.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

log = logging.getLogger("morseuq")

Coord = tuple[int, ...]

GRD1_MAGIC = "GRD1"
_DTYPES = {"f32": np.float32, "u8": np.uint8}


class GridFormatError(ValueError):
    """Malformed grid file; ``field`` names the offending header/payload part."""

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


def _check_dims(shape):
    if len(shape) not in (2, 3):
        raise ValueError(f"grid rank must be 2 or 3, got {len(shape)}")
    if any(d < 2 for d in shape):
        raise ValueError(f"every dim must be >= 2, got {shape}")


@dataclass(frozen=True)
class ScalarGrid:
    """Dense real-valued field over a 2D/3D lattice."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        _check_dims(arr.shape)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim


@dataclass(frozen=True)
class BinaryGrid:
    """Per-voxel boolean mask with the same layout rules as ScalarGrid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=bool)
        _check_dims(arr.shape)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim


@lru_cache(maxsize=None)
def full_offsets(rank: int) -> np.ndarray:
    """All 3^rank - 1 unit-box offsets, lexicographically ascending."""
    rows = [o for o in product((-1, 0, 1), repeat=rank) if any(o)]
    return np.array(sorted(rows), dtype=np.int64)


@lru_cache(maxsize=None)
def offset_costs(rank: int) -> np.ndarray:
    """Euclidean length of each full_offsets row (1, sqrt2, sqrt3)."""
    return np.sqrt((full_offsets(rank).astype(np.float64) ** 2).sum(axis=1))


def strides_for(dims) -> np.ndarray:
    s = np.ones(len(dims), dtype=np.int64)
    for a in range(len(dims) - 2, -1, -1):
        s[a] = s[a + 1] * dims[a + 1]
    return s


def flat_index(c: Coord, dims) -> int:
    return int(np.ravel_multi_index(c, dims))


def unflat(idx: int, dims) -> Coord:
    return tuple(int(v) for v in np.unravel_index(idx, dims))


def in_bounds(c: Coord, dims) -> bool:
    return len(c) == len(dims) and all(0 <= ci < di for ci, di in zip(c, dims))


def neighbors(c: Coord, dims, connectivity: str = "full") -> list[Coord]:
    """In-bounds coordinates differing from c by at most 1 per component.

    8-connectivity in 2D, 26-connectivity in 3D; c itself is excluded and the
    result is in fixed lexicographic order so downstream tie-breaking is
    deterministic.
    """
    if connectivity != "full":
        raise ValueError(f"unsupported connectivity {connectivity!r}")
    if not in_bounds(c, dims):
        raise ValueError(f"coordinate {c} out of bounds for dims {tuple(dims)}")
    out = []
    for off in full_offsets(len(dims)):
        q = tuple(int(ci + oi) for ci, oi in zip(c, off))
        if all(0 <= qi < di for qi, di in zip(q, dims)):
            out.append(q)
    return out


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Collapse a trailing RGB axis to one luma channel (Rec.601 weights)."""
    if rgb.shape[-1] != 3:
        raise ValueError("expected a trailing axis of size 3")
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def _warn_range(arr, path):
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        log.info("values in %s fall outside [0,1] (min=%g max=%g); not clamping",
                 path, arr.min(), arr.max())


def grid_to_bytes(grid: ScalarGrid | BinaryGrid) -> bytes:
    """GRD1 wire form: one JSON header line plus raw little-endian payload."""
    if isinstance(grid, BinaryGrid):
        dtype, payload = "u8", grid.data.astype(np.uint8)
    else:
        dtype, payload = "f32", grid.data.astype("<f4")
    header = json.dumps({"magic": GRD1_MAGIC, "dims": list(grid.dims), "dtype": dtype})
    return header.encode("utf-8") + b"\n" + np.ascontiguousarray(payload).tobytes()


def save_grid(grid: ScalarGrid | BinaryGrid, path) -> None:
    """Write a grid as GRD1: one JSON header line plus raw LE payload."""
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(grid))


def grid_from_bytes(blob: bytes, source: str = "<bytes>") -> ScalarGrid | BinaryGrid:
    """Parse GRD1 wire form; raises GridFormatError naming the bad field."""
    newline = blob.find(b"\n")
    if newline < 0:
        raise GridFormatError("header", f"{source}: missing GRD1 header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFormatError("header", f"{source}: unreadable GRD1 header") from exc
    if not isinstance(header, dict) or header.get("magic") != GRD1_MAGIC:
        raise GridFormatError("magic", f"{source}: missing GRD1 magic")
    dims = header.get("dims")
    if (not isinstance(dims, list) or len(dims) not in (2, 3)
            or not all(isinstance(d, int) and d >= 2 for d in dims)):
        raise GridFormatError("dims", f"{source}: bad dims {dims!r}")
    dtype = header.get("dtype")
    if dtype not in _DTYPES:
        raise GridFormatError("dtype", f"{source}: unsupported dtype {dtype!r}")
    raw = blob[newline + 1:]
    n = int(np.prod(dims))
    np_dtype = np.dtype(_DTYPES[dtype]).newbyteorder("<")
    if len(raw) != n * np_dtype.itemsize:
        raise GridFormatError(
            "payload",
            f"{source}: payload length mismatch (header wants {n} x "
            f"{np_dtype.itemsize} bytes, file has {len(raw)})")
    arr = np.frombuffer(raw, dtype=np_dtype).reshape(dims)
    if dtype == "u8":
        if arr.max(initial=0) > 1:
            raise GridFormatError("payload", f"{source}: u8 payload must be 0/1")
        return BinaryGrid(arr.astype(bool))
    grid = ScalarGrid(arr.astype(np.float64))
    _warn_range(grid.data, source)
    return grid


def load_grid(path) -> ScalarGrid | BinaryGrid:
    """Read a GRD1 file (or P5/P6 PGM for 2D scalar input).

    GRD1 round-trips bit-exactly through save_grid; PGM bytes map to v/255.
    Raises GridFormatError naming the offending field on malformed input.
    """
    with open(path, "rb") as fh:
        first = fh.read(2)
        fh.seek(0)
        if first in (b"P5", b"P6"):
            return _load_pnm(fh, path)
        blob = fh.read()
    return grid_from_bytes(blob, str(path))


def _read_pnm_token(fh) -> bytes:
    # skips whitespace and '#' comment lines between header tokens
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise GridFormatError("header", "truncated PNM header")
        if ch == b"#":
            fh.readline()
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def _load_pnm(fh, path) -> ScalarGrid:
    magic = _read_pnm_token(fh)
    try:
        width = int(_read_pnm_token(fh))
        height = int(_read_pnm_token(fh))
        maxval = int(_read_pnm_token(fh))
    except ValueError as exc:
        raise GridFormatError("header", f"{path}: non-numeric PNM header") from exc
    if maxval != 255:
        raise GridFormatError("maxval", f"{path}: only maxval 255 supported")
    channels = 3 if magic == b"P6" else 1
    raw = fh.read(width * height * channels)
    if len(raw) != width * height * channels:
        raise GridFormatError("payload", f"{path}: PNM payload length mismatch")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 3:
        arr = luminance(arr.reshape(height, width, 3))
    else:
        arr = arr.reshape(height, width)
    return ScalarGrid(arr)
