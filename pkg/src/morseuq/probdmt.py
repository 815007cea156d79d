"""Perturb-and-walk sampling of structure skeletons.

Each (structure, run) pair owns a private counter-based random stream, so
results are a pure function of (field, structure, seed, run index) under any
execution schedule. Draw order within a stream is pinned: Bernoulli retain,
then variance, then the noise field, row-major.

Normals come from Box-Muller and Gamma variates from Marsaglia-Tsang squeeze
sampling, both built on the stream's uniforms, so the exact draw sequence is
part of the contract rather than an implementation detail of the RNG library.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .grids import BinaryGrid, Coord, ScalarGrid, full_offsets, strides_for
from .morse import MorseSkeleton, Structure

CROP_PAD = 16


@dataclass(frozen=True)
class SamplerConfig:
    u: float = 0.3
    gamma: float = 0.2
    alpha: float = 2.0
    beta: float = 0.01
    max_step: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"u must be in [0,1], got {self.u}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must be > 1 (mean undefined), got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.max_step < 1:
            raise ValueError(f"max_step must be positive, got {self.max_step}")


@dataclass(frozen=True)
class SampledSkeleton:
    """One stochastic realization of a structure.

    ``path`` is in global grid coordinates; ``mask`` renders it inside the
    structure's crop region (origin ``crop_origin``, shape ``crop_dims``).
    """

    structure_id: int
    path: tuple[Coord, ...]
    reached: bool
    was_retained: bool
    crop_origin: Coord
    crop_dims: tuple[int, ...]

    @property
    def mask(self) -> BinaryGrid:
        arr = np.zeros(self.crop_dims, dtype=bool)
        for c in self.path:
            arr[tuple(ci - oi for ci, oi in zip(c, self.crop_origin))] = True
        return BinaryGrid(arr)

    def full_mask(self, dims) -> np.ndarray:
        arr = np.zeros(dims, dtype=bool)
        for c in self.path:
            arr[c] = True
        return arr


_M64 = 0xFFFFFFFFFFFFFFFF
_local = threading.local()


def _mix64(x: int) -> int:
    # splitmix64 finalizer: cheap, platform-independent avalanching
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def stream(seed: int, structure_id: int, run_index: int) -> np.random.Generator:
    """Counter-based private stream for one (structure, run) pair.

    The Philox key is a splitmix64 hash of (seed, structure id, run index),
    so streams are independent of execution order and of each other. One
    generator is cached per thread and re-keyed with a fully reset state,
    which is equivalent to (but much cheaper than) fresh construction.
    """
    h = _mix64(seed & _M64)
    h = _mix64(h ^ _mix64(structure_id & _M64))
    h = _mix64(h ^ _mix64(run_index & _M64))
    if not hasattr(_local, "gen"):
        _local.bg = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        _local.gen = np.random.Generator(_local.bg)
    bg = _local.bg
    st = bg.state
    st["state"]["counter"][:] = 0
    st["state"]["key"][0] = h
    st["state"]["key"][1] = _mix64(h ^ 0xA5A5A5A5A5A5A5A5)
    st["buffer_pos"] = 4
    st["has_uint32"] = 0
    st["uinteger"] = 0
    bg.state = st
    return _local.gen


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard normals from 2*ceil(n/2) uniforms (cos/sin interleaved)."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]: keeps log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]


def _standard_gamma(rng: np.random.Generator, shape: float) -> float:
    # Marsaglia-Tsang squeeze; valid for shape >= 1 (config enforces > 1).
    # The normal is an inline scalar Box-Muller (same draws as box_muller(1)).
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        u1 = 1.0 - rng.random()
        u2 = rng.random()
        x = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        v = (1.0 + c * x) ** 3
        if v <= 0.0:
            continue
        u = rng.random()
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v


def sample_variance(cfg: SamplerConfig, rng: np.random.Generator) -> float:
    """One Inverse-Gamma(alpha, beta) draw; sample mean tends to beta/(alpha-1)."""
    return cfg.beta / _standard_gamma(rng, cfg.alpha)


def perturb(f: ScalarGrid, variance: float, rng: np.random.Generator) -> ScalarGrid:
    """f plus i.i.d. Gaussian noise of the given variance, unclamped."""
    return ScalarGrid(perturb_array(f.data, variance, rng))


def perturb_array(arr: np.ndarray, variance: float, rng: np.random.Generator) -> np.ndarray:
    if variance < 0.0:
        raise ValueError("variance must be >= 0")
    noise = math.sqrt(variance) * box_muller(rng, arr.size)
    return arr + noise.reshape(arr.shape)


def generate_path(f_n: ScalarGrid, c_s: Coord, c_m: Coord, gamma: float,
                  max_step: int, *, structure_id: int = -1,
                  origin: Coord | None = None) -> SampledSkeleton:
    """Greedy distance-regularized walk from c_s toward c_m over f_n.

    Coordinates are in f_n's frame; ``origin`` (default zero) translates the
    emitted path into global coordinates.
    """
    dims = f_n.dims
    if c_s == c_m:
        raise ValueError("walk start and target must differ")
    for c in (c_s, c_m):
        if not all(0 <= ci < di for ci, di in zip(c, dims)) or len(c) != len(dims):
            raise ValueError(f"coordinate {c} out of bounds for dims {dims}")
    origin = origin or tuple(0 for _ in dims)
    flat = np.ascontiguousarray(f_n.data.reshape(-1))
    path_buf = np.empty(max_step + 1, dtype=np.int64)
    length, reached = kernels.greedy_walk(
        flat, np.asarray(dims, dtype=np.int64), strides_for(dims),
        full_offsets(len(dims)),
        int(np.ravel_multi_index(c_s, dims)), int(np.ravel_multi_index(c_m, dims)),
        float(gamma), int(max_step), path_buf)
    axes = np.unravel_index(path_buf[:length], dims)
    path = tuple(zip(*((a + o).tolist() for a, o in zip(axes, origin))))
    return SampledSkeleton(structure_id=structure_id, path=path, reached=bool(reached),
                           was_retained=False, crop_origin=origin, crop_dims=dims)


def crop_region(e: Structure, dims, pad: int = CROP_PAD):
    """Bounding box of the deterministic path padded and clamped in-bounds."""
    cols = tuple(zip(*e.path))
    lo = [max(0, min(col) - pad) for col in cols]
    hi = [min(d, max(col) + pad + 1) for col, d in zip(cols, dims)]
    return tuple(lo), tuple(slice(l, h) for l, h in zip(lo, hi))


def sample_structure(e: Structure, f: ScalarGrid, cfg: SamplerConfig,
                     run_index: int) -> SampledSkeleton:
    """Bernoulli retain-or-resample of one structure (one stochastic run)."""
    rng = stream(cfg.seed, e.id, run_index)
    origin, slices = crop_region(e, f.dims)
    crop = f.data[slices]
    if rng.random() < cfg.u:
        return SampledSkeleton(structure_id=e.id, path=e.path, reached=True,
                               was_retained=True, crop_origin=origin,
                               crop_dims=crop.shape)
    variance = sample_variance(cfg, rng)
    f_n = ScalarGrid(perturb_array(crop, variance, rng))
    local = lambda c: tuple(ci - oi for ci, oi in zip(c, origin))
    return generate_path(f_n, local(e.saddle), local(e.max), cfg.gamma,
                         cfg.max_step, structure_id=e.id, origin=origin)


def sample_skeleton(skel: MorseSkeleton, f: ScalarGrid, cfg: SamplerConfig,
                    run_index: int) -> dict[int, SampledSkeleton]:
    """One realization per structure; order-independent by the seeding contract."""
    return {e.id: sample_structure(e, f, cfg, run_index) for e in skel.structures}
