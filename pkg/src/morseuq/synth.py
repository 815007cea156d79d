"""Synthetic curvilinear cases: image, ground truth, and imperfect likelihood.

Curves are momentum-biased random walks (heading perturbed by a bounded angle
each step) dilated to a target thickness. The likelihood corrupts the ground
truth with dropped segments (false negatives), spurious branches (false
positives), blur, and additive noise; everything is a pure function of the
seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grids import BinaryGrid, ScalarGrid

MIN_DIM = 16
MAX_TURN = 0.3  # radians per step
TEXTURE_AMPLITUDE = 0.06


@dataclass(frozen=True)
class SynthConfig:
    dims: tuple[int, ...]
    n_curves: int = 3
    thickness: int = 3
    gap_rate: float = 0.2
    spur_rate: float = 0.15
    blur_sigma: float = 1.0
    noise_sigma: float = 0.04
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) not in (2, 3):
            raise ValueError("dims must have rank 2 or 3")
        for name in ("gap_rate", "spur_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        for name in ("blur_sigma", "noise_sigma"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_curves < 1 or self.thickness < 1:
            raise ValueError("n_curves and thickness must be >= 1")
        if any(d < MIN_DIM for d in self.dims):
            raise ValueError(
                f"dims {self.dims} too small to host a curve (need >= {MIN_DIM})")


def _unit(v):
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else v


def _walk(rng, dims, start, heading, n_steps):
    """Momentum walk: unit steps, heading nudged by a bounded angle each step."""
    rank = len(dims)
    pos = np.array(start, dtype=float)
    h = np.array(heading, dtype=float)
    pixels = []
    for _ in range(n_steps):
        pos = pos + h
        pix = tuple(int(round(p)) for p in pos)
        if not all(0 <= c < d for c, d in zip(pix, dims)):
            break
        if not pixels or pix != pixels[-1]:
            pixels.append(pix)
        if rank == 2:
            theta = rng.uniform(-MAX_TURN, MAX_TURN)
            cos_t, sin_t = math.cos(theta), math.sin(theta)
            h = np.array([h[0] * cos_t - h[1] * sin_t,
                          h[0] * sin_t + h[1] * cos_t])
        else:
            # bounded-magnitude nudge keeps the turn angle under ~MAX_TURN
            h = _unit(h + rng.uniform(-1.0, 1.0, rank) * math.tan(MAX_TURN))
    return pixels


def _random_heading(rng, rank):
    if rank == 2:
        theta = rng.uniform(0.0, 2.0 * math.pi)
        return np.array([math.cos(theta), math.sin(theta)])
    v = rng.normal(size=3)
    return _unit(v) if np.linalg.norm(v) > 1e-9 else np.array([1.0, 0.0, 0.0])


def _render(pixel_lists, dims, thickness):
    mask = np.zeros(dims, dtype=bool)
    for pixels in pixel_lists:
        for p in pixels:
            mask[p] = True
    iters = (thickness - 1) // 2
    if iters > 0:
        mask = ndimage.binary_dilation(
            mask, structure=np.ones((3,) * len(dims), dtype=bool), iterations=iters)
    return mask


def generate_case(cfg: SynthConfig):
    """Return (image, gt, likelihood) fully determined by cfg.seed."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed & 0xFFFFFFFFFFFFFFFF))
    dims = cfg.dims
    rank = len(dims)
    margin = max(2, min(dims) // 6)
    length = 2 * max(dims)

    curves = []
    for _ in range(cfg.n_curves):
        start = [rng.uniform(margin, d - 1 - margin) for d in dims]
        pixels = _walk(rng, dims, start, _random_heading(rng, rank), length)
        curves.append(pixels)

    gt_mask = _render(curves, dims, cfg.thickness)

    # corrupted centerlines: drop whole segments, then grow spur branches
    kept = []
    spurs = []
    for pixels in curves:
        seg_len = max(6, len(pixels) // 6) if pixels else 1
        n_segs = max(1, math.ceil(len(pixels) / seg_len))
        for i in range(n_segs):
            seg = pixels[i * seg_len:(i + 1) * seg_len]
            if rng.random() >= cfg.gap_rate:
                kept.append(seg)
        for i in range(n_segs):
            if rng.random() < cfg.spur_rate and pixels:
                anchor = pixels[rng.integers(0, len(pixels))]
                spur = _walk(rng, dims, anchor, _random_heading(rng, rank),
                             max(5, max(dims) // 6))
                spurs.append(spur)

    corrupted = _render(kept + spurs, dims, cfg.thickness).astype(np.float64)
    if cfg.blur_sigma > 0:
        corrupted = ndimage.gaussian_filter(corrupted, cfg.blur_sigma, truncate=3.0)
    if cfg.noise_sigma > 0:
        corrupted = corrupted + rng.normal(0.0, cfg.noise_sigma, dims)
    likelihood = np.clip(corrupted, 0.0, 1.0)

    image = gt_mask.astype(np.float64)
    if cfg.blur_sigma > 0:
        image = ndimage.gaussian_filter(image, cfg.blur_sigma, truncate=3.0)
    texture = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=3.0)
    peak = np.abs(texture).max()
    if peak > 0:
        image = image + TEXTURE_AMPLITUDE * texture / peak
    image = np.clip(image, 0.0, 1.0)

    return ScalarGrid(image), BinaryGrid(gt_mask), ScalarGrid(likelihood)
