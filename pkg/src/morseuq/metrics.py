"""Calibration and segmentation/topology metrics.

Structure-level calibration treats each structure as one sample with
confidence 1 - u; ECE follows the binned |accuracy - confidence| gap with N
equal bins (right-inclusive last bin). Segmentation metrics are Dice, a
skeleton-based centerline Dice (skeletons from the Morse decomposition of
each mask's Euclidean distance transform), adjusted Rand index, variation of
information (nats), and per-dimension Betti number errors.

Connectivity conventions: foreground uses full connectivity (8 in 2D, 26 in
3D), its complement the dual 4/6 connectivity.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np
from scipy import ndimage

from .grids import BinaryGrid, ScalarGrid
from .morse import build_merge_tree, extract_structures, skeleton_mask

DEFAULT_BINS = 20


@dataclass(frozen=True)
class CalSample:
    confidence: float
    correct: bool

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class ReliabilityRow:
    bin_index: int
    count: int
    acc: float
    conf: float


def calibration(samples: list[CalSample], n_bins: int = DEFAULT_BINS):
    """Expected calibration error and per-bin reliability rows."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if not samples:
        raise ValueError("calibration requires at least one sample")
    conf = np.array([s.confidence for s in samples])
    corr = np.array([s.correct for s in samples], dtype=bool)
    idx = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    n = len(samples)
    rows = []
    ece = 0.0
    for i in range(n_bins):
        sel = idx == i
        count = int(sel.sum())
        if count == 0:
            rows.append(ReliabilityRow(bin_index=i, count=0, acc=0.0, conf=0.0))
            continue
        acc = float(corr[sel].mean())
        avg_conf = float(conf[sel].mean())
        rows.append(ReliabilityRow(bin_index=i, count=count, acc=acc, conf=avg_conf))
        ece += count / n * abs(acc - avg_conf)
    return float(ece), rows


def _check_dims(pred: BinaryGrid, gt: BinaryGrid):
    if pred.dims != gt.dims:
        raise ValueError(f"dim mismatch: {pred.dims} vs {gt.dims}")


def dice(pred: BinaryGrid, gt: BinaryGrid) -> float:
    _check_dims(pred, gt)
    p, g = pred.data, gt.data
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def mask_skeleton(mask: BinaryGrid) -> np.ndarray:
    """Centerline of a mask: Morse decomposition of its distance transform.

    Union of all saddle-to-maximum paths plus the merge-tree maxima (so a
    single blob without saddles still yields its peak pixel).
    """
    if not mask.data.any():
        return np.zeros(mask.dims, dtype=bool)
    edt = ScalarGrid(ndimage.distance_transform_edt(mask.data))
    tree = build_merge_tree(edt, 0.5)
    out = skeleton_mask(extract_structures(tree, edt))
    for c in tree.maxima():
        out[c] = True
    return out


def cldice(pred: BinaryGrid, gt: BinaryGrid) -> float:
    _check_dims(pred, gt)
    if not pred.data.any() and not gt.data.any():
        return 1.0
    if not pred.data.any() or not gt.data.any():
        return 0.0
    s_pred = mask_skeleton(pred)
    s_gt = mask_skeleton(gt)
    tprec = (s_pred & gt.data).sum() / s_pred.sum()
    tsens = (s_gt & pred.data).sum() / s_gt.sum()
    if tprec + tsens == 0.0:
        return 0.0
    return float(2.0 * tprec * tsens / (tprec + tsens))


def _cluster_labels(mask: BinaryGrid) -> np.ndarray:
    """Foreground components (full connectivity) 1..k, background cluster 0."""
    structure = np.ones((3,) * mask.rank, dtype=bool)
    labels, _ = ndimage.label(mask.data, structure=structure)
    return labels


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def ari_voi(pred: BinaryGrid, gt: BinaryGrid) -> tuple[float, float]:
    """Adjusted Rand index and variation of information between the two
    component clusterings (pixel contingency table, entropies in nats)."""
    _check_dims(pred, gt)
    table = _contingency(_cluster_labels(pred).ravel(), _cluster_labels(gt).ravel())
    n = table.sum()

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    expected = sum_a * sum_b / comb2(float(n))
    max_index = (sum_a + sum_b) / 2.0
    ari = 1.0 if max_index == expected else (sum_ij - expected) / (max_index - expected)

    p = table.astype(np.float64) / n
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    voi = float(-(p[nz] * np.log(p[nz] / np.broadcast_to(pb, p.shape)[nz])).sum()
                - (p[nz] * np.log(p[nz] / np.broadcast_to(pa, p.shape)[nz])).sum())
    return float(ari), max(voi, 0.0)


def _count_components(mask: np.ndarray, full: bool) -> int:
    rank = mask.ndim
    structure = (np.ones((3,) * rank, dtype=bool) if full
                 else ndimage.generate_binary_structure(rank, 1))
    _, count = ndimage.label(mask, structure=structure)
    return int(count)


def _euler_cubical(mask: np.ndarray) -> int:
    """Euler characteristic of the union of closed unit cells: V - E + F (- C).

    Cell counts come from OR-ing voxel incidences onto the vertex/edge/face
    lattices; matches full-connectivity foreground topology.
    """
    rank = mask.ndim
    m = mask.astype(bool)
    chi = 0
    for dim_cells in range(rank + 1):
        sign = 1 if dim_cells % 2 == 0 else -1
        # cells of dimension dim_cells: choose which axes the cell spans
        for axes in combinations(range(rank), dim_cells):
            grid_shape = tuple(m.shape[a] + (0 if a in axes else 1)
                               for a in range(rank))
            present = np.zeros(grid_shape, dtype=bool)
            spans = [(0,) if a in axes else (0, 1) for a in range(rank)]
            for shift in product(*spans):
                sl_src, sl_dst = [], []
                for a in range(rank):
                    if a in axes:
                        sl_src.append(slice(None))
                        sl_dst.append(slice(None))
                    else:
                        sl_src.append(slice(None))
                        sl_dst.append(slice(shift[a], shift[a] + m.shape[a]))
                tmp = np.zeros(grid_shape, dtype=bool)
                tmp[tuple(sl_dst)] = m[tuple(sl_src)]
                present |= tmp
            chi += sign * int(present.sum())
    return chi


def betti_numbers(mask: BinaryGrid) -> tuple[int, ...]:
    """(b0, b1) in 2D, (b0, b1, b2) in 3D.

    b0: full-connectivity foreground components. Top dimension: dual-
    connectivity components of the padded complement minus the outside.
    Middle dimension in 3D closes the rank via the cubical Euler formula.
    """
    m = mask.data
    b0 = _count_components(m, full=True)
    padded_bg = ~np.pad(m, 1)
    holes = _count_components(padded_bg, full=False) - 1
    if mask.rank == 2:
        return b0, holes
    chi = _euler_cubical(m)
    b2 = holes
    b1 = b0 + b2 - chi
    return b0, b1, b2


def betti_errors(pred: BinaryGrid, gt: BinaryGrid) -> tuple[int, ...]:
    _check_dims(pred, gt)
    bp = betti_numbers(pred)
    bg = betti_numbers(gt)
    return tuple(abs(a - b) for a, b in zip(bp, bg))
