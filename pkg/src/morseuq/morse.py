"""Morse decomposition of a likelihood map into saddle-maximum structures.

The likelihood is treated as a terrain and swept top-down as a superlevel-set
merge tree: pixels enter in strictly decreasing (value, then lexicographic
coordinate) order, a pixel with no processed neighbor is a maximum, one
adjacent to k >= 2 distinct components is a saddle emitting k-1 persistence
pairs under the elder rule. Ridge paths ("legs") follow steepest-ascent
parent links from the saddle's entry neighbors.

Only pixels with f >= bg_threshold are processed, keeping the structure count
proportional to foreground size on sparse curvilinear fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grids import Coord, ScalarGrid, full_offsets, strides_for

DEFAULT_BG_THRESHOLD = 0.01


@dataclass(frozen=True)
class PersistencePair:
    """One merge event: the saddle kills the younger of the merged maxima."""

    saddle: Coord
    max: Coord
    persistence: float
    young_entry: Coord
    elder_entry: Coord


@dataclass(frozen=True)
class MergeTree:
    dims: tuple[int, ...]
    order: np.ndarray
    parent_link: np.ndarray
    component_root: np.ndarray
    pairs: list[PersistencePair]
    bg_threshold: float

    def maxima(self) -> list[Coord]:
        idx = np.where(self.parent_link == -2)[0]
        return [tuple(int(v) for v in np.unravel_index(i, self.dims)) for i in idx]


@dataclass(frozen=True)
class Structure:
    """One saddle-to-maximum leg of the skeleton.

    The path starts at the saddle, steps into the component merged there, and
    ascends parent links to the maximum it terminates at; f is non-decreasing
    along it. ``is_leg_of`` ties the two legs born from the same pair.
    """

    id: int
    saddle: Coord
    max: Coord
    path: tuple[Coord, ...]
    persistence: float
    is_leg_of: int


@dataclass(frozen=True)
class MorseSkeleton:
    structures: tuple[Structure, ...]
    source_dims: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.structures)


def _processing_order(flat: np.ndarray, bg_threshold: float):
    keep = np.where(flat >= bg_threshold)[0]
    order = keep[np.lexsort((keep, -flat[keep]))].astype(np.int64)
    pos = np.full(flat.shape[0], -1, dtype=np.int64)
    pos[order] = np.arange(order.shape[0], dtype=np.int64)
    return order, pos


def build_merge_tree(f: ScalarGrid, bg_threshold: float = DEFAULT_BG_THRESHOLD) -> MergeTree:
    """Sweep f top-down and return parent links, components, and pairs."""
    flat = np.ascontiguousarray(f.data.reshape(-1))
    if not np.all(np.isfinite(flat)):
        raise ValueError("likelihood must be finite everywhere")
    dims = np.asarray(f.dims, dtype=np.int64)
    strides = strides_for(f.dims)
    offsets = full_offsets(f.rank)
    order, pos = _processing_order(flat, bg_threshold)
    n = flat.shape[0]
    # -2 marks maxima so unprocessed pixels (-1) stay distinguishable
    parent_link = np.full(n, -1, dtype=np.int64)
    uf_parent = np.arange(n, dtype=np.int64)
    uf_size = np.ones(n, dtype=np.int64)
    birth = np.full(n, -1, dtype=np.int64)
    cap = max(order.shape[0], 1)
    pair_saddle = np.empty(cap, dtype=np.int64)
    pair_max = np.empty(cap, dtype=np.int64)
    pair_yentry = np.empty(cap, dtype=np.int64)
    pair_eentry = np.empty(cap, dtype=np.int64)
    n_pairs = kernels.merge_sweep(order, pos, dims, strides, offsets,
                                  parent_link, uf_parent, uf_size, birth,
                                  pair_saddle, pair_max, pair_yentry, pair_eentry)
    maxima_mask = np.zeros(n, dtype=bool)
    maxima_mask[order] = True
    maxima_mask &= parent_link == -1
    parent_link[maxima_mask] = -2
    component_root = np.empty(n, dtype=np.int64)
    kernels.resolve_roots(uf_parent, pos, birth, component_root)

    def coord(i):
        return tuple(int(v) for v in np.unravel_index(int(i), f.dims))

    pairs = []
    for i in range(int(n_pairs)):
        s, m = int(pair_saddle[i]), int(pair_max[i])
        pairs.append(PersistencePair(
            saddle=coord(s), max=coord(m),
            persistence=float(flat[m] - flat[s]),
            young_entry=coord(pair_yentry[i]), elder_entry=coord(pair_eentry[i])))
    return MergeTree(dims=f.dims, order=order, parent_link=parent_link,
                     component_root=component_root, pairs=pairs,
                     bg_threshold=bg_threshold)


def extract_structures(tree: MergeTree, f: ScalarGrid) -> MorseSkeleton:
    """Emit two legs per pair: saddle -> entry neighbor -> ascent to a maximum.

    The terminal maximum is whatever the parent-link chain reaches; on generic
    fields this is the paired maximum (young leg) and the elder survivor.
    Both legs carry the pair's persistence.
    """
    if tuple(tree.dims) != f.dims:
        raise ValueError("tree was built from a grid of different dims")
    strides = strides_for(tree.dims)
    buf = np.empty(max(int(np.prod(tree.dims)), 1), dtype=np.int64)
    # chains never see -2: entry pixels are non-maxima or the chain stops there
    links = np.where(tree.parent_link == -2, -1, tree.parent_link)
    structures: list[Structure] = []
    for pair_id, pair in enumerate(tree.pairs):
        saddle_idx = int(np.ravel_multi_index(pair.saddle, tree.dims))
        for leg, entry in ((0, pair.young_entry), (1, pair.elder_entry)):
            entry_idx = int(np.ravel_multi_index(entry, tree.dims))
            n = kernels.follow_chain(links, entry_idx, buf)
            chain = [saddle_idx] + [int(v) for v in buf[:n]]
            path = tuple(tuple(int(v) for v in np.unravel_index(i, tree.dims))
                         for i in chain)
            structures.append(Structure(
                id=2 * pair_id + leg,
                saddle=pair.saddle,
                max=path[-1],
                path=path,
                persistence=pair.persistence,
                is_leg_of=pair_id))
    return MorseSkeleton(structures=tuple(structures), source_dims=f.dims)


def structure_adjacency(skel: MorseSkeleton) -> np.ndarray:
    """Symmetric irreflexive boolean matrix: paths sharing >= 1 coordinate."""
    n = len(skel.structures)
    adj = np.zeros((n, n), dtype=bool)
    by_coord: dict[Coord, list[int]] = {}
    for s in skel.structures:
        for c in s.path:
            by_coord.setdefault(c, []).append(s.id)
    for ids in by_coord.values():
        for a in ids:
            for b in ids:
                if a != b:
                    adj[a, b] = True
    return adj


def skeleton_mask(skel: MorseSkeleton, structure_ids=None) -> np.ndarray:
    """Union of (selected) deterministic paths as a boolean array."""
    mask = np.zeros(skel.source_dims, dtype=bool)
    keep = None if structure_ids is None else set(structure_ids)
    for s in skel.structures:
        if keep is None or s.id in keep:
            for c in s.path:
                mask[c] = True
    return mask
