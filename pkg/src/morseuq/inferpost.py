"""T-run MC inference, acceptance thresholding, overlay, and uncertainty diffusion.

The Morse skeleton is computed once per case and shared across the T
stochastic runs; each run resamples every structure and makes one
dropout-active forward pass. Per-structure means are squashed into a [0,1)
uncertainty via u = 1 - exp(-mean variance), and a foreground-restricted
multi-source shortest path spreads structure values over the overlaid mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grids import (BinaryGrid, Coord, ScalarGrid, full_offsets, offset_costs,
                    strides_for)
from .morse import (MorseSkeleton, build_merge_tree, extract_structures,
                    skeleton_mask, structure_adjacency)
from .probdmt import SamplerConfig, sample_skeleton
from .regressor import RegressorParams, forward
from .structgraph import Case, build_graph

DEFAULT_RUNS = 5


@dataclass(frozen=True)
class StructureEstimate:
    structure_id: int
    p_bar: float
    var_bar: float
    u_norm: float
    accepted: bool
    sample_paths: tuple[tuple[Coord, ...], ...]


@dataclass(frozen=True)
class CaseResult:
    estimates: tuple[StructureEstimate, ...]
    final_mask: BinaryGrid
    heatmap: ScalarGrid
    skeletal_mask: BinaryGrid


def uncertainty_from_variance(var_bar: float) -> float:
    """Monotone squash of the mean predicted variance into [0, 1)."""
    return float(1.0 - np.exp(-var_bar))


def mc_inference(params: RegressorParams, case: Case, sampler_cfg: SamplerConfig,
                 runs: int = DEFAULT_RUNS, *, box: int = 32,
                 bg_threshold: float = 0.01, seed: int = 0, dropout: bool = True,
                 skel: MorseSkeleton | None = None,
                 adjacency: np.ndarray | None = None) -> list[StructureEstimate]:
    """Aggregate per-structure predictions over ``runs`` stochastic passes."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if skel is None:
        skel = extract_structures(build_merge_tree(case.likelihood, bg_threshold),
                                  case.likelihood)
    if not len(skel):
        return []
    if adjacency is None:
        adjacency = structure_adjacency(skel)
    p_draws = np.empty((runs, len(skel)))
    v_draws = np.empty((runs, len(skel)))
    paths: list[list] = [[] for _ in skel.structures]
    for t in range(1, runs + 1):
        samples = sample_skeleton(skel, case.likelihood, sampler_cfg, t)
        graph = build_graph(skel, samples, case.image, case.likelihood,
                            box=box, adjacency=adjacency)
        drop_seed = None
        if dropout:
            drop_seed = int(np.random.SeedSequence(
                entropy=seed & 0xFFFFFFFFFFFFFFFF,
                spawn_key=(3, t)).generate_state(1)[0])
        preds = forward(params, graph, dropout_seed=drop_seed)
        for i, e in enumerate(skel.structures):
            p_draws[t - 1, i] = preds[i].p_hat
            v_draws[t - 1, i] = preds[i].delta_sq
            paths[i].append(samples[e.id].path)
    out = []
    for i, e in enumerate(skel.structures):
        p_bar = float(p_draws[:, i].mean())
        var_bar = float(v_draws[:, i].mean())
        out.append(StructureEstimate(
            structure_id=e.id, p_bar=p_bar, var_bar=var_bar,
            u_norm=uncertainty_from_variance(var_bar),
            accepted=p_bar >= 0.5, sample_paths=tuple(paths[i])))
    return out


def _assign_labels(fg: np.ndarray, sources: dict[int, list[Coord]]):
    """Nearest-source structure id per foreground pixel (-1 when unreached)."""
    dims = fg.shape
    flat_fg = np.ascontiguousarray(fg.reshape(-1))
    src_pixels, src_labels = [], []
    for sid in sorted(sources):
        for c in sources[sid]:
            src_pixels.append(int(np.ravel_multi_index(c, dims)))
            src_labels.append(sid)
    out_label = np.empty(flat_fg.shape[0], dtype=np.int64)
    out_dist = np.empty(flat_fg.shape[0], dtype=np.float64)
    rank = len(dims)
    kernels.geodesic_assign(
        flat_fg, np.asarray(dims, dtype=np.int64), strides_for(dims),
        full_offsets(rank), offset_costs(rank),
        np.asarray(src_pixels, dtype=np.int64), np.asarray(src_labels, dtype=np.int64),
        out_label, out_dist)
    return out_label.reshape(dims), out_dist.reshape(dims)


def threshold_and_overlay(estimates, skel: MorseSkeleton,
                          backbone_seg: BinaryGrid) -> tuple[BinaryGrid, BinaryGrid]:
    """Accepted skeleton union plus the pruned backbone segmentation.

    Backbone pixels are attributed to their geodesically nearest structure
    (over the union of the backbone and every deterministic path, so paths
    bridging background gaps stay reachable); pixels owned by rejected
    structures are removed, pixels unreachable from any structure survive.
    """
    if tuple(skel.source_dims) != backbone_seg.dims:
        raise ValueError("estimates and backbone dims differ")
    accepted_ids = {e.structure_id for e in estimates if e.accepted}
    skeletal = skeleton_mask(skel, accepted_ids)
    paths_by_id = {s.id: s.path for s in skel.structures}
    domain = backbone_seg.data | skeleton_mask(skel)
    labels, _ = _assign_labels(domain, paths_by_id)
    rejected = np.zeros(len(skel.structures) + 1, dtype=bool)
    for e in estimates:
        if not e.accepted:
            rejected[e.structure_id] = True
    removed = backbone_seg.data & (labels >= 0) & rejected[np.where(labels >= 0, labels, 0)]
    final = (backbone_seg.data & ~removed) | skeletal
    return BinaryGrid(skeletal), BinaryGrid(final)


def diffuse_uncertainty(estimates, skel: MorseSkeleton,
                        final_mask: BinaryGrid) -> ScalarGrid:
    """Spread each accepted structure's uncertainty over its nearest foreground.

    Shortest paths run along final-mask foreground only (unit/diag step
    costs); equidistant pixels take the smaller structure id, and foreground
    unreachable from any accepted skeleton pixel gets uncertainty 1.
    """
    paths_by_id = {s.id: s.path for s in skel.structures}
    sources = {e.structure_id: [c for c in paths_by_id[e.structure_id]
                                if final_mask.data[c]]
               for e in estimates if e.accepted}
    heat = np.zeros(final_mask.dims, dtype=np.float64)
    labels, _ = _assign_labels(final_mask.data, sources)
    fg = final_mask.data
    reached = fg & (labels >= 0)
    if reached.any():
        lut = np.zeros(len(skel.structures) + 1, dtype=np.float64)
        for e in estimates:
            lut[e.structure_id] = e.u_norm
        heat[reached] = lut[labels[reached]]
    heat[fg & (labels < 0)] = 1.0
    return ScalarGrid(heat)


def analyze_case(params: RegressorParams, case: Case, sampler_cfg: SamplerConfig,
                 runs: int = DEFAULT_RUNS, *, box: int = 32,
                 bg_threshold: float = 0.01, seed: int = 0,
                 dropout: bool = True) -> tuple[MorseSkeleton, CaseResult]:
    """Full per-case pipeline: skeleton once, T runs, overlay, heatmap."""
    skel = extract_structures(build_merge_tree(case.likelihood, bg_threshold),
                              case.likelihood)
    adjacency = structure_adjacency(skel)
    estimates = tuple(mc_inference(
        params, case, sampler_cfg, runs, box=box, bg_threshold=bg_threshold,
        seed=seed, dropout=dropout, skel=skel, adjacency=adjacency))
    backbone = case.segmentation()
    skeletal, final = threshold_and_overlay(estimates, skel, backbone)
    heatmap = diffuse_uncertainty(estimates, skel, final)
    return skel, CaseResult(estimates=estimates, final_mask=final,
                            heatmap=heatmap, skeletal_mask=skeletal)
