"""Per-case structure graph: node crops, adjacency, and soft labels.

Node crops of the image and unperturbed likelihood are taken around the
deterministic structure's bounding-box center, so they stay constant across
resampling; only the structure-presence channel and the soft labels change
per sample draw. Soft labels are computed on full-grid sample masks,
independent of crop geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grids import BinaryGrid, Coord, ScalarGrid, load_grid
from .morse import MorseSkeleton, structure_adjacency
from .probdmt import SampledSkeleton

DEFAULT_BOX = 32


@dataclass(frozen=True)
class Case:
    """One dataset entry; gt is absent at inference time."""

    case_id: str
    image: ScalarGrid
    likelihood: ScalarGrid
    gt: BinaryGrid | None = None
    backbone_seg: BinaryGrid | None = None

    def segmentation(self) -> BinaryGrid:
        if self.backbone_seg is not None:
            return self.backbone_seg
        return BinaryGrid(self.likelihood.data >= 0.5)


def load_case(case_dir) -> Case:
    """Read one case directory (image/likelihood required, gt/seg optional)."""
    case_dir = Path(case_dir)
    def opt(name):
        p = case_dir / name
        return load_grid(p) if p.exists() else None

    image = load_grid(case_dir / "image.grd")
    likelihood = load_grid(case_dir / "likelihood.grd")
    return Case(case_id=case_dir.name, image=image, likelihood=likelihood,
                gt=opt("gt.grd"), backbone_seg=opt("seg.grd"))


def load_corpus(corpus_dir) -> list[Case]:
    """All case_* subdirectories of a corpus directory, sorted by name."""
    corpus_dir = Path(corpus_dir)
    dirs = sorted(p for p in corpus_dir.iterdir()
                  if p.is_dir() and p.name.startswith("case_"))
    if not dirs:
        raise FileNotFoundError(f"no case_* directories under {corpus_dir}")
    return [load_case(p) for p in dirs]


@dataclass(frozen=True)
class NodeInput:
    structure_id: int
    x_crop: ScalarGrid
    f_crop: ScalarGrid
    m_crop: BinaryGrid
    persistence: float
    center: Coord


@dataclass(frozen=True)
class StructureGraph:
    nodes: tuple[NodeInput, ...]
    adjacency: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.nodes)
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency shape must match node count")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels must match node count")


def crop_array(arr: np.ndarray, center: Coord, box: int) -> np.ndarray:
    """Axis-aligned window of side ``box`` with ``center`` at index box/2,
    zero-padded where it exits the grid."""
    if box <= 0 or box % 2 != 0:
        raise ValueError(f"box must be an even positive integer, got {box}")
    dims = arr.shape
    if not all(0 <= c < d for c, d in zip(center, dims)) or len(center) != len(dims):
        raise ValueError(f"center {center} out of bounds for dims {dims}")
    out = np.zeros((box,) * len(dims), dtype=arr.dtype)
    src, dst = [], []
    for c, d in zip(center, dims):
        lo = c - box // 2
        hi = lo + box
        src.append(slice(max(lo, 0), min(hi, d)))
        dst.append(slice(max(lo, 0) - lo, box - (hi - min(hi, d))))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def crop(grid: ScalarGrid | BinaryGrid, center: Coord, box: int):
    out = crop_array(grid.data, center, box)
    return BinaryGrid(out) if isinstance(grid, BinaryGrid) else ScalarGrid(out)


def structure_center(path, dims) -> Coord:
    """Bounding-box center of the deterministic path, clamped in-bounds."""
    return tuple(
        min(dims[a] - 1, (min(c[a] for c in path) + max(c[a] for c in path)) // 2)
        for a in range(len(dims)))


def render_crop_mask(sample: SampledSkeleton, center: Coord, box: int, dims) -> BinaryGrid:
    out = np.zeros((box,) * len(dims), dtype=bool)
    for c in sample.path:
        local = tuple(ci - (cc - box // 2) for ci, cc in zip(c, center))
        if all(0 <= li < box for li in local):
            out[local] = True
    return BinaryGrid(out)


def soft_label(sample: SampledSkeleton, gt: BinaryGrid) -> float:
    """Fraction of the full-grid sample mask overlapping the ground truth."""
    mask = sample.full_mask(gt.dims)
    return float(gt.data[mask].mean())


def build_graph(skel: MorseSkeleton, samples: dict[int, SampledSkeleton],
                x: ScalarGrid, f: ScalarGrid, gt: BinaryGrid | None = None,
                box: int = DEFAULT_BOX, adjacency: np.ndarray | None = None) -> StructureGraph:
    """Assemble node inputs from one sample draw plus the fixed adjacency.

    ``adjacency`` may be passed in to reuse the (sample-independent) relation
    computed once per case; it is recomputed from deterministic paths
    otherwise.
    """
    missing = [e.id for e in skel.structures if e.id not in samples]
    if missing:
        raise ValueError(f"missing samples for structure ids {missing}")
    if adjacency is None:
        adjacency = structure_adjacency(skel)
    nodes = []
    labels = [] if gt is not None else None
    for e in skel.structures:
        center = structure_center(e.path, f.dims)
        sample = samples[e.id]
        nodes.append(NodeInput(
            structure_id=e.id,
            x_crop=crop(x, center, box),
            f_crop=crop(f, center, box),
            m_crop=render_crop_mask(sample, center, box, f.dims),
            persistence=e.persistence,
            center=center))
        if gt is not None:
            labels.append(soft_label(sample, gt))
    return StructureGraph(
        nodes=tuple(nodes), adjacency=adjacency,
        labels=None if labels is None else np.asarray(labels, dtype=np.float64))
