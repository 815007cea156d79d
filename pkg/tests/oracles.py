"""Independent brute-force oracles the implementation is audited against.

These deliberately avoid the production code paths: components are recomputed
from scratch by BFS, Euler characteristics come from bit-quad counting, and
calibration/overlap scores from direct formula evaluation.
"""

from collections import deque
from itertools import product

import numpy as np


def _neighbors_full(c, dims):
    rank = len(dims)
    for off in product((-1, 0, 1), repeat=rank):
        if not any(off):
            continue
        q = tuple(ci + oi for ci, oi in zip(c, off))
        if all(0 <= qi < di for qi, di in zip(q, dims)):
            yield q


def _components(cells, dims):
    """BFS connected components (full connectivity) of a set of coords."""
    remaining = set(cells)
    comps = []
    while remaining:
        seed = remaining.pop()
        comp = {seed}
        queue = deque([seed])
        while queue:
            c = queue.popleft()
            for q in _neighbors_full(c, dims):
                if q in remaining:
                    remaining.remove(q)
                    comp.add(q)
                    queue.append(q)
        comps.append(comp)
    return comps


def merge_pairs_oracle(arr: np.ndarray, bg_threshold: float):
    """Top-down threshold sweep tracking component births/merges by BFS.

    Pixels enter one at a time in decreasing (value, then lexicographic
    coordinate) order; after each addition the processed set's components are
    recomputed from scratch. A pixel touching k >= 2 components is a saddle
    pairing, per the elder rule, with the birth maximum of each component
    other than the eldest. Returns a list of (saddle, max, persistence).
    """
    dims = arr.shape

    def key(c):
        return (-arr[c], c)

    cells = sorted((tuple(int(v) for v in c) for c in np.argwhere(arr >= bg_threshold)),
                   key=key)
    processed = []
    pairs = []
    for p in cells:
        comps = _components(processed, dims)
        nbrs = set(_neighbors_full(p, dims))
        touching = [comp for comp in comps if comp & nbrs]
        if len(touching) >= 2:
            births = sorted((min(comp, key=key) for comp in touching), key=key)
            for young in births[1:]:
                pairs.append((p, young, float(arr[young] - arr[p])))
        processed.append(p)
    return pairs


def canon_pairs(pairs):
    return sorted((tuple(s), tuple(m), round(p, 12)) for s, m, p in pairs)


def flood_fill_count(mask: np.ndarray, conn_offsets) -> int:
    """Number of connected components of True cells under given offsets."""
    dims = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for c in map(tuple, np.argwhere(mask)):
        if seen[c]:
            continue
        count += 1
        queue = deque([c])
        seen[c] = True
        while queue:
            cur = queue.popleft()
            for off in conn_offsets:
                q = tuple(ci + oi for ci, oi in zip(cur, off))
                if all(0 <= qi < di for qi, di in zip(q, dims)) and mask[q] and not seen[q]:
                    seen[q] = True
                    queue.append(q)
    return count


OFFS_2D_8 = [o for o in product((-1, 0, 1), repeat=2) if any(o)]
OFFS_2D_4 = [(-1, 0), (1, 0), (0, -1), (0, 1)]


def betti_2d_oracle(mask: np.ndarray):
    """(beta0, beta1) for a 2D mask: 8-connected flood fill plus bit-quad Euler.

    Gray's bit-quad formula for 8-connectivity: chi = (Q1 - Q3 - 2*Qd) / 4
    counted over all 2x2 windows of the background-padded image; then
    beta1 = beta0 - chi.
    """
    beta0 = flood_fill_count(mask, OFFS_2D_8)
    padded = np.pad(mask.astype(np.int64), 1)
    q1 = q3 = qd = 0
    h, w = padded.shape
    for y in range(h - 1):
        for x in range(w - 1):
            quad = padded[y:y + 2, x:x + 2]
            s = int(quad.sum())
            if s == 1:
                q1 += 1
            elif s == 3:
                q3 += 1
            elif s == 2 and quad[0, 0] == quad[1, 1]:
                qd += 1
    chi = (q1 - q3 - 2 * qd) / 4
    return beta0, int(round(beta0 - chi))


def contingency_oracle(labels_a, labels_b):
    """Dense contingency table between two integer labelings of the same cells."""
    la = np.asarray(labels_a).ravel()
    lb = np.asarray(labels_b).ravel()
    ua, ia = np.unique(la, return_inverse=True)
    ub, ib = np.unique(lb, return_inverse=True)
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    for x, y in zip(ia, ib):
        table[x, y] += 1
    return table


def ari_oracle(labels_a, labels_b) -> float:
    table = contingency_oracle(labels_a, labels_b)
    n = table.sum()
    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = sum(comb(v) for v in table.ravel())
    sum_a = sum(comb(v) for v in table.sum(axis=1))
    sum_b = sum(comb(v) for v in table.sum(axis=0))
    expected = sum_a * sum_b / comb(n)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


def voi_oracle(labels_a, labels_b) -> float:
    table = contingency_oracle(labels_a, labels_b).astype(np.float64)
    n = table.sum()
    p = table / n
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    h_ab = 0.0
    h_ba = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                h_ab -= p[i, j] * np.log(p[i, j] / pb[j])
                h_ba -= p[i, j] * np.log(p[i, j] / pa[i])
    return h_ab + h_ba


def ece_oracle(confidences, corrects, n_bins: int) -> float:
    conf = np.asarray(confidences, dtype=float)
    corr = np.asarray(corrects, dtype=bool)
    total = 0.0
    n = len(conf)
    for i in range(n_bins):
        lo = i / n_bins
        hi = (i + 1) / n_bins
        if i == n_bins - 1:
            sel = (conf >= lo) & (conf <= hi)
        else:
            sel = (conf >= lo) & (conf < hi)
        if sel.sum() == 0:
            continue
        acc = corr[sel].mean()
        avg_conf = conf[sel].mean()
        total += sel.sum() / n * abs(acc - avg_conf)
    return total
