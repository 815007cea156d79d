"""Hot grid kernels: union-find sweep, ridge chains, greedy walks, geodesic labeling.

Every kernel is written as a plain function over flat row-major arrays and
compiled with numba when available. Set ``MORSEUQ_NO_NUMBA=1`` to force the
pure-Python/NumPy fallback (same source, interpreted); ``HAS_NUMBA`` reports
which path is active. ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

import numpy as np

_DISABLE = os.environ.get("MORSEUQ_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

HAS_NUMBA = False
if not _DISABLE:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if not HAS_NUMBA:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


@njit(cache=True)
def _offset_neighbor(p, offsets, j, dims, strides):
    """Flat index of pixel p shifted by offsets[j], or -1 if out of bounds."""
    rem = p
    q = 0
    for a in range(dims.shape[0]):
        c = rem // strides[a]
        rem -= c * strides[a]
        nc = c + offsets[j, a]
        if nc < 0 or nc >= dims[a]:
            return -1
        q += nc * strides[a]
    return q


@njit(cache=True)
def _find(uf, x):
    root = x
    while uf[root] != root:
        root = uf[root]
    while uf[x] != root:
        nxt = uf[x]
        uf[x] = root
        x = nxt
    return root


@njit(cache=True)
def _union(uf, size, a, b):
    if a == b:
        return a
    if size[a] < size[b]:
        a, b = b, a
    uf[b] = a
    size[a] += size[b]
    return a


@njit(cache=True)
def merge_sweep(order, pos, dims, strides, offsets,
                parent_link, uf_parent, uf_size, birth,
                pair_saddle, pair_max, pair_yentry, pair_eentry):
    """Superlevel-set sweep over pixels in decreasing key order.

    ``order`` lists flat indices sorted by decreasing (value, -coord) key and
    ``pos`` is its inverse (-1 for pixels below the processing threshold).
    Writes the steepest-neighbor link per pixel into ``parent_link`` (-1 for
    maxima), the union-find state into ``uf_parent``/``birth``, and one row
    per saddle-maximum pair into the ``pair_*`` buffers: the dying maximum,
    the saddle's entry neighbor on the young side, and the entry neighbor on
    the elder side. Returns the number of pairs emitted.
    """
    n_off = offsets.shape[0]
    roots = np.empty(n_off, np.int64)
    entries = np.empty(n_off, np.int64)
    n_pairs = 0
    for k in range(order.shape[0]):
        p = order[k]
        best_nb = np.int64(-1)
        n_roots = 0
        for j in range(n_off):
            q = _offset_neighbor(p, offsets, j, dims, strides)
            if q < 0:
                continue
            pq = pos[q]
            if pq < 0 or pq >= k:
                continue
            if best_nb < 0 or pq < pos[best_nb]:
                best_nb = q
            r = _find(uf_parent, q)
            seen = False
            for t in range(n_roots):
                if roots[t] == r:
                    seen = True
                    if pq < pos[entries[t]]:
                        entries[t] = q
                    break
            if not seen:
                roots[n_roots] = r
                entries[n_roots] = q
                n_roots += 1
        if n_roots == 0:
            parent_link[p] = -1
            uf_parent[p] = p
            uf_size[p] = 1
            birth[p] = p
            continue
        parent_link[p] = best_nb
        if n_roots > 1:
            # insertion sort by birth position: eldest component first
            for a in range(1, n_roots):
                ra = roots[a]
                ea = entries[a]
                keyv = pos[birth[ra]]
                b = a - 1
                while b >= 0 and pos[birth[roots[b]]] > keyv:
                    roots[b + 1] = roots[b]
                    entries[b + 1] = entries[b]
                    b -= 1
                roots[b + 1] = ra
                entries[b + 1] = ea
            elder_entry = entries[0]
            for a in range(1, n_roots):
                pair_saddle[n_pairs] = p
                pair_max[n_pairs] = birth[roots[a]]
                pair_yentry[n_pairs] = entries[a]
                pair_eentry[n_pairs] = elder_entry
                n_pairs += 1
                if pos[entries[a]] < pos[elder_entry]:
                    elder_entry = entries[a]
        eldest_birth = birth[roots[0]]
        r0 = roots[0]
        for a in range(1, n_roots):
            r0 = _union(uf_parent, uf_size, r0, roots[a])
        uf_parent[p] = p
        uf_size[p] = 1
        r0 = _union(uf_parent, uf_size, r0, p)
        birth[r0] = eldest_birth
    return n_pairs


@njit(cache=True)
def resolve_roots(uf_parent, pos, birth, out_root):
    """Map every processed pixel to its component's maximum (birth pixel)."""
    for i in range(uf_parent.shape[0]):
        if pos[i] < 0:
            out_root[i] = -1
        else:
            out_root[i] = birth[_find(uf_parent, i)]


@njit(cache=True)
def follow_chain(parent_link, start, buf):
    """Walk parent links from ``start`` until a maximum; returns chain length."""
    c = start
    n = 0
    while True:
        buf[n] = c
        n += 1
        nxt = parent_link[c]
        if nxt < 0:
            return n
        c = nxt


@njit(cache=True)
def greedy_walk(f_n, dims, strides, offsets, start, target, gamma, max_step, path_out):
    """Distance-regularized greedy walk from ``start`` toward ``target``.

    Candidates are unvisited in-bounds neighbors scored by
    gamma/dist(target) + (1-gamma)*f_n, the target itself winning outright.
    Ties go to the lexicographically smallest coordinate. Returns
    (path length, reached flag); ``path_out`` must hold max_step+1 entries.
    """
    rank = dims.shape[0]
    visited = np.zeros(f_n.shape[0], np.bool_)
    tc = np.empty(rank, np.int64)
    rem = target
    for a in range(rank):
        tc[a] = rem // strides[a]
        rem -= tc[a] * strides[a]
    c = start
    visited[c] = True
    path_out[0] = c
    length = 1
    step = 0
    while c != target and step < max_step:
        best = np.int64(-1)
        best_q = -np.inf
        for j in range(offsets.shape[0]):
            q = _offset_neighbor(c, offsets, j, dims, strides)
            if q < 0 or visited[q]:
                continue
            if q == target:
                best = q
                break
            d2 = 0.0
            remq = q
            for a in range(rank):
                cq = remq // strides[a]
                remq -= cq * strides[a]
                dd = float(tc[a] - cq)
                d2 += dd * dd
            score = gamma / np.sqrt(d2) + (1.0 - gamma) * f_n[q]
            if score > best_q:
                best_q = score
                best = q
        if best < 0:
            break
        c = best
        visited[c] = True
        path_out[length] = c
        length += 1
        step += 1
    return length, c == target


@njit(cache=True)
def _heap_less(d1, l1, p1, d2, l2, p2):
    if d1 != d2:
        return d1 < d2
    if l1 != l2:
        return l1 < l2
    return p1 < p2


@njit(cache=True)
def geodesic_assign(fg, dims, strides, offsets, off_costs,
                    src_pixels, src_labels, out_label, out_dist):
    """Multi-source Dijkstra over foreground pixels with Euclidean step costs.

    Each foreground pixel gets the label of its nearest source; exact-distance
    ties resolve to the smaller label. Unreached pixels keep label -1 and
    distance +inf.
    """
    n = fg.shape[0]
    for i in range(n):
        out_dist[i] = np.inf
        out_label[i] = -1
    cap = 1024
    heap_d = np.empty(cap, np.float64)
    heap_l = np.empty(cap, np.int64)
    heap_p = np.empty(cap, np.int64)
    hn = 0
    for s in range(src_pixels.shape[0]):
        p = src_pixels[s]
        lab = src_labels[s]
        if not fg[p]:
            continue
        if out_dist[p] > 0.0 or (out_dist[p] == 0.0 and lab < out_label[p]):
            out_dist[p] = 0.0
            out_label[p] = lab
    # push finalized sources
    for s in range(src_pixels.shape[0]):
        p = src_pixels[s]
        if not fg[p] or out_label[p] != src_labels[s] or out_dist[p] != 0.0:
            continue
        if hn == cap:
            cap *= 2
            nd = np.empty(cap, np.float64)
            nd[:hn] = heap_d[:hn]
            heap_d = nd
            nl = np.empty(cap, np.int64)
            nl[:hn] = heap_l[:hn]
            heap_l = nl
            npx = np.empty(cap, np.int64)
            npx[:hn] = heap_p[:hn]
            heap_p = npx
        i = hn
        heap_d[i] = 0.0
        heap_l[i] = src_labels[s]
        heap_p[i] = p
        hn += 1
        while i > 0:
            par = (i - 1) // 2
            if _heap_less(heap_d[i], heap_l[i], heap_p[i],
                          heap_d[par], heap_l[par], heap_p[par]):
                heap_d[i], heap_d[par] = heap_d[par], heap_d[i]
                heap_l[i], heap_l[par] = heap_l[par], heap_l[i]
                heap_p[i], heap_p[par] = heap_p[par], heap_p[i]
                i = par
            else:
                break
    while hn > 0:
        d = heap_d[0]
        lab = heap_l[0]
        p = heap_p[0]
        hn -= 1
        heap_d[0] = heap_d[hn]
        heap_l[0] = heap_l[hn]
        heap_p[0] = heap_p[hn]
        i = 0
        while True:
            lc = 2 * i + 1
            rc = lc + 1
            sm = i
            if lc < hn and _heap_less(heap_d[lc], heap_l[lc], heap_p[lc],
                                      heap_d[sm], heap_l[sm], heap_p[sm]):
                sm = lc
            if rc < hn and _heap_less(heap_d[rc], heap_l[rc], heap_p[rc],
                                      heap_d[sm], heap_l[sm], heap_p[sm]):
                sm = rc
            if sm == i:
                break
            heap_d[i], heap_d[sm] = heap_d[sm], heap_d[i]
            heap_l[i], heap_l[sm] = heap_l[sm], heap_l[i]
            heap_p[i], heap_p[sm] = heap_p[sm], heap_p[i]
            i = sm
        if d > out_dist[p] or (d == out_dist[p] and lab > out_label[p]):
            continue
        for j in range(offsets.shape[0]):
            q = _offset_neighbor(p, offsets, j, dims, strides)
            if q < 0 or not fg[q]:
                continue
            nd_ = d + off_costs[j]
            if nd_ < out_dist[q] or (nd_ == out_dist[q] and lab < out_label[q]):
                out_dist[q] = nd_
                out_label[q] = lab
                if hn == cap:
                    cap *= 2
                    ndv = np.empty(cap, np.float64)
                    ndv[:hn] = heap_d[:hn]
                    heap_d = ndv
                    nlv = np.empty(cap, np.int64)
                    nlv[:hn] = heap_l[:hn]
                    heap_l = nlv
                    npv = np.empty(cap, np.int64)
                    npv[:hn] = heap_p[:hn]
                    heap_p = npv
                i = hn
                heap_d[i] = nd_
                heap_l[i] = lab
                heap_p[i] = q
                hn += 1
                while i > 0:
                    par = (i - 1) // 2
                    if _heap_less(heap_d[i], heap_l[i], heap_p[i],
                                  heap_d[par], heap_l[par], heap_p[par]):
                        heap_d[i], heap_d[par] = heap_d[par], heap_d[i]
                        heap_l[i], heap_l[par] = heap_l[par], heap_l[i]
                        heap_p[i], heap_p[par] = heap_p[par], heap_p[i]
                        i = par
                    else:
                        break


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    dims = np.array([3, 3], np.int64)
    strides = np.array([3, 1], np.int64)
    offsets = np.array([[dy, dx] for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                        if (dy, dx) != (0, 0)], np.int64)
    costs = np.sqrt((offsets.astype(np.float64) ** 2).sum(axis=1))
    f = np.arange(9, dtype=np.float64)
    order = np.argsort(-f).astype(np.int64)
    pos = np.empty(9, np.int64)
    pos[order] = np.arange(9)
    parent = np.full(9, -1, np.int64)
    uf = np.arange(9, dtype=np.int64)
    sz = np.ones(9, np.int64)
    birth = np.full(9, -1, np.int64)
    buf = np.empty(9, np.int64)
    merge_sweep(order, pos, dims, strides, offsets, parent, uf, sz, birth,
                buf.copy(), buf.copy(), buf.copy(), buf.copy())
    resolve_roots(uf, pos, birth, buf)
    follow_chain(parent, 0, buf)
    path = np.empty(60, np.int64)
    greedy_walk(f, dims, strides, offsets, 0, 8, 0.5, 50, path)
    fg = np.ones(9, np.bool_)
    geodesic_assign(fg, dims, strides, offsets, costs,
                    np.array([0], np.int64), np.array([0], np.int64),
                    np.empty(9, np.int64), np.empty(9, np.float64))
