"""Joint structure regressor: conv encoder, GCN stack, attenuation loss.

Architecture (rank-generic, shared 2D/3D code path):
  per node: [x_crop, f_crop, m_crop] as 3 channels
    -> conv(3->24, kernel 3 per axis, stride 1, zero pad 1) -> ReLU -> dropout
    -> conv(24->32)                                         -> ReLU -> dropout
    -> global max pool per channel -> concat persistence (33 features)
  graph: three symmetric-normalized graph-conv layers 33->32->64->32, each
  ReLU + dropout, then two 1-wide graph-conv heads for the regression output
  and the log-variance.

Gradients are hand-derived for this fixed stack (dropout masks treated as
constants, max-pool routing to the first argmax in row-major order) and
audited against central finite differences before training is trusted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .morse import structure_adjacency
from .probdmt import SamplerConfig, sample_skeleton
from .structgraph import Case, StructureGraph, build_graph

GCN_DIMS = ((33, 32), (32, 64), (64, 32))
DROPOUT_RATE = 0.2
CKPT_MAGIC = "MUQCKPT1"

_TENSOR_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                 "gcn1_w", "gcn1_b", "gcn2_w", "gcn2_b", "gcn3_w", "gcn3_b",
                 "head_p_w", "head_p_b", "head_s_w", "head_s_b")


@dataclass
class RegressorParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    gcn_w: list[np.ndarray]
    gcn_b: list[np.ndarray]
    head_p_w: np.ndarray
    head_p_b: np.ndarray
    head_s_w: np.ndarray
    head_s_b: np.ndarray

    @property
    def rank(self) -> int:
        return self.conv1_w.ndim - 2

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        flat = [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b]
        for w, b in zip(self.gcn_w, self.gcn_b):
            flat += [w, b]
        flat += [self.head_p_w, self.head_p_b, self.head_s_w, self.head_s_b]
        return list(zip(_TENSOR_NAMES, flat))

    def copy(self) -> "RegressorParams":
        return RegressorParams(
            conv1_w=self.conv1_w.copy(), conv1_b=self.conv1_b.copy(),
            conv2_w=self.conv2_w.copy(), conv2_b=self.conv2_b.copy(),
            gcn_w=[w.copy() for w in self.gcn_w],
            gcn_b=[b.copy() for b in self.gcn_b],
            head_p_w=self.head_p_w.copy(), head_p_b=self.head_p_b.copy(),
            head_s_w=self.head_s_w.copy(), head_s_b=self.head_s_b.copy())


@dataclass(frozen=True)
class NodePrediction:
    p_hat: float
    s: float

    @property
    def delta_sq(self) -> float:
        return math.exp(self.s)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    dropout_rate: float = DROPOUT_RATE
    epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


def _he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_params(rank: int, seed: int = 0) -> RegressorParams:
    """He-uniform fan-in weights, zero biases, drawn in declaration order."""
    if rank not in (2, 3):
        raise ValueError("rank must be 2 or 3")
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))
    k = (3,) * rank
    n_k = 3 ** rank
    conv1_w = _he_uniform(rng, (24, 3) + k, 3 * n_k)
    conv2_w = _he_uniform(rng, (32, 24) + k, 24 * n_k)
    gcn_w = [_he_uniform(rng, dims, dims[0]) for dims in GCN_DIMS]
    return RegressorParams(
        conv1_w=conv1_w, conv1_b=np.zeros(24),
        conv2_w=conv2_w, conv2_b=np.zeros(32),
        gcn_w=gcn_w, gcn_b=[np.zeros(d[1]) for d in GCN_DIMS],
        head_p_w=_he_uniform(rng, (32, 1), 32), head_p_b=np.zeros(1),
        head_s_w=_he_uniform(rng, (32, 1), 32), head_s_b=np.zeros(1))


# ------------------------------ conv kernels ------------------------------ #
# Activations are channel-major (C, n, *S). Convolutions run as 3^rank
# accumulating GEMMs over contiguous shifted views of one zero-padded buffer:
# a kernel offset is a constant flat-index shift on the padded grid, so no
# column matrix is ever materialized. Positions whose shift crosses a node or
# row boundary produce garbage that only lands outside the valid crop.


def _pad_grid(x: np.ndarray) -> np.ndarray:
    rank = x.ndim - 2
    return np.pad(x, [(0, 0), (0, 0)] + [(1, 1)] * rank)


def _shift_offsets(padded_spatial) -> np.ndarray:
    """Flat-index shift per kernel offset on the padded spatial grid."""
    strides = [1]
    for s in reversed(padded_spatial[1:]):
        strides.insert(0, strides[0] * s)
    return np.array([sum(o * st for o, st in zip(off, strides))
                     for off in product(range(3), repeat=len(padded_spatial))],
                    dtype=np.int64)


def _valid_slice(n, padded_spatial):
    return (slice(None), slice(None)) + tuple(slice(0, s - 2)
                                              for s in padded_spatial)


def _conv_forward(pad: np.ndarray, w, b):
    """pad: (Cin, n, *(S+2)) -> z: (Cout, n, *S), stride 1, zero padding 1."""
    c, n = pad.shape[:2]
    padded_spatial = pad.shape[2:]
    offs = _shift_offsets(padded_spatial)
    m = n * int(np.prod(padded_spatial))
    length = m - int(offs[-1])
    flat = pad.reshape(c, m)
    out_ch = w.shape[0]
    # (K, Cout, Cin) contiguous so each GEMM gets a contiguous weight block
    wk = np.ascontiguousarray(
        w.reshape(out_ch, c, -1).transpose(2, 0, 1).astype(pad.dtype))
    acc = np.zeros((out_ch, length), dtype=pad.dtype)
    tmp = np.empty((out_ch, length), dtype=pad.dtype)
    for k, o in enumerate(offs):
        np.matmul(wk[k], flat[:, o:o + length], out=tmp)
        acc += tmp
    y = np.zeros((out_ch, m), dtype=pad.dtype)
    y[:, :length] = acc
    z = y.reshape((out_ch, n) + tuple(padded_spatial))[_valid_slice(n, padded_spatial)]
    z = np.ascontiguousarray(z)
    z += b.astype(pad.dtype).reshape((out_ch,) + (1,) * (z.ndim - 1))
    return z


def _conv_backward_weights(dz, pad, w_shape):
    """Weight/bias grads from the output gradient and the padded input."""
    out_ch = dz.shape[0]
    c, n = pad.shape[:2]
    padded_spatial = pad.shape[2:]
    offs = _shift_offsets(padded_spatial)
    m = n * int(np.prod(padded_spatial))
    length = m - int(offs[-1])
    flat = pad.reshape(c, m)
    dz_ext = np.zeros((out_ch, n) + tuple(padded_spatial), dtype=dz.dtype)
    dz_ext[_valid_slice(n, padded_spatial)] = dz
    dz_flat = dz_ext.reshape(out_ch, m)[:, :length]
    dw = np.empty((out_ch, c, len(offs)), dtype=dz.dtype)
    for k, o in enumerate(offs):
        dw[:, :, k] = dz_flat @ flat[:, o:o + length].T
    return dw.reshape(w_shape), dz.reshape(out_ch, -1).sum(axis=1)


# ------------------------------ graph layers ------------------------------ #

def normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    """Kipf-style D^{-1/2} (A + I) D^{-1/2} with self loops."""
    a = adj.astype(np.float64) + np.eye(adj.shape[0])
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def _dropout_masks(graph_n, spatial, seed, rate, dtype):
    if seed is None:
        return None
    keep = 1.0 - rate
    rng = np.random.default_rng(
        np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))
    shapes = [(24, graph_n) + tuple(spatial), (32, graph_n) + tuple(spatial),
              (graph_n, GCN_DIMS[0][1]), (graph_n, GCN_DIMS[1][1]),
              (graph_n, GCN_DIMS[2][1])]
    draw_dtype = np.float32 if dtype == np.float32 else np.float64
    scale = np.asarray(1.0 / keep, dtype=dtype)
    return [(rng.random(s, dtype=draw_dtype) < keep) * scale for s in shapes]


def features_from_graph(graph: StructureGraph, dtype=np.float64):
    """Channel-major (3, n, *S) feature tensor and the (n,) persistence vector."""
    feats = np.stack([
        np.stack([node.x_crop.data for node in graph.nodes]),
        np.stack([node.f_crop.data for node in graph.nodes]),
        np.stack([node.m_crop.data for node in graph.nodes]).astype(np.float64),
    ]).astype(dtype)
    pers = np.array([node.persistence for node in graph.nodes], dtype=dtype)
    return feats, pers


def _forward_cache(params, graph, dropout_seed=None, dropout_rate=DROPOUT_RATE,
                   dtype=np.float64):
    if not graph.nodes:
        raise ValueError("graph must be nonempty")
    x, pers = features_from_graph(graph, dtype)
    n = x.shape[1]
    spatial = x.shape[2:]
    if len(spatial) != params.rank:
        raise ValueError(f"graph rank {len(spatial)} != params rank {params.rank}")
    masks = _dropout_masks(n, spatial, dropout_seed, dropout_rate, dtype)
    cache = {"x": x, "pers": pers, "masks": masks, "spatial": spatial, "n": n}

    pad1 = _pad_grid(x)
    z1 = _conv_forward(pad1, params.conv1_w, params.conv1_b)
    h1 = np.maximum(z1, 0.0)
    if masks:
        h1 = h1 * masks[0]
    pad2 = _pad_grid(h1)
    z2 = _conv_forward(pad2, params.conv2_w, params.conv2_b)
    h2 = np.maximum(z2, 0.0)
    if masks:
        h2 = h2 * masks[1]
    flat2 = h2.reshape(32, n, -1)
    argmax = flat2.argmax(axis=2)
    pooled = np.take_along_axis(flat2, argmax[:, :, None], axis=2)[:, :, 0]
    feat = np.concatenate([pooled.T, pers[:, None]], axis=1)  # (n, 33)

    a_hat = normalized_adjacency(graph.adjacency).astype(dtype)
    g = feat
    gcn_inputs, gcn_z = [], []
    for layer, (w, b) in enumerate(zip(params.gcn_w, params.gcn_b)):
        ag = a_hat @ g
        z = ag @ w.astype(dtype) + b.astype(dtype)
        gcn_inputs.append(ag)
        gcn_z.append(z)
        g = np.maximum(z, 0.0)
        if masks:
            g = g * masks[2 + layer]
    ag_final = a_hat @ g
    p_hat = (ag_final @ params.head_p_w.astype(dtype) + params.head_p_b.astype(dtype))[:, 0]
    s = (ag_final @ params.head_s_w.astype(dtype) + params.head_s_b.astype(dtype))[:, 0]

    cache.update(pad1=pad1, z1=z1, pad2=pad2, z2=z2, argmax=argmax,
                 a_hat=a_hat, gcn_inputs=gcn_inputs, gcn_z=gcn_z,
                 ag_final=ag_final, p_hat=p_hat, s=s)
    return cache


def forward(params: RegressorParams, graph: StructureGraph,
            dropout_seed=None, dropout_rate: float = DROPOUT_RATE,
            dtype=np.float64):
    """Per-node predictions; dropout off when ``dropout_seed`` is None."""
    cache = _forward_cache(params, graph, dropout_seed, dropout_rate, dtype)
    return [NodePrediction(p_hat=float(p), s=float(sv))
            for p, sv in zip(cache["p_hat"], cache["s"])]


def loss_uq(preds, labels) -> float:
    """Attenuation loss: mean of residual^2/(2 exp(s)) + s/2 over nodes."""
    if len(preds) != len(labels):
        raise ValueError("preds and labels must have equal length")
    p = np.array([pr.p_hat for pr in preds])
    s = np.array([pr.s for pr in preds])
    z = np.asarray(labels, dtype=np.float64)
    return float(np.mean(0.5 * (p - z) ** 2 / np.exp(s) + 0.5 * s))


def _loss_and_grads(params, graph, labels, dropout_seed=None,
                    dropout_rate=DROPOUT_RATE, dtype=np.float64):
    cache = _forward_cache(params, graph, dropout_seed, dropout_rate, dtype)
    n = cache["n"]
    spatial = cache["spatial"]
    masks = cache["masks"]
    z = np.asarray(labels, dtype=dtype)
    p_hat, s = cache["p_hat"], cache["s"]
    resid = p_hat - z
    inv_var = np.exp(-s)
    loss = float(np.mean(0.5 * resid ** 2 * inv_var + 0.5 * s))

    dp = (resid * inv_var / n).astype(dtype)
    ds = ((0.5 - 0.5 * resid ** 2 * inv_var) / n).astype(dtype)

    a_hat = cache["a_hat"]
    ag_final = cache["ag_final"]
    d_head_p_w = ag_final.T @ dp[:, None]
    d_head_p_b = np.array([dp.sum()])
    d_head_s_w = ag_final.T @ ds[:, None]
    d_head_s_b = np.array([ds.sum()])
    dg = a_hat @ (dp[:, None] @ params.head_p_w.T.astype(dtype)
                  + ds[:, None] @ params.head_s_w.T.astype(dtype))

    d_gcn_w = [None] * 3
    d_gcn_b = [None] * 3
    for layer in (2, 1, 0):
        if masks:
            dg = dg * masks[2 + layer]
        dz = dg * (cache["gcn_z"][layer] > 0.0)
        d_gcn_w[layer] = cache["gcn_inputs"][layer].T @ dz
        d_gcn_b[layer] = dz.sum(axis=0)
        dg = a_hat @ (dz @ params.gcn_w[layer].T.astype(dtype))

    # dz2 is nonzero only at each (channel, node) argmax position, so conv2's
    # backward gathers/scatters those positions instead of dense matmuls
    dpooled = dg[:, :32].T  # (32, n)
    argmax = cache["argmax"]
    pad2 = cache["pad2"]
    padded_spatial = pad2.shape[2:]
    p_total = int(np.prod(spatial))
    n_k = 3 ** len(spatial)
    z2_at = np.take_along_axis(cache["z2"].reshape(32, n, p_total), argmax[:, :, None],
                               axis=2)[:, :, 0]
    vals = dpooled * (z2_at > 0.0)
    if masks:
        m1_at = np.take_along_axis(masks[1].reshape(32, n, p_total),
                                   argmax[:, :, None], axis=2)[:, :, 0]
        vals = vals * m1_at
    d_conv2_b = vals.sum(axis=1).astype(np.float64)
    # anchor-corner flat index of each argmax position on the padded grid
    coords = np.unravel_index(argmax, spatial)  # rank arrays of shape (32, n)
    pad_strides = [1]
    for s_ in reversed(padded_spatial[1:]):
        pad_strides.insert(0, pad_strides[0] * s_)
    ps = int(np.prod(padded_spatial))
    q = np.arange(n)[None, :] * ps
    for a in range(len(spatial)):
        q = q + coords[a] * pad_strides[a]
    offs = _shift_offsets(padded_spatial)
    pad2_flat = pad2.reshape(24, -1)
    gathered = pad2_flat[:, q.reshape(-1)[None, :] + offs[:, None]]  # (24, K, A)
    d_conv2_w = np.einsum("ckon,on->ock",
                          gathered.reshape(24, n_k, 32, n), vals,
                          ).reshape(params.conv2_w.shape)
    # dh1: scatter W2^T columns weighted by vals onto the padded grid
    w2d = params.conv2_w.reshape(32, 24 * n_k).astype(dtype)
    dca = w2d.T[:, :, None] * vals[None, :, :]  # (24*K, 32, n)
    dca = dca.reshape(24, n_k, 32 * n)
    buf_cl = np.zeros((n * ps, 24), dtype=dtype)
    pos = (q.reshape(-1)[None, :] + offs[:, None]).reshape(-1)  # (K*A,)
    np.add.at(buf_cl, pos, dca.transpose(1, 2, 0).reshape(n_k * 32 * n, 24))
    dh1_pad = np.moveaxis(buf_cl.reshape((n,) + tuple(padded_spatial) + (24,)),
                          -1, 0)
    inner = (slice(None), slice(None)) + tuple(slice(1, 1 + s) for s in spatial)
    dh1 = np.ascontiguousarray(dh1_pad[inner])
    if masks:
        dh1 = dh1 * masks[0]
    dz1 = dh1 * (cache["z1"] > 0.0)
    d_conv1_w, d_conv1_b = _conv_backward_weights(dz1, cache["pad1"],
                                                  params.conv1_w.shape)

    grads = RegressorParams(
        conv1_w=d_conv1_w.astype(np.float64), conv1_b=d_conv1_b.astype(np.float64),
        conv2_w=d_conv2_w.astype(np.float64), conv2_b=d_conv2_b.astype(np.float64),
        gcn_w=[g.astype(np.float64) for g in d_gcn_w],
        gcn_b=[g.astype(np.float64) for g in d_gcn_b],
        head_p_w=d_head_p_w.astype(np.float64), head_p_b=d_head_p_b.astype(np.float64),
        head_s_w=d_head_s_w.astype(np.float64), head_s_b=d_head_s_b.astype(np.float64))
    return loss, grads


def backward(params: RegressorParams, graph: StructureGraph, labels,
             dropout_seed=None, dropout_rate: float = DROPOUT_RATE,
             dtype=np.float64) -> RegressorParams:
    """Analytic gradients of loss_uq, same shapes as the parameters."""
    return _loss_and_grads(params, graph, labels, dropout_seed, dropout_rate,
                           dtype)[1]


# --------------------------------- Adam ----------------------------------- #

class AdamState:
    def __init__(self, params: RegressorParams):
        self.m = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.v = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.t = 0

    def step(self, params: RegressorParams, grads: RegressorParams, cfg: TrainConfig):
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for (name, p), (_, g) in zip(params.tensors(), grads.tensors()):
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)


# -------------------------------- training -------------------------------- #

def _case_template(case: Case, bg_threshold: float):
    from .morse import build_merge_tree, extract_structures

    tree = build_merge_tree(case.likelihood, bg_threshold)
    skel = extract_structures(tree, case.likelihood)
    return skel, structure_adjacency(skel)


def train(corpus: list[Case], sampler_cfg: SamplerConfig, train_cfg: TrainConfig,
          box: int = 32, bg_threshold: float = 0.01,
          params: RegressorParams | None = None, compute_dtype=np.float32):
    """Joint training over a labeled corpus; returns (params, loss trace).

    Per epoch and case: resample every structure's skeleton (run index =
    epoch), rebuild presence crops and soft labels, run a seeded-dropout
    forward/backward pass, and take one Adam step. Cases with an empty
    skeleton are skipped. Steps run in float32 by default (params and Adam
    state stay float64); traces are still bit-reproducible under fixed seeds.
    """
    if not corpus:
        raise ValueError("corpus must not be empty")
    for case in corpus:
        if case.gt is None:
            raise ValueError(f"case {case.case_id} lacks ground truth")
    templates = [_case_template(case, bg_threshold) for case in corpus]
    rank = corpus[0].likelihood.rank
    if params is None:
        params = init_params(rank, seed=train_cfg.seed)
    else:
        params = params.copy()
    adam = AdamState(params)
    trace: list[float] = []
    for epoch in range(train_cfg.epochs):
        losses = []
        for idx, (case, (skel, adj)) in enumerate(zip(corpus, templates)):
            if not len(skel):
                continue
            samples = sample_skeleton(skel, case.likelihood, sampler_cfg, epoch)
            graph = build_graph(skel, samples, case.image, case.likelihood,
                                gt=case.gt, box=box, adjacency=adj)
            drop_seed = int(np.random.SeedSequence(
                entropy=train_cfg.seed & 0xFFFFFFFFFFFFFFFF,
                spawn_key=(1, epoch, idx)).generate_state(1)[0])
            loss, grads = _loss_and_grads(params, graph, graph.labels,
                                          dropout_seed=drop_seed,
                                          dropout_rate=train_cfg.dropout_rate,
                                          dtype=compute_dtype)
            adam.step(params, grads, train_cfg)
            losses.append(loss)
        trace.append(float(np.mean(losses)) if losses else 0.0)
    return params, trace


# ------------------------------- checkpoints ------------------------------ #

def save_params(params: RegressorParams, path, box: int = 32) -> None:
    """One JSON header line (shape manifest) plus concatenated f32 payload."""
    tensors = params.tensors()
    header = json.dumps({
        "magic": CKPT_MAGIC, "dtype": "f32", "rank": params.rank, "box": box,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors]})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype=np.float32).tobytes())


def load_params(path) -> tuple[RegressorParams, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != CKPT_MAGIC:
            raise ValueError(f"{path}: not a regressor checkpoint")
        raw = fh.read()
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"]))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
        offset += count * 4
    if offset != len(raw):
        raise ValueError(f"{path}: checkpoint payload length mismatch")
    params = RegressorParams(
        conv1_w=tensors["conv1_w"], conv1_b=tensors["conv1_b"],
        conv2_w=tensors["conv2_w"], conv2_b=tensors["conv2_b"],
        gcn_w=[tensors["gcn1_w"], tensors["gcn2_w"], tensors["gcn3_w"]],
        gcn_b=[tensors["gcn1_b"], tensors["gcn2_b"], tensors["gcn3_b"]],
        head_p_w=tensors["head_p_w"], head_p_b=tensors["head_p_b"],
        head_s_w=tensors["head_s_w"], head_s_b=tensors["head_s_b"])
    return params, header
