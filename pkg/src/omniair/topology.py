"""Sparse hybrid topology: fixed candidate edges, input-conditioned weights.

The edge SET is built once (geographic k-NN plus semantic k-NN over raw
feature vectors) and never changes during training; only the edge weights
are recomputed per batch. Edges are stored as flat arrays with per-node
contiguous segments so every edge computation is a single vectorized pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geo import gaussian_static_weight, haversine, knn_geo

KIND_GEO = 0
KIND_SEM = 1


@dataclass
class HybridGraph:
    """Per-node ordered candidate edges in flat segment form.

    offsets has length n_nodes+1; node i owns edges offsets[i]:offsets[i+1].
    ``dst`` holds the neighbor a message is gathered FROM; the owning node is
    the one it is aggregated INTO.
    """

    n_nodes: int
    offsets: np.ndarray  # (N+1,) intp
    dst: np.ndarray  # (E,) intp
    kind: np.ndarray  # (E,) int8, 0 geo / 1 sem
    km: np.ndarray  # (E,) great-circle distance
    w_static: np.ndarray  # (E,) Gaussian kernel weight
    cross: bool = False  # True when dst indexes a different node set than owner
    owner: np.ndarray = field(init=False)  # (E,) owner node per edge

    def __post_init__(self):
        counts = np.diff(self.offsets)
        self.owner = np.repeat(np.arange(self.n_nodes), counts)
        if not self.cross and np.any(self.dst == self.owner):
            raise ValueError("graph contains self-edges")

    @property
    def n_edges(self) -> int:
        return len(self.dst)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)


def semantic_knn(
    vectors: np.ndarray, k: int, exclude: list[set[int]]
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k nearest rows by Euclidean distance, skipping excluded targets.

    Ties break toward the lower index. ``exclude[i]`` holds targets already
    used by node i (self is always excluded).
    """
    n = len(vectors)
    sq = (vectors**2).sum(axis=1)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in range(n):
        d2 = sq + sq[i] - 2.0 * (vectors @ vectors[i])
        d2 = np.maximum(d2, 0.0)
        d2[i] = np.inf
        if exclude[i]:
            d2[list(exclude[i])] = np.inf
        order = np.lexsort((np.arange(n), d2))[:k]
        idx[i] = order
        dist[i] = np.sqrt(d2[order])
    return idx, dist


def build_hybrid_graph(
    points: np.ndarray,
    feature_vectors: np.ndarray,
    k_geo: int,
    k_sem: int,
    kappa_km: float,
    workers: int = 1,
) -> HybridGraph:
    """Geographic k-NN edges followed by semantic k-NN edges per node."""
    n = len(points)
    if n <= k_geo + k_sem:
        raise ValueError(f"need more than k_geo+k_sem={k_geo + k_sem} stations, got {n}")
    geo_idx, geo_km = knn_geo(points, k_geo, workers=workers)
    exclude = [set(row) for row in geo_idx]
    if k_sem > 0:
        sem_idx, _ = semantic_knn(feature_vectors, k_sem, exclude)
    else:
        sem_idx = np.empty((n, 0), dtype=np.int64)
    dst_rows, kind_rows, km_rows = [], [], []
    for i in range(n):
        sem_km = haversine(points[i], points[sem_idx[i]]) if k_sem > 0 else np.empty(0)
        dst_rows.append(np.concatenate([geo_idx[i], sem_idx[i]]))
        kind_rows.append(
            np.concatenate([np.full(k_geo, KIND_GEO), np.full(k_sem, KIND_SEM)])
        )
        km_rows.append(np.concatenate([geo_km[i], np.atleast_1d(sem_km)]))
    dst = np.concatenate(dst_rows).astype(np.intp)
    kind = np.concatenate(kind_rows).astype(np.int8)
    km = np.concatenate(km_rows)
    offsets = np.arange(n + 1, dtype=np.intp) * (k_geo + k_sem)
    return HybridGraph(n, offsets, dst, kind, km, gaussian_static_weight(km, kappa_km))


def attach_new_nodes(
    base_points: np.ndarray,
    base_vectors: np.ndarray,
    new_points: np.ndarray,
    new_vectors: np.ndarray,
    k_geo: int,
    k_sem: int,
    kappa_km: float,
) -> HybridGraph:
    """Directed attachment edges for unseen nodes.

    Every returned edge is owned by a new node and gathers from a base node,
    so base-node computations are untouched by construction. ``dst`` indexes
    the BASE station list.
    """
    n_base = len(base_points)
    if n_base < k_geo + k_sem:
        raise ValueError("not enough base stations to attach new nodes")
    dst_rows, kind_rows, km_rows = [], [], []
    for p, v in zip(new_points, new_vectors):
        d = haversine(p, base_points)
        order = np.lexsort((np.arange(n_base), d))
        geo = order[:k_geo]
        d2 = ((base_vectors - v) ** 2).sum(axis=1)
        d2[geo] = np.inf
        sem = np.lexsort((np.arange(n_base), d2))[:k_sem]
        dst_rows.append(np.concatenate([geo, sem]))
        kind_rows.append(np.concatenate([np.full(k_geo, KIND_GEO), np.full(k_sem, KIND_SEM)]))
        km_rows.append(np.concatenate([d[geo], d[sem]]))
    n_new = len(new_points)
    dst = np.concatenate(dst_rows).astype(np.intp) if n_new else np.empty(0, dtype=np.intp)
    kind = np.concatenate(kind_rows).astype(np.int8) if n_new else np.empty(0, dtype=np.int8)
    km = np.concatenate(km_rows) if n_new else np.empty(0)
    offsets = np.arange(n_new + 1, dtype=np.intp) * (k_geo + k_sem)
    w_static = gaussian_static_weight(km, kappa_km) if len(km) else np.empty(0)
    return HybridGraph(n_new, offsets, dst, kind, km, w_static, cross=True)


# -- dynamic edge weights (tape ops) -------------------------------------------


def dynamic_attention(h_own: Tensor, h_nbr: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Signed attention per edge: tanh(a . leaky_relu(W_e [h_i || h_j]))."""
    w = params["attn.we"]
    a = params["attn.a"]
    pair = ad.concat([h_own, h_nbr], axis=-1)
    if pair.shape[-1] != w.shape[0]:
        raise ValueError(f"attention input dim {pair.shape[-1]} != {w.shape[0]}")
    hidden = ad.leaky_relu(ad.matmul(pair, w), slope=0.1)
    score = ad.matmul(hidden, a.reshape(-1, 1))
    return ad.tanh(score.reshape(score.shape[:-1]))


def fuse_gate(
    h_own: Tensor,
    h_nbr: Tensor,
    w_static: np.ndarray,
    alpha: Tensor,
    params: dict[str, Tensor],
) -> tuple[Tensor, Tensor]:
    """Gate between static kernel weight and dynamic attention.

    Returns (g, w_dyn) with w_dyn = g * w_static + (1 - g) * alpha.
    """
    b, e, _ = h_own.shape
    ws = ad.broadcast_to(Tensor(w_static.reshape(1, -1, 1)), (b, e, 1))
    x = ad.concat([h_own, h_nbr, ws], axis=-1)
    score = ad.matmul(x, params["edge_gate.w"].reshape(-1, 1)) + params["edge_gate.b"]
    g = ad.sigmoid(score.reshape((b, e)))
    w_stat = Tensor(w_static.reshape(1, -1))
    w_dyn = g * w_stat + (1.0 - g) * alpha
    return g, w_dyn


def predict_beta(h_nodes: Tensor, params: dict[str, Tensor], k_max: float) -> Tensor:
    """Per-node continuous truncation threshold in (0, k_max)."""
    h = ad.tanh(ad.matmul(h_nodes, params["beta_mlp.w1"]) + params["beta_mlp.b1"])
    s = ad.matmul(h, params["beta_mlp.w2"]) + params["beta_mlp.b2"]
    return k_max * ad.sigmoid(s.reshape(s.shape[:-1]))


def compute_ranks(w_dyn: np.ndarray, graph: HybridGraph, mode: str = "abs") -> np.ndarray:
    """1-based importance ranks within each node's candidate list.

    ``abs`` ranks by descending magnitude, ``signed`` by descending value;
    ties break toward the lower target index. Detached from differentiation.
    """
    if mode not in ("abs", "signed"):
        raise ValueError(f"unknown rank mode {mode!r}")
    b, e = w_dyn.shape
    key = -np.abs(w_dyn) if mode == "abs" else -w_dyn
    owner = np.broadcast_to(graph.owner, (b, e)).reshape(-1)
    batch = np.broadcast_to(np.arange(b)[:, None], (b, e)).reshape(-1)
    dst = np.broadcast_to(graph.dst, (b, e)).reshape(-1)
    order = np.lexsort((dst, key.reshape(-1), owner, batch))
    # sorted layout groups each (batch, owner) segment contiguously, with the
    # group for (q, i) starting at q*E + offsets[i]
    seg_start = np.repeat(graph.offsets[:-1], graph.counts)
    flat_start = batch * e + np.broadcast_to(seg_start, (b, e)).reshape(-1)
    ranks = np.empty(b * e, dtype=np.int64)
    ranks[order] = np.arange(b * e) - flat_start[order] + 1
    return ranks.reshape(b, e)


def prune_mask(ranks: np.ndarray, beta: Tensor, graph: HybridGraph, eta: float) -> Tensor:
    """Soft retention mask sigmoid(-eta * (rank - beta_owner)) per edge."""
    beta_e = ad.gather(beta, graph.owner, axis=1)
    return ad.sigmoid(-eta * (Tensor(ranks.astype(np.float64)) - beta_e))


def normalize_weights(
    w_dyn: Tensor,
    mask: Tensor,
    graph: HybridGraph,
    eps: float = 1e-8,
    mode: str = "abs",
) -> Tensor:
    """Masked weights renormalized within each node's candidate list.

    ``abs`` divides by the sum of |w * m| (safe for signed weights);
    ``paper`` divides by the plain sum.
    """
    if mode not in ("abs", "plain"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    wm = w_dyn * mask
    summand = ad.abs_(wm) if mode == "abs" else wm
    denom = ad.segment_sum(summand, graph.offsets, axis=1) + eps
    return wm / ad.gather(denom, graph.owner, axis=1)


def edge_weights(
    h_nodes: Tensor,
    graph: HybridGraph,
    params: dict[str, Tensor],
    *,
    k_max: float,
    eta: float,
    eps: float = 1e-8,
    rank_mode: str = "abs",
    norm_mode: str = "abs",
    h_src: Tensor | None = None,
) -> dict[str, Tensor | np.ndarray]:
    """Full dynamic-weight pipeline for one batch of node features.

    ``h_nodes`` is (B, N, D) for the nodes owning the edges; ``h_src``
    (defaulting to ``h_nodes``) is gathered for edge targets, which lets
    unseen nodes attach to a separately computed base state.
    """
    if graph.n_edges == 0:
        b = h_nodes.shape[0]
        empty = Tensor(np.zeros((b, 0)))
        return {"alpha": empty, "gate": empty, "w_dyn": empty, "ranks": np.zeros((b, 0)),
                "mask": empty, "w_tilde": empty, "beta": predict_beta(h_nodes, params, k_max)}
    h_src = h_nodes if h_src is None else h_src
    h_own = ad.gather(h_nodes, graph.owner, axis=1)
    h_nbr = ad.gather(h_src, graph.dst, axis=1)
    alpha = dynamic_attention(h_own, h_nbr, params)
    gate, w_dyn = fuse_gate(h_own, h_nbr, graph.w_static, alpha, params)
    beta = predict_beta(h_nodes, params, k_max)
    ranks = compute_ranks(w_dyn.data, graph, mode=rank_mode)
    mask = prune_mask(ranks, beta, graph, eta)
    w_tilde = normalize_weights(w_dyn, mask, graph, eps=eps, mode=norm_mode)
    return {
        "alpha": alpha,
        "gate": gate,
        "w_dyn": w_dyn,
        "beta": beta,
        "ranks": ranks,
        "mask": mask,
        "w_tilde": w_tilde,
    }
