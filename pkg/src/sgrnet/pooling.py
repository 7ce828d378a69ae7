"""Top-k graph pyramid and the recurrent, GRU-gated fusion back down it.

Node selection is a hard, piecewise-constant choice. Gradients reach the
projection vector only through the gate values of the selected rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, StructureError
from .graph import SpectralGraph, gcn_layer, message_passing, rows_matmul
from .numerics import (
    Tensor,
    add,
    as_tensor,
    expand,
    hadamard,
    reshape,
    scale,
    scatter_rows,
    sigmoid,
    take_rows,
    tanh,
)

DEFAULT_RATIO = 0.5
DEFAULT_LEVELS = 2


def pool_size(n: int, ratio: float) -> int:
    """``ceil(ratio * n)``, at least 1."""
    if not 0 < ratio <= 1:
        raise ParameterError(f"pool ratio must lie in (0, 1], got {ratio}")
    # round first so 0.3 * 10 does not ceil to 4
    return max(1, math.ceil(round(ratio * n, 9)))


@dataclass
class LevelRecord:
    graph: SpectralGraph  # graph before pooling
    index: np.ndarray  # selected nodes, ascending; (k,) or (B, k)
    scores: Tensor  # sigmoid gate for every node of ``graph``
    pooled: Tensor  # selected rows scaled by their gate

    @property
    def k(self) -> int:
        return self.index.shape[-1]


@dataclass
class Hierarchy:
    features: list[Tensor]  # X_0 .. X_L
    graphs: list[SpectralGraph]  # G_0 .. G_L
    levels: list[LevelRecord] = field(default_factory=list)  # levels[p] pools G_p into G_{p+1}

    @property
    def depth(self) -> int:
        return len(self.levels)

    def sizes(self) -> list[int]:
        return [x.shape[-2] for x in self.features]

    def validate(self) -> None:
        if len(self.features) != self.depth + 1 or len(self.graphs) != self.depth + 1:
            raise StructureError("hierarchy needs L+1 feature maps and graphs for L pooling levels")
        sizes = self.sizes()
        for p, rec in enumerate(self.levels):
            if sizes[p + 1] >= sizes[p]:
                raise StructureError(f"node counts must strictly decrease, got {sizes}")
            if rec.graph.n != sizes[p] or rec.k != sizes[p + 1]:
                raise StructureError(f"level {p + 1} record does not match feature sizes {sizes}")


@dataclass
class GruParams:
    W_z: Tensor
    U_z: Tensor
    W_r: Tensor
    U_r: Tensor
    W_o: Tensor
    U_o: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self.tensors()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2 or len(set(next(iter(shapes)))) != 1:
            raise DimensionError(f"GRU matrices must all be the same square shape, got {shapes}")

    def tensors(self) -> list[Tensor]:
        return [self.W_z, self.U_z, self.W_r, self.U_r, self.W_o, self.U_o]


def select_top(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores (ties to the lower index), ascending."""
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def topk_pool(x, g: SpectralGraph, w_theta, k: int):
    """Score nodes by ``sigmoid(x @ w_theta)``, keep the top ``k`` rows gated by their score.

    Returns ``(pooled, record, pooled_graph)``.
    """
    x = as_tensor(x)
    n, c = x.shape[-2], x.shape[-1]
    if not 1 <= k <= n:
        raise ParameterError(f"k must satisfy 1 <= k <= n (k={k}, n={n})")
    w_theta = as_tensor(w_theta, like=x)
    if w_theta.shape != (c,):
        raise DimensionError(f"projection vector must have shape ({c},), got {w_theta.shape}")
    proj = reshape(rows_matmul(x, reshape(w_theta, (c, 1))), x.shape[:-1])
    s = sigmoid(proj)
    index = select_top(s.data, k)
    gate = expand(take_rows(s, index), axis=-1, size=c)
    pooled = hadamard(take_rows(x, index), gate)
    rec = LevelRecord(graph=g, index=index, scores=s, pooled=pooled)
    return pooled, rec, g.subgraph(index)


def graph_unpool(h, record: LevelRecord, theta) -> Tensor:
    """Scatter ``h`` back to the recorded node positions, then message-pass on the pre-pool graph."""
    h = as_tensor(h)
    if h.shape[-2] != record.k:
        raise DimensionError(f"h has {h.shape[-2]} rows, record selected {record.k}")
    return message_passing(scatter_rows(h, record.index, record.graph.n), record.graph, theta)


def gru_step(x, h_prev, p: GruParams) -> Tensor:
    """Gated blend of ``h_prev`` with a candidate computed from ``x`` (row-wise, shared matrices)."""
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    if x.shape != h_prev.shape:
        raise DimensionError(f"x {x.shape} and h_prev {h_prev.shape} differ")
    z = sigmoid(add(rows_matmul(x, p.W_z), rows_matmul(h_prev, p.U_z)))
    r = sigmoid(add(rows_matmul(x, p.W_r), rows_matmul(h_prev, p.U_r)))
    cand = tanh(add(rows_matmul(x, p.W_o), rows_matmul(hadamard(r, h_prev), p.U_o)))
    return add(hadamard(scale(z, -1.0, 1.0), h_prev), hadamard(z, cand))


def decouple(x, g: SpectralGraph, gcn_weights, pool_vectors, ratio: float = DEFAULT_RATIO) -> Hierarchy:
    """Build the pyramid X_0..X_L.

    ``gcn_weights[p]`` is the list of GCN matrices applied at level ``p``
    (``len(pool_vectors) + 1`` levels); each GCN is rectified.
    """
    if len(gcn_weights) != len(pool_vectors) + 1:
        raise StructureError("need one GCN stack per level (L + 1) and one projection per pooling step (L)")
    h = as_tensor(x)
    for w in gcn_weights[0]:
        h = gcn_layer(g, h, w)
    hier = Hierarchy(features=[h], graphs=[g])
    for p, w_theta in enumerate(pool_vectors, start=1):
        k = pool_size(hier.graphs[-1].n, ratio)
        if k >= hier.graphs[-1].n:
            raise StructureError(f"pooling level {p} would not shrink a {k}-node graph")
        pooled, rec, g_next = topk_pool(hier.features[-1], hier.graphs[-1], w_theta, k)
        h = pooled
        for w in gcn_weights[p]:
            h = gcn_layer(g_next, h, w)
        hier.levels.append(rec)
        hier.graphs.append(g_next)
        hier.features.append(h)
    return hier


def ensemble(hier: Hierarchy, thetas, p: GruParams) -> Tensor:
    """Recurrent fusion: start from the coarsest level, unpool and gate down to level 0.

    ``thetas[q]`` is the message-passing matrix used when unpooling through
    ``hier.levels[q]``.
    """
    hier.validate()
    depth = hier.depth
    if depth < 1:
        raise StructureError("ensemble needs at least one pooling level")
    if len(thetas) != depth:
        raise StructureError(f"need {depth} unpooling matrices, got {len(thetas)}")
    h = hier.features[depth]
    for step in range(1, depth + 1):
        q = depth - step
        h = gru_step(hier.features[q], graph_unpool(h, hier.levels[q], thetas[q]), p)
    return h


def sum_ensemble(hier: Hierarchy) -> Tensor:
    """Ablation stand-in for :func:`ensemble`: plain scatter-upsampling plus summation."""
    hier.validate()
    h = hier.features[hier.depth]
    for q in range(hier.depth - 1, -1, -1):
        rec = hier.levels[q]
        h = add(hier.features[q], scatter_rows(h, rec.index, rec.graph.n))
    return h
