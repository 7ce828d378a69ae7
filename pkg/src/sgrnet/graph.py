"""Graphs over spectral embedding channels and their linear operators.

A :class:`SpectralGraph` holds a binary symmetric adjacency. It may carry a
leading batch axis (one independent graph per sample, all with the same node
count), in which case every operator works sample-wise.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError
from .numerics import Tensor, as_tensor, matmul, relu, reshape, transpose

DEFAULT_K = 10
LAPLACIAN_CAP = 4096


@dataclass(frozen=True, eq=False)
class SpectralGraph:
    adjacency: np.ndarray
    similarity: np.ndarray | None = None  # cosine similarity, diagnostics only

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool)
        if a.ndim not in (2, 3) or a.shape[-1] != a.shape[-2]:
            raise DimensionError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, np.swapaxes(a, -1, -2)):
            raise ParameterError("adjacency must be symmetric")
        if np.diagonal(a, axis1=-2, axis2=-1).any():
            raise ParameterError("adjacency must have an empty diagonal")
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[-1]

    @property
    def batched(self) -> bool:
        return self.adjacency.ndim == 3

    def __len__(self) -> int:
        return self.adjacency.shape[0] if self.batched else 1

    def __getitem__(self, b: int) -> "SpectralGraph":
        if not self.batched:
            raise IndexError("graph is not batched")
        sim = None if self.similarity is None else self.similarity[b]
        return SpectralGraph(self.adjacency[b], sim)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=-1)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(i, j)`` with ``i < j``, lexicographic order."""
        if self.batched:
            raise ValueError("edges() needs a single graph")
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def closed_neighborhood(self, dtype=np.float64) -> np.ndarray:
        """``A + I`` as a dense real matrix."""
        return self.adjacency.astype(dtype) + np.eye(self.n, dtype=dtype)

    def gcn_operator(self, dtype=np.float64) -> np.ndarray:
        """``D~^-1/2 (A + I) D~^-1/2`` (dense)."""
        at = self.closed_neighborhood(np.float64)
        dinv = 1.0 / np.sqrt(at.sum(axis=-1))
        op = dinv[..., :, None] * at * dinv[..., None, :]
        return op.astype(dtype)

    def subgraph(self, index) -> "SpectralGraph":
        """Induced subgraph on ``index`` (``(k,)`` or ``(B, k)`` for a batch)."""
        index = np.asarray(index, dtype=np.intp)
        if self.batched:
            b = np.arange(len(self))[:, None, None]
            adj = self.adjacency[b, index[:, :, None], index[:, None, :]]
            sim = None if self.similarity is None else self.similarity[b, index[:, :, None], index[:, None, :]]
        else:
            adj = self.adjacency[np.ix_(index, index)]
            sim = None if self.similarity is None else self.similarity[np.ix_(index, index)]
        return SpectralGraph(adj, sim)


@dataclass(frozen=True)
class LaplacianView:
    matrix: np.ndarray

    def rayleigh(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x @ self.matrix @ x / (x @ x))


def cosine_similarity(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity along the last axis; zero rows get 0."""
    x = np.asarray(features, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=-1))
    dots = x @ np.swapaxes(x, -1, -2)
    denom = norms[..., :, None] * norms[..., None, :]
    zero = denom == 0
    return np.where(zero, 0.0, dots / np.where(zero, 1.0, denom))


def knn_graph(features, k: int = DEFAULT_K) -> SpectralGraph:
    """Union-symmetrized k-nearest-neighbour graph under cosine distance.

    ``features`` is ``n×C`` (or ``B×n×C``). A zero row is at distance 1 from
    every node. Ties go to the lower node index.
    """
    x = features.data if isinstance(features, Tensor) else np.asarray(features)
    if x.ndim not in (2, 3):
        raise DimensionError(f"features must be n×C or B×n×C, got {x.shape}")
    n = x.shape[-2]
    if n < 2:
        raise ParameterError("knn_graph needs at least two nodes")
    if not 1 <= k < n:
        raise ParameterError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    sim = cosine_similarity(x)
    # zero rows have cosine 0 to everything, including each other
    zero = (x == 0).all(axis=-1)
    sim[zero[..., :, None] | zero[..., None, :]] = 0.0
    dist = 1.0 - sim
    diag = np.arange(n)
    dist[..., diag, diag] = np.inf
    nearest = np.argsort(dist, axis=-1, kind="stable")[..., :k]
    directed = np.zeros(dist.shape, dtype=bool)
    np.put_along_axis(directed, nearest, True, axis=-1)
    adj = directed | np.swapaxes(directed, -1, -2)
    return SpectralGraph(adj, sim)


def normalized_laplacian(g: SpectralGraph, cap: int = LAPLACIAN_CAP) -> LaplacianView:
    """``I - D^-1/2 A D^-1/2`` with ``D^-1/2 = 0`` for isolated nodes."""
    if g.n > cap:
        raise ParameterError(f"graph has {g.n} nodes; dense Laplacian capped at {cap}")
    a = g.adjacency.astype(np.float64)
    d = a.sum(axis=-1)
    dinv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    lap = np.eye(g.n) - dinv[..., :, None] * a * dinv[..., None, :]
    return LaplacianView(lap)


def rows_matmul(x: Tensor, w: Tensor) -> Tensor:
    """Apply a shared ``C_in×C_out`` matrix to every row of ``x`` (2-D or batched 3-D)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"feature width {x.shape[-1]} does not match weight {w.shape}")
    if x.ndim == 2:
        return matmul(x, w)
    lead = x.shape[:-1]
    return reshape(matmul(reshape(x, (-1, x.shape[-1])), w), lead + (w.shape[1],))


def _check_nodes(x: Tensor, g: SpectralGraph):
    if x.ndim != g.adjacency.ndim or x.shape[:-1] != g.adjacency.shape[:-1]:
        raise DimensionError(f"features {x.shape} do not match graph of shape {g.adjacency.shape}")


def gcn_layer(g: SpectralGraph, x, w, activation: str | None = "relu") -> Tensor:
    """First-order graph convolution ``D~^-1/2 A~ D~^-1/2 X W``, optionally rectified."""
    x = as_tensor(x)
    _check_nodes(x, g)
    y = matmul(Tensor(g.gcn_operator(x.dtype)), rows_matmul(x, w))
    if activation is None:
        return y
    if activation == "relu":
        return relu(y)
    raise ParameterError(f"unknown activation {activation!r}")


def message_passing(h, g: SpectralGraph, theta) -> Tensor:
    """Sum of ``theta @ h_j`` over the closed neighbourhood of every node."""
    h = as_tensor(h)
    _check_nodes(h, g)
    theta = as_tensor(theta, like=h)
    if theta.shape != (h.shape[-1], h.shape[-1]):
        raise DimensionError(f"theta must be {h.shape[-1]}×{h.shape[-1]}, got {theta.shape}")
    return matmul(Tensor(g.closed_neighborhood(h.dtype)), rows_matmul(h, transpose(theta)))


def write_edge_list(g: SpectralGraph, dest) -> None:
    """Write ``i j cosine_similarity`` per undirected edge."""
    sim = g.similarity
    lines = []
    for i, j in g.edges():
        s = float("nan") if sim is None else float(sim[i, j])
        lines.append(f"{i} {j} {s:.9g}\n")
    text = "".join(lines)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text)
    else:
        dest.write(text)


def read_edge_list(src, n: int) -> SpectralGraph:
    text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
    adj = np.zeros((n, n), dtype=bool)
    sim = np.zeros((n, n))
    for lineno, line in enumerate(io.StringIO(text), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParameterError(f"edge list line {lineno}: expected 'i j similarity'")
        i, j, s = int(parts[0]), int(parts[1]), float(parts[2])
        adj[i, j] = adj[j, i] = True
        sim[i, j] = sim[j, i] = 0.0 if math.isnan(s) else s
    return SpectralGraph(adj, sim)
