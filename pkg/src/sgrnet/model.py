"""Dilated 3-D convolutional encoder and the assembled graph-reasoning classifier."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .graph import gcn_layer, knn_graph
from .numerics import (
    Record,
    Tensor,
    add,
    concat,
    conv3d,
    expand,
    matmul,
    relu,
    reshape,
    scale,
    softmax_cross_entropy,
)
from .pooling import GruParams, decouple, ensemble, pool_size, sum_ensemble

STEM_DEPTH = 15
PATH_DEPTHS = (3, 5, 7, 9)
RESIDUAL_MODULES = 2
SPECTRAL_DILATION = 2
VARIANTS = ("sgr", "encoder_only", "sum_ensemble")


@dataclass(frozen=True)
class SgrConfig:
    """Architecture hyper-parameters; everything needed to shape the parameters."""

    bands: int
    classes: int
    filters: int = 8
    knn_k: int = 10
    levels: int = 2
    pool_ratio: float = 0.5
    gcn_layers_per_level: int = 1
    patch: int = 7
    variant: str = "sgr"

    @property
    def spectral_out(self) -> int:
        return self.bands - STEM_DEPTH + 1

    @property
    def nodes(self) -> int:
        return self.filters * self.spectral_out

    @property
    def width(self) -> int:
        return self.patch * self.patch

    def level_sizes(self) -> list[int]:
        sizes = [self.nodes]
        for _ in range(self.levels):
            sizes.append(pool_size(sizes[-1], self.pool_ratio))
        return sizes

    def validate(self) -> "SgrConfig":
        if self.bands < STEM_DEPTH:
            raise ConfigError(f"need at least {STEM_DEPTH} spectral bands, got {self.bands}")
        if self.filters < 4 or self.filters % 4:
            raise ConfigError(f"filters must be a positive multiple of 4, got {self.filters}")
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ConfigError(f"patch must be a positive odd size, got {self.patch}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "encoder_only":
            return self
        if not 1 <= self.knn_k < self.nodes:
            raise ConfigError(f"knn_k must satisfy 1 <= k < {self.nodes} graph nodes, got {self.knn_k}")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        if not 0 < self.pool_ratio < 1:
            raise ConfigError(f"pool_ratio must lie in (0, 1), got {self.pool_ratio}")
        if self.gcn_layers_per_level < 1:
            raise ConfigError("gcn_layers_per_level must be at least 1")
        sizes = self.level_sizes()
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"pyramid does not shrink at every level: {sizes}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class SgrParams:
    """Named trainable tensors, in a fixed creation order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self) -> "SgrParams":
        return SgrParams({k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()})

    def astype(self, dtype) -> "SgrParams":
        return SgrParams({k: Tensor(t.data.astype(dtype), requires_grad=True, name=k) for k, t in self.tensors.items()})

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "SgrParams":
        return cls({k: Tensor(np.array(v), requires_grad=True, name=k) for k, v in arrays.items()})

    def gru(self) -> GruParams:
        return GruParams(*(self[f"gru.{n}"] for n in ("W_z", "U_z", "W_r", "U_r", "W_o", "U_o")))


def param_shapes(cfg: SgrConfig) -> dict[str, tuple[int, ...]]:
    cfg.validate()
    f, c = cfg.filters, cfg.width
    shapes: dict[str, tuple[int, ...]] = {"encoder.stem": (f, 1, STEM_DEPTH, 3, 3)}
    for m in range(1, RESIDUAL_MODULES + 1):
        for d in PATH_DEPTHS:
            shapes[f"encoder.res{m}.path{d}"] = (f // 4, f, d, 3, 3)
    if cfg.variant == "encoder_only":
        feat = cfg.nodes * c
    else:
        for p in range(cfg.levels + 1):
            for j in range(cfg.gcn_layers_per_level):
                shapes[f"gcn.level{p}.layer{j}"] = (c, c)
        for p in range(1, cfg.levels + 1):
            shapes[f"pool.level{p}"] = (c,)
        if cfg.variant == "sgr":
            for p in range(1, cfg.levels + 1):
                shapes[f"unpool.level{p}"] = (c, c)
            for n in ("W_z", "U_z", "W_r", "U_r", "W_o", "U_o"):
                shapes[f"gru.{n}"] = (c, c)
        shapes["head.gcn"] = (c, c)
        feat = 2 * cfg.nodes * c
    shapes["classifier.weight"] = (feat, cfg.classes)
    shapes["classifier.bias"] = (cfg.classes,)
    return shapes


def param_count(cfg: SgrConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name == "classifier.weight":
        return 1  # its input is already scaled by 1/sqrt(width), see ``forward``
    if len(shape) == 5:
        return shape[1] * shape[2] * shape[3] * shape[4]
    return shape[0]


def init_params(cfg: SgrConfig, seed: int = 0, dtype=np.float32) -> SgrParams:
    """Uniform ``±sqrt(6 / fan_in)`` for kernels and matrices, zero biases.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias"):
            arr = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / _fan_in(name, shape))
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return SgrParams(tensors)


def residual_module(x: Tensor, paths: list[Tensor]) -> Tensor:
    """Pre-activation multi-path block: ``x + concat(conv_d(relu(x)))``."""
    y = relu(x)
    branches = [
        conv3d(y, k, pad=("same", "same", "same"), dilation=(SPECTRAL_DILATION, 1, 1)) for k in paths
    ]
    return add(x, concat(branches, axis=x.ndim - 4))


def encode(patch, params: SgrParams) -> Tensor:
    """Encoder map reshaped to graph nodes: ``(N, C)`` or batched ``(B, N, C)``.

    ``patch`` is ``1×bands×P×P`` or ``B×1×bands×P×P``.
    """
    x = patch if isinstance(patch, Tensor) else Tensor(np.asarray(patch))
    stem = params["encoder.stem"]
    if x.ndim not in (4, 5) or x.shape[-4] != 1:
        raise DimensionError(f"patch must be 1×bands×P×P (optionally batched), got {x.shape}")
    if x.shape[-3] < STEM_DEPTH:
        raise ConfigError(f"need at least {STEM_DEPTH} spectral bands, got {x.shape[-3]}")
    h = relu(conv3d(x, stem, pad=("valid", "same", "same")))
    for m in range(1, RESIDUAL_MODULES + 1):
        h = residual_module(h, [params[f"encoder.res{m}.path{d}"] for d in PATH_DEPTHS])
    f, s, ph, pw = h.shape[-4:]
    return reshape(h, h.shape[:-4] + (f * s, ph * pw))


def forward(patches, params: SgrParams, cfg: SgrConfig) -> Tensor:
    """Batched logits ``(B, K)`` for patches ``(B, 1, bands, P, P)``."""
    x = np.asarray(patches.data if isinstance(patches, Tensor) else patches)
    if x.ndim != 5:
        raise DimensionError(f"expected a batch of patches (B,1,bands,P,P), got {x.shape}")
    dtype = params["classifier.weight"].dtype
    nodes = encode(Tensor(x.astype(dtype, copy=False)), params)
    b, n, c = nodes.shape
    flat_enc = reshape(nodes, (b, n * c))
    if cfg.variant == "encoder_only":
        feats = flat_enc
    else:
        g0 = knn_graph(nodes.data, cfg.knn_k)
        gcn_weights = [
            [params[f"gcn.level{p}.layer{j}"] for j in range(cfg.gcn_layers_per_level)]
            for p in range(cfg.levels + 1)
        ]
        pools = [params[f"pool.level{p}"] for p in range(1, cfg.levels + 1)]
        hier = decouple(nodes, g0, gcn_weights, pools, cfg.pool_ratio)
        if cfg.variant == "sgr":
            # Unpooling sums over >= knn_k + 1 similar neighbours; a fixed
            # 1/(knn_k + 1) factor keeps the level-to-level activation scale.
            thetas = [scale(params[f"unpool.level{p}"], 1.0 / (cfg.knn_k + 1)) for p in range(1, cfg.levels + 1)]
            fused = ensemble(hier, thetas, params.gru())
        else:
            fused = sum_ensemble(hier)
        head = gcn_layer(g0, fused, params["head.gcn"], activation=None)
        feats = concat([reshape(head, (b, n * c)), flat_enc], axis=1)
    # Fixed 1/sqrt(width) input scale: same initial logits as a fan-in init,
    # but the classifier step no longer grows with the (large) feature width.
    feats = scale(feats, 1.0 / math.sqrt(feats.shape[1]))
    bias = expand(params["classifier.bias"], 0, b)
    return add(matmul(feats, params["classifier.weight"]), bias)


def sgr_forward(patch, params: SgrParams, cfg: SgrConfig) -> Tensor:
    """Logits ``(K,)`` for a single ``1×bands×P×P`` patch."""
    x = np.asarray(patch.data if isinstance(patch, Tensor) else patch)
    return reshape(forward(x[None], params, cfg), (cfg.classes,))


def sgr_gradients(patches, labels, params: SgrParams, cfg: SgrConfig) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every named parameter.

    ``labels`` are 0-based class indices.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        raise DimensionError("empty batch")
    with Record() as rec:
        loss = softmax_cross_entropy(forward(patches, params, cfg), labels)
    grads = rec.backward(loss)
    return float(loss.data), {name: grads[t] for name, t in params.items()}


def predict(patches, params: SgrParams, cfg: SgrConfig, batch: int = 128) -> np.ndarray:
    """0-based argmax class for every patch (no recording)."""
    x = np.asarray(patches)
    out = np.empty(len(x), dtype=np.intp)
    for start in range(0, len(x), batch):
        logits = forward(x[start: start + batch], params, cfg).data
        out[start: start + batch] = np.argmax(logits, axis=1)
    return out
