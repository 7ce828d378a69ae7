"""Finite-difference gradient suite over every primitive and a tiny full model."""
from __future__ import annotations

import numpy as np

from .model import SgrConfig, forward, init_params
from .numerics import (
    Tensor,
    concat,
    conv3d,
    expand,
    grad_check,
    hadamard,
    matmul,
    relu,
    reshape,
    scale,
    scatter_rows,
    sigmoid,
    softmax_cross_entropy,
    take_rows,
    tanh,
    total,
    transpose,
)

SUITES = ("small", "full")


def _param(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def primitive_cases(rng) -> dict:
    """One scalar-valued composite per differentiable primitive."""
    a = _param(rng.normal(size=(3, 4)))
    b = _param(rng.normal(size=(4, 2)))
    c = _param(rng.normal(size=(3, 4)))
    r = Tensor(rng.normal(size=(3, 4)))
    r2 = Tensor(rng.normal(size=(3, 2)))
    bx = _param(rng.normal(size=(2, 3, 4)))
    by = _param(rng.normal(size=(2, 4, 3)))
    # keep relu inputs away from the kink
    kinked = _param(rng.uniform(0.1, 1.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4)))
    cx = _param(rng.normal(size=(2, 7, 4, 3)))
    ck = _param(rng.normal(size=(3, 2, 3, 3, 2)))
    idx = np.array([[2, 0], [1, 3]])
    rows = _param(rng.normal(size=(2, 4, 3)))
    hs = _param(rng.normal(size=(2, 2, 3)))
    w = lambda t, s: total(hadamard(t, Tensor(rng.normal(size=s))))  # noqa: E731
    wr = Tensor(rng.normal(size=(2, 2, 3)))
    ws = Tensor(rng.normal(size=(2, 4, 3)))
    we = Tensor(rng.normal(size=(5, 3, 4)))
    wc = Tensor(rng.normal(size=(3, 7, 2, 3)))
    return {
        "matmul": (lambda: total(hadamard(matmul(a, b), r2)), [a, b]),
        "batched_matmul": (lambda: total(hadamard(matmul(bx, by), Tensor(np.ones((2, 3, 3))))), [bx, by]),
        "add": (lambda: total(hadamard(a + c, r)), [a, c]),
        "sub": (lambda: total(hadamard(a - c, r)), [a, c]),
        "hadamard": (lambda: total(hadamard(hadamard(a, c), r)), [a, c]),
        "scale": (lambda: total(hadamard(scale(a, -1.7, 0.3), r)), [a]),
        "sigmoid": (lambda: total(hadamard(sigmoid(a), r)), [a]),
        "tanh": (lambda: total(hadamard(tanh(a), r)), [a]),
        "relu": (lambda: total(hadamard(relu(kinked), r)), [kinked]),
        "reshape": (lambda: total(hadamard(reshape(a, (4, 3)), Tensor(r.data.reshape(4, 3)))), [a]),
        "transpose": (lambda: total(hadamard(transpose(a), Tensor(r.data.T.copy()))), [a]),
        "concat": (lambda: total(hadamard(concat([a, c], axis=1), Tensor(np.ones((3, 8)) * 0.5))), [a, c]),
        "expand": (lambda: total(hadamard(expand(a, 0, 5), we)), [a]),
        "take_rows": (lambda: total(hadamard(take_rows(rows, idx), wr)), [rows]),
        "scatter_rows": (lambda: total(hadamard(scatter_rows(hs, idx, 4), ws)), [hs]),
        "conv3d": (lambda: total(hadamard(conv3d(cx, ck, pad=("same", "valid", "same"), dilation=(2, 1, 1)), wc)), [cx, ck]),
        "softmax_cross_entropy": (lambda: softmax_cross_entropy(matmul(a, b), [0, 1, 1]), [a, b]),
    }



def tiny_config(scale_name: str = "small") -> SgrConfig:
    """B=16, F=4: 8 graph nodes over a 3x3 patch (L=1); ``full`` uses L=2 and a 5x5 patch."""
    if scale_name == "small":
        return SgrConfig(bands=16, classes=3, filters=4, knn_k=3, levels=1, patch=3)
    return SgrConfig(bands=17, classes=3, filters=4, knn_k=3, levels=2, patch=5)


def model_case(cfg: SgrConfig, seed: int = 0, batch: int = 2):
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed, dtype=np.float64)
    x = rng.uniform(size=(batch, 1, cfg.bands, cfg.patch, cfg.patch))
    labels = rng.integers(0, cfg.classes, size=batch)
    return (lambda: softmax_cross_entropy(forward(x, params, cfg), labels)), [t for _, t in params.items()]


def gradient_suite(scale_name: str = "small", seeds: int = 3) -> dict[str, float]:
    """Max relative error per case; ``full`` runs more seeds and a deeper model."""
    if scale_name not in SUITES:
        raise ValueError(f"unknown gradcheck scale {scale_name!r}; pick one of {SUITES}")
    if scale_name == "full":
        seeds = max(seeds, 20)
    worst: dict[str, float] = {}
    for seed in range(seeds):
        for kind, (fn, params) in primitive_cases(np.random.default_rng(seed)).items():
            worst[kind] = max(worst.get(kind, 0.0), grad_check(fn, params))
    names = ["small"] if scale_name == "small" else ["small", "full"]
    for name in names:
        fn, params = model_case(tiny_config(name))
        worst[f"sgr_{name}"] = grad_check(fn, params)
    return worst
