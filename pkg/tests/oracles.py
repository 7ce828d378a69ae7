"""Brute-force reference implementations used only by the tests.

Everything here is written with plain loops over Python/numpy scalars so it
shares no code path with the package.
"""
import itertools
import math

import numpy as np


def conv3d_loops(x, w, pad=("valid",) * 3, dilation=(1, 1, 1)):
    cin, D, H, W = x.shape
    cout, _, kd, kh, kw = w.shape
    sizes, offs = [], []
    for L, k, mode, r in zip((D, H, W), (kd, kh, kw), pad, dilation):
        span = r * (k - 1) + 1
        if mode == "same":
            sizes.append(L)
            offs.append((span - 1) // 2)
        else:
            sizes.append(L - span + 1)
            offs.append(0)
    out = np.zeros((cout,) + tuple(sizes))
    for o in range(cout):
        for d, h, ww in itertools.product(*(range(s) for s in sizes)):
            acc = 0.0
            for c in range(cin):
                for a, b, e in itertools.product(range(kd), range(kh), range(kw)):
                    i = d - offs[0] + a * dilation[0]
                    j = h - offs[1] + b * dilation[1]
                    m = ww - offs[2] + e * dilation[2]
                    if 0 <= i < D and 0 <= j < H and 0 <= m < W:
                        acc += float(x[c, i, j, m]) * float(w[o, c, a, b, e])
            out[o, d, h, ww] = acc
    return out


def cosine_distance(u, v):
    nu = math.sqrt(sum(float(a) * float(a) for a in u))
    nv = math.sqrt(sum(float(a) * float(a) for a in v))
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return 1.0 - sum(float(a) * float(b) for a, b in zip(u, v)) / (nu * nv)


def knn_edges(features, k):
    """Union-symmetrized k-nearest edge set, ties to the lower index."""
    n = len(features)
    edges = set()
    for i in range(n):
        cands = sorted((cosine_distance(features[i], features[j]), j) for j in range(n) if j != i)
        for _, j in cands[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def dense_adjacency(n, edges):
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a


def gcn_dense(adj, x, w):
    at = adj + np.eye(len(adj))
    d = at.sum(axis=1)
    dm = np.diag(1.0 / np.sqrt(d))
    return dm @ at @ dm @ x @ w


def message_passing_loops(h, adj, theta):
    n, c = h.shape
    out = np.zeros((n, c))
    for i in range(n):
        for j in range(n):
            if i == j or adj[i, j]:
                out[i] += theta @ h[j]
    return out


def sigmoid_scalar(v):
    return 1.0 / (1.0 + math.exp(-v))


def topk_oracle(x, w, k):
    proj = [sum(float(a) * float(b) for a, b in zip(row, w)) for row in x]
    s = [sigmoid_scalar(p) for p in proj]
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    chosen = sorted(order[:k])
    pooled = np.array([[float(v) * s[i] for v in x[i]] for i in chosen])
    return np.array(s), chosen, pooled


def gru_loops(x, h, wz, uz, wr, ur, wo, uo):
    z = 1.0 / (1.0 + np.exp(-(x @ wz + h @ uz)))
    r = 1.0 / (1.0 + np.exp(-(x @ wr + h @ ur)))
    cand = np.tanh(x @ wo + (r * h) @ uo)
    return (1.0 - z) * h + z * cand
