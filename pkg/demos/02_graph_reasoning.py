"""
From an encoded patch to a fused graph representation
=====================================================

The encoder turns a ``1 x bands x 7 x 7`` patch into ``N`` spectral feature
channels, each a flattened 7x7 map. Those channels become graph nodes.
This walk-through builds the KNN graph, the pooled pyramid and the
recurrent fusion by hand, using the same calls the model makes.
"""

import numpy as np

from sgrnet.data import SynthSpec, extract_samples, synth_cube
from sgrnet.graph import knn_graph, normalized_laplacian
from sgrnet.model import SgrConfig, encode, init_params
from sgrnet.pooling import decouple, ensemble

spec = SynthSpec(classes=4, bands=48, height=24, width=24)
cube, labels = synth_cube(spec)
train, _, _ = extract_samples(cube, labels, per_class=5, seed=0)

cfg = SgrConfig(bands=spec.bands, classes=spec.classes, filters=8, knn_k=10, levels=2)
params = init_params(cfg, seed=0)

# encoder output: N = filters * (bands - 14) nodes of width 49
nodes = encode(train.patches([0])[0], params)
print("nodes x width:", nodes.shape)

# cosine KNN graph, union-symmetrized
g = knn_graph(nodes.data, cfg.knn_k)
print("edges:", len(g.edges()), " min degree:", g.degrees.min())

# the normalized Laplacian has its spectrum in [0, 2]
eig = np.linalg.eigvalsh(normalized_laplacian(g).matrix)
print(f"Laplacian spectrum in [{eig.min():.3f}, {eig.max():.3f}]")

# pyramid: GCN at level 0, then (top-k pool + GCN) per level
gcn = [[params[f"gcn.level{p}.layer0"]] for p in range(cfg.levels + 1)]
pools = [params[f"pool.level{p}"] for p in range(1, cfg.levels + 1)]
hier = decouple(nodes, g, gcn, pools, cfg.pool_ratio)
print("level sizes:", hier.sizes())

# fuse coarse to fine: unpool by message passing, then a GRU gate per level
thetas = [params[f"unpool.level{p}"] for p in range(1, cfg.levels + 1)]
fused = ensemble(hier, thetas, params.gru())
print("fused:", fused.shape, " finite:", np.isfinite(fused.data).all())
