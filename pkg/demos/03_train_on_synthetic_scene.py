"""
Training on a synthetic scene and drawing the classification map
================================================================

A small seeded scene keeps this under a minute on one core. The full
acceptance run (64x64 scene, 50 epochs) lives in ``tests/test_acceptance.py``.
"""

import numpy as np

from sgrnet.data import SynthSpec, extract_samples, scene_samples, synth_cube
from sgrnet.model import SgrConfig
from sgrnet.train import TrainConfig, predict_set, render_map, train

spec = SynthSpec(classes=3, bands=24, height=20, width=20, noise=0.3, seed=1)
cube, labels = synth_cube(spec)
train_set, test_set, norm = extract_samples(cube, labels, per_class=15, seed=0, patch=5)
print(f"{len(train_set)} training and {len(test_set)} test pixels")

cfg = SgrConfig(bands=spec.bands, classes=spec.classes, filters=4, knn_k=5, levels=2, patch=5)
tcfg = TrainConfig(lr=0.005, epochs=8, batch=10, runs=1)


def progress(run, epoch, loss, err, lr):
    print(f"epoch {epoch:2d}  loss {loss:.4f}  val error {err:.3f}  lr {lr:g}")


(result,) = train(cfg, tcfg, train_set, test_set, progress)
print(result.report.text(["bump A", "bump B", "bump C"]))

# predict every pixel and write side-by-side truth / prediction images
scene = scene_samples(cube, norm, None, patch=5)
pred = np.zeros(labels.shape, dtype=np.intp)
pred[scene.coords[:, 0], scene.coords[:, 1]] = predict_set(scene, result.params, cfg)
render_map(labels.ids, "truth.ppm")
render_map(pred, "prediction.ppm")
print("pixels that agree with the truth:", f"{100 * np.mean(pred == labels.ids):.1f}%")
