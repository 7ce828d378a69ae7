"""SGD training with a plateau-decayed learning rate, accuracy metrics and map rendering."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import SampleSet, split_train_val
from .errors import NonFiniteError, ParameterError
from .model import SgrConfig, SgrParams, init_params, predict, sgr_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch: int = 30
    epochs: int = 500
    patience: int = 20
    min_delta: float = 1e-3
    max_decays: int = 2
    runs: int = 5
    seed: int = 0
    fit_fraction: float = 0.9

    def validate(self) -> "TrainConfig":
        checks = [
            (self.lr > 0, "lr must be positive"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (self.weight_decay >= 0, "weight_decay must be non-negative"),
            (self.batch >= 1, "batch must be at least 1"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (self.patience >= 1, "patience must be at least 1"),
            (self.min_delta >= 0, "min_delta must be non-negative"),
            (self.max_decays >= 0, "max_decays must be non-negative"),
            (self.runs >= 1, "runs must be at least 1"),
            (0 < self.fit_fraction < 1, "fit_fraction must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)
        return self


# ------------------------------------------------------------ optimizer


@dataclass
class OptimState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    decays: list[int] = field(default_factory=list)  # epochs at which lr was divided


def sgd_step(params: SgrParams, grads: dict[str, np.ndarray], state: OptimState) -> None:
    """In place: ``g' = g + wd*θ``, ``v = μv + g'``, ``θ -= lr*v``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteError(f"gradient of {name} has {bad} non-finite entries; step aborted")
    for name, t in params.items():
        g = grads[name]
        if g.shape != t.shape:
            raise ParameterError(f"gradient shape {g.shape} does not match {name} {t.shape}")
        g = g + state.weight_decay * t.data
        v = state.velocity.get(name)
        v = g.copy() if v is None else state.momentum * v + g
        state.velocity[name] = v
        t.data -= (state.lr * v).astype(t.dtype, copy=False)


class PlateauScheduler:
    """Divide the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, patience: int = 20, min_delta: float = 1e-3, max_decays: int = 2, factor: float = 10.0):
        self.lr = lr
        self.patience = patience
        self.min_delta = min_delta
        self.max_decays = max_decays
        self.factor = factor
        self.best = np.inf
        self.stale = 0
        self.epoch = 0
        self.decays: list[int] = []

    def step(self, val_error: float) -> float:
        """Feed one epoch's validation error; returns the lr for the next epoch."""
        self.epoch += 1
        if self.best - val_error > self.min_delta:
            self.best = val_error
            self.stale = 0
            return self.lr
        self.stale += 1
        if self.stale >= self.patience and len(self.decays) < self.max_decays:
            self.lr /= self.factor
            self.decays.append(self.epoch)
            self.stale = 0
        return self.lr


def plateau_scheduler(history, lr: float, patience: int = 20, min_delta: float = 1e-3, max_decays: int = 2) -> float:
    """Learning rate after replaying a validation-error history."""
    if len(history) == 0:
        raise ParameterError("empty validation history")
    sched = PlateauScheduler(lr, patience, min_delta, max_decays)
    for err in history:
        sched.step(float(err))
    return sched.lr


# ------------------------------------------------------------ metrics


@dataclass
class MetricsReport:
    confusion: np.ndarray  # (K, K), rows = truth
    per_class: np.ndarray  # percent, NaN for classes without test samples
    oa: float
    aa: float
    kappa: float
    run: int = 0

    def text(self, class_names=None) -> str:
        k = len(self.per_class)
        names = class_names or [f"class {c}" for c in range(1, k + 1)]
        lines = [f"{'':<24}{'acc (%)':>10}"]
        for name, acc in zip(names, self.per_class):
            lines.append(f"{name:<24}{'-' if np.isnan(acc) else f'{acc:.2f}':>10}")
        lines += [f"{'OA':<24}{self.oa:>10.2f}", f"{'AA':<24}{self.aa:>10.2f}", f"{'Kappa':<24}{self.kappa:>10.2f}"]
        return "\n".join(lines) + "\n\n" + self.key_values()

    def key_values(self) -> str:
        rows = [f"run:{self.run}", f"oa:{self.oa:.6f}", f"aa:{self.aa:.6f}", f"kappa:{self.kappa:.6f}"]
        rows += [f"class{c}:{acc:.6f}" for c, acc in enumerate(self.per_class, start=1)]
        return "\n".join(rows) + "\n"


def confusion_matrix(truth, pred, classes: int) -> np.ndarray:
    """Rows are true class ids 1..K, columns predicted ids."""
    t = np.asarray(truth, dtype=np.intp) - 1
    p = np.asarray(pred, dtype=np.intp) - 1
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= classes):
        raise ParameterError(f"class ids must lie in 1..{classes}")
    return np.bincount(t * classes + p, minlength=classes * classes).reshape(classes, classes)


def metrics_from_confusion(confusion, run: int = 0) -> MetricsReport:
    """OA, AA and Cohen's kappa, all scaled by 100."""
    m = np.asarray(confusion, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise ParameterError("confusion matrix is empty")
    rows = m.sum(axis=1)
    present = rows > 0
    per_class = np.full(len(m), np.nan)
    per_class[present] = 100.0 * np.diag(m)[present] / rows[present]
    if not present.all():
        log.warning("classes %s have no samples and are left out of AA", (np.flatnonzero(~present) + 1).tolist())
    p_o = np.trace(m) / total
    p_e = float(rows @ m.sum(axis=0)) / total**2
    kappa = 1.0 if p_e == 1.0 else (p_o - p_e) / (1.0 - p_e)
    return MetricsReport(m.astype(np.int64), per_class, 100.0 * p_o, float(np.mean(per_class[present])), 100.0 * kappa, run)


def predict_set(samples: SampleSet, params: SgrParams, cfg: SgrConfig, batch: int = 128) -> np.ndarray:
    """Predicted class ids 1..K for every sample."""
    out = np.empty(len(samples), dtype=np.intp)
    for start in range(0, len(samples), batch):
        idx = np.arange(start, min(start + batch, len(samples)))
        out[idx] = predict(samples.patches(idx), params, cfg, batch=batch) + 1
    return out


def evaluate(params: SgrParams, cfg: SgrConfig, test: SampleSet, run: int = 0) -> MetricsReport:
    if len(test) == 0:
        raise ParameterError("empty test set")
    pred = predict_set(test, params, cfg)
    return metrics_from_confusion(confusion_matrix(test.labels, pred, cfg.classes), run)


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Element-wise mean over runs (confusion matrices are summed)."""
    with np.errstate(invalid="ignore"):
        per_class = np.nanmean(np.stack([r.per_class for r in reports]), axis=0) if reports else np.array([])
    return MetricsReport(
        sum(r.confusion for r in reports),
        per_class,
        float(np.mean([r.oa for r in reports])),
        float(np.mean([r.aa for r in reports])),
        float(np.mean([r.kappa for r in reports])),
        run=-1,
    )


# ------------------------------------------------------------ training loop


@dataclass
class RunResult:
    seed: int
    params: SgrParams  # best-validation parameters
    history: list[tuple[int, float, float, float]]  # epoch, train loss, val error, lr
    report: MetricsReport | None
    best_epoch: int
    steps: int
    decays: list[int]

    def history_tsv(self) -> str:
        return "".join(f"{e}\t{loss:.9g}\t{err:.9g}\t{lr:.9g}\n" for e, loss, err, lr in self.history)


def train_run(cfg: SgrConfig, tcfg: TrainConfig, train: SampleSet, test: SampleSet | None, seed: int,
              run: int = 0, on_epoch: Callable | None = None) -> RunResult:
    """One training session: split, init, SGD epochs with plateau decay, test the best-val parameters."""
    fit, val = split_train_val(train, tcfg.fit_fraction, seed)
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed)
    state = OptimState(tcfg.lr, tcfg.momentum, tcfg.weight_decay)
    sched = PlateauScheduler(tcfg.lr, tcfg.patience, tcfg.min_delta, tcfg.max_decays)
    labels0 = fit.labels - 1
    history, steps = [], 0
    best_err, best_epoch, best = np.inf, 0, params.copy()
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(fit))
        lr = state.lr
        losses = []
        for start in range(0, len(order), tcfg.batch):
            idx = order[start: start + tcfg.batch]
            loss, grads = sgr_gradients(fit.patches(idx), labels0[idx], params, cfg)
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}, step {steps + 1}")
            sgd_step(params, grads, state)
            losses.append(loss * len(idx))
            steps += 1
        train_loss = float(np.sum(losses) / len(order))
        val_err = 1.0 - float(np.mean(predict_set(val, params, cfg) == val.labels))
        history.append((epoch, train_loss, val_err, lr))
        if val_err <= best_err:  # ties go to the later epoch
            best_err, best_epoch, best = val_err, epoch, params.copy()
        state.lr = sched.step(val_err)
        if on_epoch is not None:
            on_epoch(run, epoch, train_loss, val_err, lr)
    report = evaluate(best, cfg, test, run) if test is not None and len(test) else None
    return RunResult(seed, best, history, report, best_epoch, steps, list(sched.decays))


def train(cfg: SgrConfig, tcfg: TrainConfig, train_set: SampleSet, test_set: SampleSet | None,
          on_epoch: Callable | None = None) -> list[RunResult]:
    """``tcfg.runs`` sessions with seeds ``seed .. seed + runs - 1``."""
    cfg.validate()
    tcfg.validate()
    return [train_run(cfg, tcfg, train_set, test_set, tcfg.seed + r, r, on_epoch) for r in range(tcfg.runs)]


# ------------------------------------------------------------ maps

PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
    [0, 128, 128], [220, 190, 255], [170, 110, 40], [255, 250, 200], [128, 0, 0],
    [170, 255, 195],
], dtype=np.uint8)


def map_image(ids, palette=PALETTE) -> np.ndarray:
    """RGB image ``(H, W, 3)``: class ``c`` gets ``palette[c-1]``, id 0 is black."""
    ids = np.asarray(ids, dtype=np.intp)
    pal = np.asarray(palette, dtype=np.uint8)
    if ids.size and ids.max() > len(pal):
        raise ParameterError(f"palette has {len(pal)} colours, map uses class id {ids.max()}")
    table = np.vstack([np.zeros((1, 3), dtype=np.uint8), pal])
    return table[ids]


def render_map(ids, dest, palette=PALETTE) -> bytes:
    """Write a binary P6 image and return its bytes."""
    rgb = map_image(ids, palette)
    h, w = rgb.shape[:2]
    blob = f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()
    if dest is not None:
        Path(dest).write_bytes(blob)
    return blob


def config_dict(tcfg: TrainConfig) -> dict:
    return asdict(tcfg)
