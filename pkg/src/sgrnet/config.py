"""Run configuration: nested YAML sections, benchmark defaults, strict validation.

Grammar (every key optional except the data source)::

    data:
      cube: scene.raw          # header read from scene.raw.hdr
      labels: labels.raw
      # or, instead of cube/labels:
      synthetic: {classes: 4, bands: 48, height: 64, width: 64, noise: 0.5, seed: 0}
    encoder:  {filters: 8}
    graph:    {knn_k: 10}
    pyramid:  {levels: 2, pool_ratio: 0.5, gcn_layers_per_level: 1}
    model:    {variant: sgr}   # sgr | encoder_only | sum_ensemble
    optimizer: {lr: 0.05, momentum: 0.9, weight_decay: 0.0005, batch: 30,
                epochs: 500, patience: 20, min_delta: 0.001, max_decays: 2}
    sampling: {per_class_counts: 50, patch: 7, fit_fraction: 0.9}
    runs: 5
    seed: 0
    out: runs/pavia

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .data import SynthSpec
from .errors import ConfigError, ParameterError
from .model import VARIANTS, SgrConfig
from .train import TrainConfig

SECTIONS = {
    "data": {"cube", "labels", "cube_header", "labels_header", "synthetic"},
    "encoder": {"filters"},
    "graph": {"knn_k"},
    "pyramid": {"levels", "pool_ratio", "gcn_layers_per_level"},
    "model": {"variant"},
    "optimizer": {"lr", "momentum", "weight_decay", "batch", "epochs", "patience", "min_delta", "max_decays"},
    "sampling": {"per_class_counts", "patch", "fit_fraction"},
}
SCALARS = {"runs", "seed", "out"}
SYNTH_KEYS = {f.name for f in fields(SynthSpec)}


@dataclass
class RunConfig:
    cube: Path | None = None
    labels: Path | None = None
    cube_header: Path | None = None
    labels_header: Path | None = None
    synthetic: SynthSpec | None = None
    filters: int = 8
    knn_k: int = 10
    levels: int = 2
    pool_ratio: float = 0.5
    gcn_layers_per_level: int = 1
    variant: str = "sgr"
    per_class_counts: int | list[int] = 50
    patch: int = 7
    train: TrainConfig = field(default_factory=TrainConfig)
    out: Path | None = None

    def model_config(self, bands: int, classes: int) -> SgrConfig:
        try:
            return SgrConfig(
                bands=bands, classes=classes, filters=self.filters, knn_k=self.knn_k,
                levels=self.levels, pool_ratio=self.pool_ratio,
                gcn_layers_per_level=self.gcn_layers_per_level, patch=self.patch, variant=self.variant,
            ).validate()
        except ConfigError:
            raise
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        data: dict = {}
        if self.synthetic is not None:
            data["synthetic"] = asdict(self.synthetic)
        for key in ("cube", "labels", "cube_header", "labels_header"):
            value = getattr(self, key)
            if value is not None:
                data[key] = str(value)
        t = asdict(self.train)
        return {
            "data": data,
            "encoder": {"filters": self.filters},
            "graph": {"knn_k": self.knn_k},
            "pyramid": {"levels": self.levels, "pool_ratio": self.pool_ratio,
                        "gcn_layers_per_level": self.gcn_layers_per_level},
            "model": {"variant": self.variant},
            "optimizer": {k: t[k] for k in SECTIONS["optimizer"]},
            "sampling": {"per_class_counts": self.per_class_counts, "patch": self.patch,
                         "fit_fraction": t["fit_fraction"]},
            "runs": t["runs"],
            "seed": t["seed"],
            "out": None if self.out is None else str(self.out),
        }


def _number(value, kind, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


INT_KEYS = {"filters", "knn_k", "levels", "gcn_layers_per_level", "patch", "batch", "epochs",
            "patience", "max_decays", "runs", "seed"}
FLOAT_KEYS = {"pool_ratio", "lr", "momentum", "weight_decay", "min_delta", "fit_fraction"}


def parse_config(raw: dict, base: Path | None = None) -> RunConfig:
    """Validate a nested mapping into a :class:`RunConfig`; unknown keys are errors."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    base = base or Path(".")
    flat: dict = {}
    for key, value in raw.items():
        if key in SCALARS:
            flat[key] = value
            continue
        if key not in SECTIONS:
            raise ConfigError(f"unknown section {key!r}; expected one of {sorted(set(SECTIONS) | SCALARS)}")
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        for sub, v in value.items():
            if sub not in SECTIONS[key]:
                raise ConfigError(f"unknown key {key}.{sub}; expected one of {sorted(SECTIONS[key])}")
            flat[sub] = v
    for key in list(flat):
        if key in INT_KEYS:
            flat[key] = _number(flat[key], int, key)
        elif key in FLOAT_KEYS:
            flat[key] = _number(flat[key], float, key)

    cfg = RunConfig()
    synth = flat.pop("synthetic", None)
    if synth is not None:
        if not isinstance(synth, dict) or set(synth) - SYNTH_KEYS:
            raise ConfigError(f"data.synthetic accepts only {sorted(SYNTH_KEYS)}")
        cfg.synthetic = SynthSpec(**synth)
    for key in ("cube", "labels", "cube_header", "labels_header"):
        if key in flat:
            p = Path(str(flat.pop(key)))
            setattr(cfg, key, p if p.is_absolute() else base / p)
    if cfg.synthetic is None and (cfg.cube is None or cfg.labels is None):
        raise ConfigError("data section needs cube and labels paths, or a synthetic spec")
    if cfg.synthetic is not None and cfg.cube is not None:
        raise ConfigError("data section names both a cube file and a synthetic spec")
    if "out" in flat:
        out = flat.pop("out")
        if out is not None:
            p = Path(str(out))
            cfg.out = p if p.is_absolute() else base / p
    counts = flat.pop("per_class_counts", cfg.per_class_counts)
    if isinstance(counts, list):
        counts = [_number(c, int, "per_class_counts") for c in counts]
        if min(counts, default=0) < 1:
            raise ConfigError("per_class_counts entries must be positive")
    else:
        counts = _number(counts, int, "per_class_counts")
        if counts < 1:
            raise ConfigError("per_class_counts must be positive")
    cfg.per_class_counts = counts
    for key in ("filters", "knn_k", "levels", "pool_ratio", "gcn_layers_per_level", "variant", "patch"):
        if key in flat:
            setattr(cfg, key, flat.pop(key))
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"model.variant must be one of {VARIANTS}, got {cfg.variant!r}")
    try:
        cfg.train = TrainConfig(**flat).validate()
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.synthetic is not None and isinstance(counts, list) and len(counts) != cfg.synthetic.classes:
        raise ConfigError("per_class_counts length differs from the synthetic class count")
    # shape-level checks that do not need the data
    if cfg.filters < 4 or cfg.filters % 4:
        raise ConfigError(f"encoder.filters must be a positive multiple of 4, got {cfg.filters}")
    if cfg.patch < 1 or cfg.patch % 2 == 0:
        raise ConfigError(f"sampling.patch must be a positive odd size, got {cfg.patch}")
    if cfg.variant != "encoder_only":
        if cfg.knn_k < 1:
            raise ConfigError("graph.knn_k must be at least 1")
        if cfg.levels < 1:
            raise ConfigError("pyramid.levels must be at least 1")
        if not 0 < cfg.pool_ratio < 1:
            raise ConfigError("pyramid.pool_ratio must lie in (0, 1)")
        if cfg.gcn_layers_per_level < 1:
            raise ConfigError("pyramid.gcn_layers_per_level must be at least 1")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(raw, path.parent)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
