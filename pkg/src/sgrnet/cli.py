"""``sgr`` command line: synth, train, eval, map, gradcheck.

Exit codes: 0 success, 1 validation or user error, 2 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checkpoint import VERSION as CHECKPOINT_VERSION
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .data import (
    FORMAT_VERSION,
    Normalization,
    SynthSpec,
    extract_samples,
    load_cube,
    load_labels,
    scene_samples,
    synth_cube,
    write_cube,
    write_labels,
)
from .errors import ConfigError, NonFiniteError, SgrError, StructureError
from .model import SgrParams, param_count
from .train import evaluate, mean_report, predict_set, render_map, train

log = logging.getLogger("sgrnet")

NORM_KEYS = ("norm.low", "norm.high")

STARTER_HEADER = """\
# Desk-scale starter written by `sgr synth`. Omitted keys keep the protocol
# defaults (lr 0.05, 500 epochs, 5 runs); lr 0.05 diverges without
# normalization layers, so this run uses 0.005 for 50 epochs.
"""
STARTER_CONFIG = {
    "data": {"cube": "cube.raw", "labels": "labels.raw"},
    "optimizer": {"lr": 0.005, "epochs": 50},
    "sampling": {"per_class_counts": 50},
    "runs": 1,
    "seed": 0,
}


class UsageError(SgrError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------ helpers


def thread_limit(threads: int | None):
    """Cap BLAS threads from ``--threads`` or ``SGR_THREADS``; unset means leave the pool alone."""
    if threads is None:
        env = os.environ.get("SGR_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise ConfigError(f"SGR_THREADS must be an integer, got {env!r}") from exc
    if threads is None:
        return nullcontext()
    if threads < 1:
        raise ConfigError(f"thread count must be positive, got {threads}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def load_scene(cfg: RunConfig):
    if cfg.synthetic is not None:
        return synth_cube(cfg.synthetic)
    return load_cube(cfg.cube, cfg.cube_header), load_labels(cfg.labels, cfg.labels_header)


def _resolve(args) -> RunConfig:
    if not args.config:
        raise ConfigError("a configuration file is required (-c/--config)")
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    if overrides:
        from dataclasses import replace

        try:
            cfg.train = replace(cfg.train, **overrides).validate()
        except SgrError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _load_model(path):
    arrays = load_checkpoint(path)
    missing = [k for k in NORM_KEYS if k not in arrays]
    if missing:
        raise ConfigError(f"{path}: checkpoint lacks normalization entries {missing}")
    norm = Normalization(arrays.pop("norm.low").astype(np.float64), arrays.pop("norm.high").astype(np.float64))
    return SgrParams.from_arrays(arrays), norm


def _check_params(params: SgrParams, mcfg, path):
    from .model import param_shapes

    want = param_shapes(mcfg)
    got = {k: t.shape for k, t in params.items()}
    if got != want:
        raise ConfigError(f"{path}: checkpoint tensors do not match the configured architecture")


# ------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.config:
        try:
            raw = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read synth spec {args.config}: {exc.strerror}") from exc
        try:
            spec = SynthSpec(**raw)
        except TypeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    out = Path(args.out or "synth")
    out.mkdir(parents=True, exist_ok=True)
    cube, labels = synth_cube(spec)
    write_cube(cube, out / "cube.raw")
    write_labels(labels, out / "labels.raw")
    (out / "config.yaml").write_text(STARTER_HEADER + yaml.safe_dump(STARTER_CONFIG, sort_keys=False))
    print(f"wrote {out / 'cube.raw'} ({cube.bands}x{cube.height}x{cube.width}), {out / 'labels.raw'} "
          f"({labels.classes} classes) and {out / 'config.yaml'}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out) if args.out else (cfg.out or Path("run"))
    cube, labels = load_scene(cfg)
    mcfg = cfg.model_config(cube.bands, labels.classes)
    tcfg = cfg.train
    train_set, test_set, norm = extract_samples(cube, labels, cfg.per_class_counts, tcfg.seed, cfg.patch)
    n_params = param_count(mcfg)
    log.info("model %s: %d parameters, pyramid %s", mcfg.variant, n_params,
             mcfg.level_sizes() if mcfg.variant != "encoder_only" else "-")
    log.info("samples: %d train, %d test", len(train_set), len(test_set))
    out.mkdir(parents=True, exist_ok=True)

    def progress(run, epoch, loss, err, lr):
        log.info("run %d epoch %d loss %.5f val-error %.4f lr %g", run, epoch, loss, err, lr)

    results = train(mcfg, tcfg, train_set, test_set, progress)
    runs_meta = []
    for r, res in enumerate(results):
        rdir = out / f"run{r}"
        rdir.mkdir(exist_ok=True)
        arrays = res.params.arrays()
        arrays["norm.low"], arrays["norm.high"] = norm.low, norm.high
        save_checkpoint(rdir / "model.sgrm", arrays)
        (rdir / "history.tsv").write_text(res.history_tsv())
        (rdir / "report.txt").write_text(res.report.text())
        runs_meta.append({"seed": res.seed, "best_epoch": res.best_epoch, "steps": res.steps,
                          "lr_decay_epochs": res.decays, "oa": res.report.oa, "aa": res.report.aa,
                          "kappa": res.report.kappa})
    summary = mean_report([r.report for r in results])
    (out / "report.txt").write_text(summary.text())
    (out / "config.yaml").write_text(dump_config(cfg))
    manifest = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "model": mcfg.to_dict(),
        "sampling_seed": tcfg.seed,
        "run_seeds": [r.seed for r in results],
        "param_count": n_params,
        "validation_metric": "1 - OA on the held-out fit/val split",
        "formats": {"checkpoint": CHECKPOINT_VERSION, "cube": FORMAT_VERSION, "labels": FORMAT_VERSION},
        "runs": runs_meta,
        "mean": {"oa": summary.oa, "aa": summary.aa, "kappa": summary.kappa},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"mean over {len(results)} run(s)")
    print(summary.text(), end="")
    return 0


def cmd_eval(args) -> int:
    if not args.model:
        raise ConfigError("a checkpoint is required (-m/--model)")
    cfg = _resolve(args)
    params, norm = _load_model(args.model)
    cube, labels = load_scene(cfg)
    mcfg = cfg.model_config(cube.bands, labels.classes)
    _check_params(params, mcfg, args.model)
    _, test_set, _ = extract_samples(cube, labels, cfg.per_class_counts, cfg.train.seed, cfg.patch, norm=norm)
    report = evaluate(params, mcfg, test_set)
    print(report.text(), end="")
    return 0


def cmd_map(args) -> int:
    cfg = _resolve(args)
    cube, labels = load_scene(cfg)
    out = Path(args.out or "map.ppm")
    if args.truth:
        render_map(labels.ids, out)
        print(f"wrote ground truth {out}")
        return 0
    if not args.model:
        raise ConfigError("a checkpoint is required (-m/--model) unless --truth is given")
    params, norm = _load_model(args.model)
    mcfg = cfg.model_config(cube.bands, labels.classes)
    _check_params(params, mcfg, args.model)
    mask = None if args.all else labels.ids > 0
    samples = scene_samples(cube, norm, mask, cfg.patch)
    ids = np.zeros((cube.height, cube.width), dtype=np.intp)
    ids[samples.coords[:, 0], samples.coords[:, 1]] = predict_set(samples, params, mcfg)
    render_map(ids, out)
    print(f"wrote {out} ({len(samples)} predicted pixels)")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import gradient_suite

    worst = gradient_suite(args.scale)
    for name, err in worst.items():
        print(f"{name:<24}{err:.3e}")
    top = max(worst.values())
    print(f"max relative error {top:.3e}")
    if top >= 1e-4:
        raise StructureError(f"gradient check failed: {top:.3e} >= 1e-4")
    return 0


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgr", description="Spectral graph reasoning for hyperspectral classification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model=False, runs=False):
        p.add_argument("-c", "--config", help="YAML run configuration")
        p.add_argument("-o", "--out", help="output path")
        if model:
            p.add_argument("-m", "--model", help="checkpoint file (.sgrm)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, help="BLAS threads (fallback: SGR_THREADS)")
        if runs:
            p.add_argument("--runs", type=int, help="override the number of training sessions")
        return p

    common(sub.add_parser("train", help="train and write checkpoints, history, report, manifest"), runs=True)\
        .set_defaults(func=cmd_train)
    common(sub.add_parser("eval", help="print the metrics report of a checkpoint on the test split"), model=True)\
        .set_defaults(func=cmd_eval)
    p = common(sub.add_parser("map", help="render a classification map as a P6 image"), model=True)
    p.add_argument("--all", action="store_true", help="predict every pixel, not only labeled ones")
    p.add_argument("--truth", action="store_true", help="render the ground-truth labels instead")
    p.set_defaults(func=cmd_map)
    p = common(sub.add_parser("synth", help="write a synthetic cube, labels and a starter config"))
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and a tiny model")
    p.add_argument("scale", nargs="?", choices=("small", "full"), default="small")
    p.add_argument("--threads", type=int, help="BLAS threads (fallback: SGR_THREADS)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"sgr: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except (StructureError, NonFiniteError) as exc:
        print(f"sgr: internal error: {exc}", file=sys.stderr)
        return 2
    except SgrError as exc:
        print(f"sgr: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sgr: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"sgr: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
