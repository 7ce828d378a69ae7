"""Hyperspectral cube and label ingestion, patch sampling and a synthetic scene generator.

On-disk format: a text header of ``key:value`` lines next to a raw data file.
Cubes are band-sequential little-endian float32 (``magic:SGRC``); label maps
are row-major little-endian uint16 (``magic:SGRL``), with 0 meaning unlabeled.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, ParameterError

log = logging.getLogger(__name__)

CUBE_MAGIC = "SGRC"
LABEL_MAGIC = "SGRL"
FORMAT_VERSION = 1
PATCH = 7
MAX_SYNTH_CLASSES = 16
DEFAULT_NOISE = 0.5

# Per-class (train, test) sample counts of the two benchmark scenes.
PAVIA_COUNTS = [(50, 6581), (50, 18599), (50, 2049), (50, 3014), (50, 1295),
                (50, 4979), (50, 1280), (50, 3632), (50, 897)]
INDIAN_PINES_COUNTS = [(40, 6), (100, 1328), (100, 730), (100, 137), (100, 383),
                       (100, 630), (20, 8), (100, 378), (15, 5), (100, 872),
                       (100, 2355), (100, 493), (100, 105), (100, 1165), (100, 286),
                       (80, 13)]


@dataclass(frozen=True)
class HsiCube:
    values: np.ndarray  # (bands, height, width) float32

    def __post_init__(self):
        if self.values.ndim != 3:
            raise IngestionError(f"cube must be bands×height×width, got shape {self.values.shape}")

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def band_range(self) -> tuple[np.ndarray, np.ndarray]:
        flat = self.values.reshape(self.bands, -1)
        return flat.min(axis=1), flat.max(axis=1)


@dataclass(frozen=True)
class LabelMap:
    ids: np.ndarray  # (height, width) uint16, 0 = unlabeled
    classes: int

    def __post_init__(self):
        if self.ids.ndim != 2:
            raise IngestionError(f"label map must be 2-D, got shape {self.ids.shape}")
        top = int(self.ids.max(initial=0))
        if top > self.classes:
            raise IngestionError(f"label id {top} exceeds class count {self.classes}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def class_sizes(self) -> np.ndarray:
        """Labeled pixel count per class id 1..K."""
        return np.bincount(self.ids.ravel(), minlength=self.classes + 1)[1:]


# ------------------------------------------------------------ file format


def _header_path(data_path, header_path):
    return Path(header_path) if header_path is not None else Path(str(data_path) + ".hdr")


def _write_header(path: Path, fields: dict) -> None:
    path.write_text("".join(f"{k}:{v}\n" for k, v in fields.items()))


def _read_header(path: Path, magic: str, required: dict) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read header {path}: {exc.strerror}") from exc
    fields, offset = {}, 0
    for line in text.splitlines(keepends=True):
        body = line.strip()
        if body:
            key, sep, value = body.partition(":")
            if not sep:
                raise IngestionError(f"{path}: malformed header line at byte {offset}: {body!r}")
            fields[key.strip()] = value.strip()
        offset += len(line.encode())
    if fields.get("magic") != magic:
        raise IngestionError(f"{path}: magic mismatch at byte 0 (expected {magic}, got {fields.get('magic')!r})")
    if fields.get("version") != str(FORMAT_VERSION):
        raise IngestionError(f"{path}: unsupported version {fields.get('version')!r}")
    for key, want in required.items():
        if fields.get(key) != want:
            raise IngestionError(f"{path}: {key} must be {want}, got {fields.get(key)!r}")
    return fields


def _dims(fields: dict, keys, path) -> list[int]:
    try:
        dims = [int(fields[k]) for k in keys]
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: header needs integer {', '.join(keys)}") from exc
    if min(dims) < 1:
        raise IngestionError(f"{path}: non-positive extent in {dims}")
    return dims


def _read_raw(path, dtype: str, count: int) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read data file {path}: {exc.strerror}") from exc
    expected = count * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise IngestionError(f"{path}: size mismatch, expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype)


def write_cube(cube: HsiCube, data_path, header_path=None) -> None:
    _write_header(_header_path(data_path, header_path), {
        "magic": CUBE_MAGIC, "version": FORMAT_VERSION, "bands": cube.bands,
        "height": cube.height, "width": cube.width, "dtype": "f32",
        "layout": "bsq", "byteorder": "little",
    })
    Path(data_path).write_bytes(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def load_cube(data_path, header_path=None) -> HsiCube:
    hp = _header_path(data_path, header_path)
    fields = _read_header(hp, CUBE_MAGIC, {"dtype": "f32", "layout": "bsq", "byteorder": "little"})
    b, h, w = _dims(fields, ("bands", "height", "width"), hp)
    values = _read_raw(data_path, "<f4", b * h * w)
    bad = ~np.isfinite(values)
    if bad.any():
        first = int(np.argmax(bad))
        raise IngestionError(f"{data_path}: non-finite value at byte {4 * first}")
    return HsiCube(values.reshape(b, h, w).astype(np.float32))


def write_labels(labels: LabelMap, data_path, header_path=None) -> None:
    h, w = labels.shape
    _write_header(_header_path(data_path, header_path), {
        "magic": LABEL_MAGIC, "version": FORMAT_VERSION, "height": h, "width": w,
        "classes": labels.classes, "dtype": "u16", "layout": "row-major", "byteorder": "little",
    })
    Path(data_path).write_bytes(np.ascontiguousarray(labels.ids, dtype="<u2").tobytes())


def load_labels(data_path, header_path=None) -> LabelMap:
    hp = _header_path(data_path, header_path)
    fields = _read_header(hp, LABEL_MAGIC, {"dtype": "u16", "byteorder": "little"})
    h, w, k = _dims(fields, ("height", "width", "classes"), hp)
    ids = _read_raw(data_path, "<u2", h * w)
    over = ids > k
    if over.any():
        first = int(np.argmax(over))
        raise IngestionError(f"{data_path}: label {ids[first]} > classes={k} at byte {2 * first}")
    return LabelMap(ids.reshape(h, w).astype(np.uint16), k)


# ------------------------------------------------------------ sampling


@dataclass
class SampleSet:
    """Labeled patch centers over a normalized, mirror-padded cube.

    Patches are cut on demand so that large test sets stay cheap.
    """

    padded: np.ndarray  # (bands, H + P - 1, W + P - 1), normalized
    coords: np.ndarray  # (n, 2) row, col in the original image
    labels: np.ndarray  # (n,) class ids 1..K
    role: str
    patch: int = PATCH

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index, role: str | None = None) -> "SampleSet":
        index = np.asarray(index, dtype=np.intp)
        return SampleSet(self.padded, self.coords[index], self.labels[index], role or self.role, self.patch)

    def patches(self, index=None) -> np.ndarray:
        """Float32 patches ``(n, 1, bands, P, P)`` for the selected samples."""
        coords = self.coords if index is None else self.coords[np.asarray(index, dtype=np.intp)]
        p = self.patch
        rows = coords[:, 0, None] + np.arange(p)
        cols = coords[:, 1, None] + np.arange(p)
        out = self.padded[:, rows[:, :, None], cols[:, None, :]]  # (bands, n, P, P)
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))[:, None]


@dataclass(frozen=True)
class Normalization:
    low: np.ndarray  # per-band minimum over training centers
    high: np.ndarray

    def apply(self, values: np.ndarray) -> tuple[np.ndarray, int]:
        """Map to [0, 1]; returns the normalized cube and the clamped value count."""
        span = np.where(self.high > self.low, self.high - self.low, 1.0)
        out = (values - self.low[:, None, None]) / span[:, None, None]
        clamped = int(np.count_nonzero((out < 0) | (out > 1)))
        return np.clip(out, 0.0, 1.0).astype(np.float32), clamped


def mirror_pad(values: np.ndarray, patch: int = PATCH) -> np.ndarray:
    r = patch // 2
    return np.pad(values, ((0, 0), (r, r), (r, r)), mode="reflect")


def normalized_padded(cube: HsiCube, norm: Normalization, patch: int = PATCH) -> np.ndarray:
    values, clamped = norm.apply(cube.values)
    if clamped:
        log.info("normalization clamped %d values outside the training range", clamped)
    return mirror_pad(values, patch)


def scene_samples(cube: HsiCube, norm: Normalization, mask=None, patch: int = PATCH, labels: LabelMap | None = None) -> SampleSet:
    """Samples centred on every pixel where ``mask`` is true (all pixels by default), row-major."""
    mask = np.ones((cube.height, cube.width), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    ids = labels.ids[rows, cols].astype(np.intp) if labels is not None else np.zeros(len(rows), dtype=np.intp)
    return SampleSet(normalized_padded(cube, norm, patch), np.stack([rows, cols], axis=1), ids, "scene", patch)


def extract_samples(cube: HsiCube, labels: LabelMap, per_class, seed: int, patch: int = PATCH,
                    norm: Normalization | None = None):
    """Seeded per-class training draw; every other labeled pixel becomes a test sample.

    ``per_class`` is one count per class id 1..K (or a single int for all).
    Normalization comes from the drawn training pixels unless ``norm`` is given.
    Returns ``(train, test, normalization)``.
    """
    if labels.shape != (cube.height, cube.width):
        raise ParameterError(f"label map {labels.shape} does not match cube {(cube.height, cube.width)}")
    if patch < 1 or patch % 2 == 0 or patch // 2 >= min(cube.height, cube.width):
        raise ParameterError(f"patch size {patch} must be odd and fit the image")
    k = labels.classes
    counts = [int(per_class)] * k if np.isscalar(per_class) else [int(c) for c in per_class]
    if len(counts) != k:
        raise ParameterError(f"need {k} per-class counts, got {len(counts)}")
    flat = labels.ids.ravel()
    rng = np.random.default_rng(seed)
    train_idx = []
    for cls, want in enumerate(counts, start=1):
        pool = np.flatnonzero(flat == cls)
        if want < 0 or want > len(pool):
            raise ParameterError(f"class {cls}: asked for {want} training pixels, only {len(pool)} labeled")
        train_idx.append(rng.choice(pool, size=want, replace=False))
    train_idx = np.concatenate(train_idx).astype(np.intp)
    taken = np.zeros(flat.size, dtype=bool)
    taken[train_idx] = True
    test_idx = np.flatnonzero((flat > 0) & ~taken)

    width = cube.width
    if norm is None:
        pix = cube.values.reshape(cube.bands, -1)[:, train_idx]
        norm = Normalization(pix.min(axis=1), pix.max(axis=1))
    padded = normalized_padded(cube, norm, patch)

    def make(idx, role):
        coords = np.stack([idx // width, idx % width], axis=1)
        return SampleSet(padded, coords, flat[idx].astype(np.intp), role, patch)

    return make(train_idx, "train"), make(test_idx, "test"), norm


def split_train_val(train: SampleSet, fraction: float = 0.9, seed: int = 0) -> tuple[SampleSet, SampleSet]:
    """Stratified split; each class keeps ``round(fraction * n_c)`` fit samples and at least one of each."""
    if not 0 < fraction < 1:
        raise ParameterError(f"fit fraction must lie in (0, 1) so that validation is non-empty, got {fraction}")
    rng = np.random.default_rng(seed)
    fit, val = [], []
    for cls in np.unique(train.labels):
        members = np.flatnonzero(train.labels == cls)
        if len(members) < 2:
            raise ParameterError(f"class {cls} has {len(members)} training sample(s); need at least 2 to split")
        members = rng.permutation(members)
        n_fit = min(max(int(round(fraction * len(members))), 1), len(members) - 1)
        fit.append(members[:n_fit])
        val.append(members[n_fit:])
    return train.subset(np.sort(np.concatenate(fit)), "fit"), train.subset(np.sort(np.concatenate(val)), "val")


# ------------------------------------------------------------ synthetic scene


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 4
    bands: int = 48
    height: int = 64
    width: int = 64
    noise: float = DEFAULT_NOISE
    seed: int = 0
    sites_per_class: int = 3

    def signatures(self) -> np.ndarray:
        """Noise-free class spectra ``(K, bands)``: one Gaussian bump per class."""
        b = np.arange(self.bands, dtype=np.float64)
        centers = (np.arange(self.classes) + 0.5) * self.bands / self.classes
        width = self.bands / (2.0 * self.classes)
        return np.exp(-0.5 * ((b[None, :] - centers[:, None]) / width) ** 2)


def synth_cube(spec: SynthSpec = SynthSpec()) -> tuple[HsiCube, LabelMap]:
    """Voronoi class regions filled with bump signatures plus seeded Gaussian noise."""
    k = spec.classes
    if not 2 <= k <= MAX_SYNTH_CLASSES:
        raise ParameterError(f"synthetic class count must be in [2, {MAX_SYNTH_CLASSES}], got {k}")
    if spec.bands < k or spec.height < 2 or spec.width < 2 or spec.noise < 0 or spec.sites_per_class < 1:
        raise ParameterError(f"degenerate synthetic spec {spec}")
    rng = np.random.default_rng(spec.seed)
    n_sites = k * spec.sites_per_class
    sites = rng.uniform([0, 0], [spec.height, spec.width], size=(n_sites, 2))
    site_class = np.arange(n_sites) % k + 1
    rr, cc = np.mgrid[0: spec.height, 0: spec.width]
    d2 = (rr[..., None] + 0.5 - sites[:, 0]) ** 2 + (cc[..., None] + 0.5 - sites[:, 1]) ** 2
    ids = site_class[np.argmin(d2, axis=-1)].astype(np.uint16)
    sig = spec.signatures()
    values = sig[ids.astype(np.intp) - 1].transpose(2, 0, 1)
    values = values + spec.noise * rng.standard_normal(values.shape)
    return HsiCube(values.astype(np.float32)), LabelMap(ids, k)


def count_protocol(class_sizes, train_counts) -> tuple[int, int]:
    """Total (train, test) sample counts for a label map under a per-class draw."""
    sizes = np.asarray(class_sizes)
    train = np.asarray(train_counts)
    if (train > sizes).any():
        raise ParameterError("per-class training count exceeds available pixels")
    return int(train.sum()), int((sizes - train).sum())
