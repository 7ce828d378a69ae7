import numpy as np
import pytest

from sgrnet.data import (
    INDIAN_PINES_COUNTS,
    PAVIA_COUNTS,
    HsiCube,
    LabelMap,
    SynthSpec,
    count_protocol,
    extract_samples,
    load_cube,
    load_labels,
    split_train_val,
    synth_cube,
    write_cube,
    write_labels,
)
from sgrnet.errors import IngestionError, ParameterError


def small_scene(seed=0, k=3, h=12, w=10, bands=5):
    rng = np.random.default_rng(seed)
    cube = HsiCube(rng.uniform(0, 10, size=(bands, h, w)).astype(np.float32))
    ids = rng.integers(0, k + 1, size=(h, w)).astype(np.uint16)
    return cube, LabelMap(ids, k)


# ------------------------------------------------------------ file format


def test_cube_round_trip_bitwise(tmp_path):
    cube, labels = small_scene()
    write_cube(cube, tmp_path / "c.raw")
    write_labels(labels, tmp_path / "l.raw")
    back = load_cube(tmp_path / "c.raw")
    assert back.values.tobytes() == cube.values.tobytes()
    lab = load_labels(tmp_path / "l.raw")
    assert np.array_equal(lab.ids, labels.ids) and lab.classes == 3


def test_hand_written_fixture(tmp_path):
    # 2 bands x 2 rows x 2 cols, band-sequential: value = 100*b + 10*r + c
    vals = [0, 1, 10, 11, 100, 101, 110, 111]
    (tmp_path / "fx.raw").write_bytes(np.array(vals, dtype="<f4").tobytes())
    (tmp_path / "fx.hdr").write_text(
        "magic:SGRC\nversion:1\nbands:2\nheight:2\nwidth:2\ndtype:f32\nlayout:bsq\nbyteorder:little\n"
    )
    cube = load_cube(tmp_path / "fx.raw", tmp_path / "fx.hdr")
    for b in range(2):
        for r in range(2):
            for c in range(2):
                assert cube.values[b, r, c] == 100 * b + 10 * r + c


def test_truncated_file_names_sizes(tmp_path):
    cube, _ = small_scene()
    write_cube(cube, tmp_path / "c.raw")
    raw = (tmp_path / "c.raw").read_bytes()
    (tmp_path / "c.raw").write_bytes(raw[:-6])
    with pytest.raises(IngestionError, match=f"expected {len(raw)} bytes, got {len(raw) - 6}"):
        load_cube(tmp_path / "c.raw")


def test_bad_magic_and_nonfinite(tmp_path):
    cube, _ = small_scene()
    write_cube(cube, tmp_path / "c.raw")
    hdr = tmp_path / "c.raw.hdr"
    hdr.write_text(hdr.read_text().replace("SGRC", "XXXX"))
    with pytest.raises(IngestionError, match="magic"):
        load_cube(tmp_path / "c.raw")
    bad = cube.values.copy()
    bad.flat[7] = np.nan
    write_cube(HsiCube(bad), tmp_path / "n.raw")
    with pytest.raises(IngestionError, match="byte 28"):
        load_cube(tmp_path / "n.raw")


def test_label_out_of_range(tmp_path):
    _, labels = small_scene()
    write_labels(labels, tmp_path / "l.raw")
    hdr = tmp_path / "l.raw.hdr"
    hdr.write_text(hdr.read_text().replace("classes:3", "classes:2"))
    with pytest.raises(IngestionError, match="classes=2"):
        load_labels(tmp_path / "l.raw")


def test_missing_header(tmp_path):
    with pytest.raises(IngestionError, match="cannot read header"):
        load_cube(tmp_path / "nothing.raw")


# ------------------------------------------------------------ sampling


def _scene_with_sizes(counts):
    sizes = [a + b for a, b in counts]
    ids = np.concatenate([np.full(n, c, dtype=np.uint16) for c, n in enumerate(sizes, start=1)])
    side = int(np.ceil(np.sqrt(len(ids))))
    flat = np.zeros(side * side, dtype=np.uint16)
    flat[: len(ids)] = ids
    return LabelMap(flat.reshape(side, side), len(counts))


@pytest.mark.parametrize("table,totals,labeled", [
    (PAVIA_COUNTS, (450, 42326), 42776),
    (INDIAN_PINES_COUNTS, (1355, 8894), 10249),
])
def test_protocol_totals(table, totals, labeled):
    labels = _scene_with_sizes(table)
    train = [a for a, _ in table]
    assert count_protocol(labels.class_sizes(), train) == totals
    # the published Pavia total of 42776 is the labeled-pixel count, train included
    assert int(labels.class_sizes().sum()) == labeled


def test_extract_counts_on_scene_shaped_like_indian_pines():
    labels = _scene_with_sizes(INDIAN_PINES_COUNTS)
    h, w = labels.shape
    cube = HsiCube(np.random.default_rng(0).uniform(size=(15, h, w)).astype(np.float32))
    tr, te, _ = extract_samples(cube, labels, [a for a, _ in INDIAN_PINES_COUNTS], seed=3)
    assert (len(tr), len(te)) == (1355, 8894)
    assert np.array_equal(np.bincount(te.labels, minlength=17)[1:], [b for _, b in INDIAN_PINES_COUNTS])


def test_extract_disjoint_and_unlabeled_excluded():
    cube, labels = small_scene(1)
    tr, te, _ = extract_samples(cube, labels, 3, seed=0)
    a = {tuple(c) for c in tr.coords}
    b = {tuple(c) for c in te.coords}
    assert not a & b
    for r, c in a | b:
        assert labels.ids[r, c] > 0
    assert len(a | b) == np.count_nonzero(labels.ids)


def test_extract_reproducible():
    cube, labels = small_scene(2)
    a, _, _ = extract_samples(cube, labels, 4, seed=9)
    b, _, _ = extract_samples(cube, labels, 4, seed=9)
    assert np.array_equal(a.coords, b.coords)
    assert a.patches().tobytes() == b.patches().tobytes()


def test_corner_patch_mirror_padding():
    cube, labels = small_scene(3)
    tr, _, norm = extract_samples(cube, labels, 2, seed=0)
    ts = tr.subset(np.arange(len(tr)))
    ts.coords[0] = (0, 0)
    patch = ts.patches([0])[0, 0]  # (bands, 7, 7)
    expected, _ = norm.apply(cube.values)
    np.testing.assert_array_equal(patch[:, 3, 3], expected[:, 0, 0])
    # reflection about the border pixel
    np.testing.assert_array_equal(patch[:, 2, 3], expected[:, 1, 0])
    np.testing.assert_array_equal(patch[:, 3, 0], expected[:, 0, 3])


def test_normalization_uses_training_pixels_only():
    cube, labels = small_scene(4)
    tr, te, norm = extract_samples(cube, labels, 3, seed=1)
    centers = tr.patches()[:, 0, :, 3, 3]
    assert centers.min() >= 0 and centers.max() <= 1
    np.testing.assert_allclose(centers.min(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(centers.max(axis=0), 1, atol=1e-6)
    raw = cube.values.reshape(cube.bands, -1)[:, tr.coords[:, 0] * cube.width + tr.coords[:, 1]]
    np.testing.assert_array_equal(norm.low, raw.min(axis=1))
    test_centers = te.patches()[:, 0, :, 3, 3]
    assert test_centers.min() >= 0 and test_centers.max() <= 1


def test_extract_too_many():
    cube, labels = small_scene(5)
    with pytest.raises(ParameterError, match="class"):
        extract_samples(cube, labels, 1000, seed=0)


def test_split_pavia_shape():
    labels = LabelMap(np.repeat(np.arange(1, 10, dtype=np.uint16), 60).reshape(30, 18), 9)
    cube = HsiCube(np.zeros((15, 30, 18), dtype=np.float32))
    tr, _, _ = extract_samples(cube, labels, 50, seed=0)
    fit, val = split_train_val(tr, 0.9, seed=0)
    assert (len(fit), len(val)) == (405, 45)
    assert np.array_equal(np.bincount(val.labels)[1:], [5] * 9)
    fit2, val2 = split_train_val(tr, 0.9, seed=0)
    assert np.array_equal(fit.coords, fit2.coords) and np.array_equal(val.coords, val2.coords)


def test_split_errors():
    cube, labels = small_scene(6)
    tr, _, _ = extract_samples(cube, labels, 3, seed=0)
    with pytest.raises(ParameterError):
        split_train_val(tr, 1.0)
    with pytest.raises(ParameterError, match="at least 2"):
        split_train_val(tr.subset([0, 3, 6]), 0.9)


# ------------------------------------------------------------ synthetic scene


def test_synth_noiseless_classes_are_constant():
    cube, labels = synth_cube(SynthSpec(noise=0.0, height=20, width=20))
    pix = cube.values.reshape(cube.bands, -1).T
    ids = labels.ids.ravel()
    for c in range(1, labels.classes + 1):
        members = pix[ids == c]
        assert (members == members[0]).all()


def test_synth_deterministic():
    a, la = synth_cube(SynthSpec(seed=4))
    b, lb = synth_cube(SynthSpec(seed=4))
    assert a.values.tobytes() == b.values.tobytes() and np.array_equal(la.ids, lb.ids)
    c, _ = synth_cube(SynthSpec(seed=5))
    assert c.values.tobytes() != a.values.tobytes()


def test_synth_class_means_match_signatures():
    spec = SynthSpec(noise=0.5, seed=1)
    cube, labels = synth_cube(spec)
    sig = spec.signatures()
    pix = cube.values.reshape(cube.bands, -1).T.astype(np.float64)
    ids = labels.ids.ravel()
    assert np.count_nonzero(ids) == ids.size
    for c in range(1, spec.classes + 1):
        members = pix[ids == c]
        tol = 3 * spec.noise / np.sqrt(len(members))
        # loose per-band 3-sigma band; allow a handful of excursions out of 48 bands
        assert np.count_nonzero(np.abs(members.mean(axis=0) - sig[c - 1]) > tol) <= 2


def test_synth_rejects_degenerate():
    with pytest.raises(ParameterError):
        synth_cube(SynthSpec(classes=17))
    with pytest.raises(ParameterError):
        synth_cube(SynthSpec(noise=-1))
