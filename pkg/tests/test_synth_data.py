from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wafernet.data import (
    Dataset, Sample, class_subset, generate_dataset, load_dataset, preprocess, save_dataset,
    scaled_counts, stratified_split, to_arrays,
)
from wafernet.errors import (
    ManifestError, MissingFileError, PGMFormatError, SplitError, UnknownLabelError, UnsupportedFormatError,
)
from wafernet.imageops import resize_bilinear
from wafernet.pgm import decode_pgm, encode_pgm, read_pgm, write_pgm
from wafernet.synth import DEFAULT_COUNTS, LOCAL_DEFECTS, WaferClass, generate_wafer, sample_seed

from oracles import bilinear_reference

W = WaferClass


# -- PGM -----------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (7, 13), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    out = read_pgm(tmp_path / "a.pgm")
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, img)


def test_pgm_header_with_comments():
    buf = b"P5\n# made by hand\n3 # width\n2\n255\n" + bytes(range(6))
    np.testing.assert_array_equal(decode_pgm(buf), [[0, 1, 2], [3, 4, 5]])


def test_pgm_encoding_exact():
    assert encode_pgm(np.array([[1, 2]], np.uint8)) == b"P5\n2 1\n255\n\x01\x02"


@pytest.mark.parametrize("buf,err", [
    (b"P5\n2 2\n65535\n" + bytes(8), UnsupportedFormatError),
    (b"P2\n1 1\n255\n0\n", UnsupportedFormatError),
    (b"P6\n1 1\n255\n" + bytes(3), UnsupportedFormatError),
    (b"GIF89a", PGMFormatError),
    (b"P5\n4 4\n255\n" + bytes(5), PGMFormatError),
    (b"P5\n4 x\n255\n", PGMFormatError),
    (b"P5\n4", PGMFormatError),
])
def test_pgm_errors(buf, err):
    with pytest.raises(err):
        decode_pgm(buf)


def test_pgm_missing(tmp_path):
    with pytest.raises(MissingFileError):
        read_pgm(tmp_path / "nope.pgm")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_pgm_lossless(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8)
    np.testing.assert_array_equal(decode_pgm(encode_pgm(img)), img)


# -- generator -------------------------------------------------------------------

def test_class_codes():
    assert [c.name for c in W] == ["Good", "LowLevel", "Circle", "Crack", "Displaced",
                                   "WaferOnPin", "Splinter", "Scratch"]
    assert [int(c) for c in W] == list(range(8))
    assert W.parse("waferonpin") is W.WaferOnPin
    with pytest.raises(KeyError):
        W.parse("Blob")


def test_default_counts_total():
    assert sum(DEFAULT_COUNTS.values()) == 4341
    assert DEFAULT_COUNTS[W.Good] == 1096 and DEFAULT_COUNTS[W.Splinter] == 79


@pytest.mark.parametrize("seed", range(10))
def test_good_and_lowlevel_intensity(seed):
    img, mask = generate_wafer(W.Good, seed, 64)
    assert img.mean() > 150 and not mask.any()
    img, mask = generate_wafer(W.LowLevel, seed, 64)
    assert img.mean() < 100 and not mask.any()


@pytest.mark.parametrize("cls", list(W))
def test_generator_deterministic_and_shaped(cls):
    a, ma = generate_wafer(cls, 123, 48)
    b, mb = generate_wafer(cls, 123, 48)
    assert a.shape == (48, 48) and a.dtype == np.uint8 and mb.dtype == np.uint8
    assert a.tobytes() == b.tobytes() and ma.tobytes() == mb.tobytes()
    assert (cls in LOCAL_DEFECTS) == bool(ma.any())


@pytest.mark.parametrize("cls", LOCAL_DEFECTS)
def test_local_defects_are_darker(cls):
    for seed in range(5):
        img, mask = generate_wafer(cls, seed, 96)
        good, _ = generate_wafer(W.Good, seed, 96)
        strong = mask > 200
        weak = mask == 0
        assert strong.any()
        # defect pixels darker than the undamaged plate of the same image
        plate = weak & (img > np.percentile(img, 50))
        assert img[strong].mean() < img[plate].mean()


def test_displaced_plate_leaves_frame():
    for seed in range(5):
        img, _ = generate_wafer(W.Displaced, seed, 128)
        good, _ = generate_wafer(W.Good, seed, 128)
        bright = lambda im: (im > 100).sum()  # noqa: E731
        assert bright(img) <= 0.85 * bright(good)


def test_wafer_on_pin_mostly_dark():
    for seed in range(5):
        img, _ = generate_wafer(W.WaferOnPin, seed, 64)
        assert (img > 100).mean() < 0.35


def test_separable_by_mean():
    good = [generate_wafer(W.Good, s, 32)[0].mean() for s in range(40)]
    low = [generate_wafer(W.LowLevel, s, 32)[0].mean() for s in range(40)]
    assert min(good) > max(low)


def test_sample_seeds_distinct():
    seeds = {sample_seed(0, c, i) for c in W for i in range(50)}
    assert len(seeds) == 400


# -- datasets --------------------------------------------------------------------

def test_scaled_counts_rounding():
    c = scaled_counts(scale=0.1)
    assert c[W.Good] == 110 and c[W.Splinter] == 8
    assert scaled_counts({W.Good: 5}, 0.1)[W.Good] == 4
    assert scaled_counts({W.Good: 0}, 0.5)[W.Good] == 0
    assert scaled_counts({W.Good: 5}, 0.5)[W.Good] == 4  # 2.5 -> 3, floored to 4
    assert scaled_counts({W.Good: 25}, 0.5)[W.Good] == 13  # 12.5 rounds up


def test_full_default_counts():
    ds = generate_dataset(size=32)
    assert len(ds) == 4341
    assert ds.counts() == DEFAULT_COUNTS


def test_empty_dataset(tmp_path):
    ds = generate_dataset({c: 0 for c in W}, out_dir=tmp_path)
    assert len(ds) == 0
    assert (tmp_path / "manifest.csv").read_text() == "filename,label\n"
    assert len(load_dataset(tmp_path)) == 0


def test_dataset_round_trip(tmp_path):
    counts = {c: 3 for c in W}
    ds = generate_dataset(counts, seed=5, size=32, out_dir=tmp_path)
    lines = (tmp_path / "manifest.csv").read_bytes().split(b"\n")
    assert lines[0] == b"filename,label" and b"\r" not in b"".join(lines)
    back = load_dataset(tmp_path)
    assert back.counts() == ds.counts()
    for a, b in zip(ds, back):
        assert a.name == b.name and a.label == b.label
        assert a.image.tobytes() == b.image.tobytes()
        assert (a.mask is None) == (b.mask is None)
    assert back.fingerprint() == ds.fingerprint()


def test_generation_independent_of_other_classes():
    a = generate_dataset({W.Circle: 3}, seed=1, size=32)
    b = generate_dataset({W.Good: 5, W.Circle: 3}, seed=1, size=32)
    assert [s.image.tobytes() for s in a] == [s.image.tobytes() for s in b.of_class(W.Circle)]


def _write_manifest(root, text):
    root.mkdir(exist_ok=True)
    (root / "manifest.csv").write_text(text)


def test_load_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path / "none")
    _write_manifest(tmp_path, "file,label\n")
    with pytest.raises(ManifestError):
        load_dataset(tmp_path)
    _write_manifest(tmp_path, "filename,label\nimages/x.pgm,good\n")
    with pytest.raises(MissingFileError, match="x.pgm"):
        load_dataset(tmp_path)
    (tmp_path / "images").mkdir()
    write_pgm(tmp_path / "images/x.pgm", np.zeros((4, 4), np.uint8))
    _write_manifest(tmp_path, "filename,label\nimages/x.pgm,GOOD\nimages/x.pgm,blob\n")
    with pytest.raises(UnknownLabelError, match="line 3"):
        load_dataset(tmp_path)
    _write_manifest(tmp_path, "filename,label\nimages/x.pgm,good\n")
    assert load_dataset(tmp_path)[0].label is W.Good
    (tmp_path / "images/x.pgm").write_bytes(b"P5\n4 4\n65535\n" + bytes(32))
    with pytest.raises(UnsupportedFormatError):
        load_dataset(tmp_path)


# -- split / subset -----------------------------------------------------------

def _synthetic(counts):
    samples = []
    for cls, n in counts.items():
        for i in range(n):
            samples.append(Sample(np.full((2, 2), i % 256, np.uint8), W(cls), None, f"{W(cls).name}_{i}"))
    return Dataset(samples)


@pytest.mark.parametrize("n,expect", [(10, (6, 2, 2)), (1096, (658, 219, 219)), (3, (1, 1, 1)), (79, (47, 16, 16))])
def test_split_allocation(n, expect):
    parts = stratified_split(_synthetic({W.Good: n}), seed=0)
    assert tuple(len(p) for p in parts) == expect


def test_split_disjoint_union_deterministic():
    ds = _synthetic(DEFAULT_COUNTS)
    a = stratified_split(ds, seed=3)
    b = stratified_split(ds, seed=3)
    c = stratified_split(ds, seed=4)
    names = [sorted(s.name for s in p) for p in a]
    assert names == [sorted(s.name for s in p) for p in b]
    assert names != [sorted(s.name for s in p) for p in c]
    flat = [n for p in names for n in p]
    assert len(flat) == len(set(flat)) == len(ds)


def test_split_errors():
    with pytest.raises(SplitError, match="Splinter"):
        stratified_split(_synthetic({W.Good: 10, W.Splinter: 2}))
    with pytest.raises(SplitError):
        stratified_split(_synthetic({W.Good: 10}), ratios=(0.5, 0.5, 0.1))


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.sampled_from(list(W)), st.integers(3, 400), min_size=1, max_size=8),
       st.integers(0, 10**6))
def test_split_proportion_bound(counts, seed):
    ratios = (0.6, 0.2, 0.2)
    parts = stratified_split(_synthetic(counts), ratios, seed)
    for cls, n in counts.items():
        sizes = [Counter(s.label for s in p)[cls] for p in parts]
        assert sum(sizes) == n
        for size, r in zip(sizes, ratios):
            assert abs(size - r * n) <= 1


def test_class_subset():
    ds = _synthetic(DEFAULT_COUNTS)
    s3 = class_subset(ds, 3)
    assert len(s3) == 1096 + 420 + 351
    assert set(s3.labels) == {0, 1, 2}
    s5 = class_subset(ds, 5)
    assert not {W.WaferOnPin, W.Splinter, W.Scratch} & {s.label for s in s5}
    assert s5.labels.max() == 4
    s8 = class_subset(ds, 8)
    assert len(s8) == len(ds) and (s8.labels == np.array([int(s.label) for s in ds])).all()
    with pytest.raises(ValueError):
        class_subset(ds, 4)


def test_subset_relabels_densely():
    ds = _synthetic({W.Good: 3, W.Crack: 3, W.Displaced: 3})
    assert sorted(set(class_subset(ds, 5).labels)) == [0, 3, 4]
    ds = _synthetic({W.Circle: 3, W.Scratch: 3})
    assert sorted(set(class_subset(ds, 8).labels)) == [2, 7]


# -- preprocess ------------------------------------------------------------------

def test_preprocess_identity_size():
    img = np.random.default_rng(0).integers(0, 256, (256, 256), dtype=np.uint8)
    x = preprocess(img, 256)
    assert x.shape == (1, 256, 256) and x.dtype == np.float32
    np.testing.assert_array_equal(x[0], (img / 255.0).astype(np.float32))


def test_preprocess_constant():
    x = preprocess(np.full((100, 60), 128, np.uint8), 32)
    np.testing.assert_allclose(x, 128 / 255, rtol=1e-7)


def test_downscale_matches_reference():
    img = np.random.default_rng(1).integers(0, 256, (1024, 1024), dtype=np.uint8)
    x = preprocess(img, 256)[0]
    ref = bilinear_reference(img / 255.0, 256, 256)
    assert np.abs(x - ref).max() < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(1, 16), st.integers(1, 16))
def test_resize_matches_reference(h, w, oh, ow):
    img = np.random.default_rng(h * 100 + w).random((h, w))
    np.testing.assert_allclose(resize_bilinear(img, oh, ow), bilinear_reference(img, oh, ow), atol=1e-12)


def test_preprocess_pretrained_path():
    img = np.full((64, 64), 255, np.uint8)
    x = preprocess(img, 64, pretrained_path=True)
    assert x.shape == (3, 224, 224)
    np.testing.assert_allclose(x[:, 0, 0], (1 - np.array([0.485, 0.456, 0.406])) / np.array([0.229, 0.224, 0.225]),
                               rtol=1e-6)


def test_preprocess_norm_and_to_arrays():
    from wafernet.augment import NormStats

    ds = _synthetic({W.Good: 2, W.Circle: 2})
    x, y = to_arrays(ds, 8, norm=NormStats(np.array([0.5]), np.array([0.25])))
    assert x.shape == (4, 1, 8, 8)
    np.testing.assert_array_equal(y, [0, 0, 2, 2])
    np.testing.assert_allclose(x[1, 0, 0, 0], (1 / 255 - 0.5) / 0.25, rtol=1e-6)
    with pytest.raises(ValueError):
        preprocess(np.zeros((4, 4), np.uint8), 4)
