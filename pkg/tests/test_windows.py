import struct

import numpy as np
import pytest

from nienie.signals import (CanonicalSeries, LABEL_AMUSEMENT, LABEL_BASELINE,
                            LABEL_STRESS)
from nienie.windows import (DatasetError, NormStats, WindowedDataset,
                            apply_norm, assign_labels, build_dataset, fit_norm,
                            invert_norm, load_dataset, save_dataset,
                            slide_windows, stratified_split, window_count)


def series_of(t, label=LABEL_BASELINE):
    data = np.arange(t * 3, dtype=float).reshape(t, 3)
    return CanonicalSeries(data=data, segments=[(label, 0, t)])


# --- sliding windows ------------------------------------------------------

@pytest.mark.parametrize("t,n", [(39, 0), (40, 1), (100, 4), (1000, 49)])
def test_window_counts(t, n):
    assert window_count(t) == n
    assert len(slide_windows(np.zeros((t, 3)))) == n


def test_window_starts_are_step_multiples():
    starts = [s for s, _ in slide_windows(np.zeros((100, 3)))]
    assert starts == [0, 20, 40, 60]


def test_window_count_formula_sweep():
    for t in range(0, 500):
        expected = max(0, (t - 40) // 20 + 1)
        assert window_count(t) == expected
        assert len(slide_windows(np.zeros((t, 3)))) == expected


def test_windows_are_contiguous_slices():
    data = np.arange(100 * 3, dtype=float).reshape(100, 3)
    for start, win in slide_windows(data):
        assert win.shape == (40, 3)
        assert np.array_equal(win, data[start:start + 40])


def test_slide_windows_accepts_series():
    assert len(slide_windows(series_of(80))) == 3


def test_slide_windows_rejects_bad_geometry():
    with pytest.raises(ValueError):
        slide_windows(np.zeros((100, 3)), window_len=0)
    with pytest.raises(ValueError):
        slide_windows(np.zeros((100, 3)), step=-1)


# --- labeling -------------------------------------------------------------

def test_majority_overlap_label():
    # 25 samples of baseline, then stress: the window at 0 is 25/15
    segments = [(LABEL_BASELINE, 0, 25), (LABEL_STRESS, 25, 100)]
    labels, kept, dropped = assign_labels([0], segments)
    assert labels.tolist() == [LABEL_BASELINE]
    assert kept.tolist() == [0]
    assert dropped == 0


def test_tie_goes_to_earlier_segment():
    segments = [(LABEL_BASELINE, 0, 20), (LABEL_STRESS, 20, 100)]
    labels, _, _ = assign_labels([0], segments)
    assert labels.tolist() == [LABEL_BASELINE]


def test_window_outside_all_segments_dropped():
    segments = [(LABEL_BASELINE, 0, 40)]
    labels, kept, dropped = assign_labels([0, 60], segments)
    assert labels.tolist() == [LABEL_BASELINE]
    assert kept.tolist() == [0]
    assert dropped == 1


def test_keep_boundary_false_drops_straddlers():
    segments = [(LABEL_BASELINE, 0, 30), (LABEL_STRESS, 30, 100)]
    labels, kept, dropped = assign_labels([0, 40], segments, keep_boundary=False)
    assert kept.tolist() == [1]
    assert labels.tolist() == [LABEL_STRESS]
    assert dropped == 1


def test_assign_labels_empty_segments():
    with pytest.raises(ValueError):
        assign_labels([0], [])


def test_build_dataset():
    series = CanonicalSeries(
        data=np.random.default_rng(0).normal(size=(120, 3)),
        segments=[(LABEL_BASELINE, 0, 60), (LABEL_STRESS, 60, 120)])
    ds = build_dataset(series)
    assert ds.inputs.shape == (5, 40, 3)
    assert ds.labels.tolist() == [0, 0, 0, 1, 1]


def test_build_dataset_empty_series():
    ds = build_dataset(series_of(10))
    assert ds.n == 0


# --- stratified split -----------------------------------------------------

def test_split_exact_counts_balanced():
    labels = np.repeat([0, 1, 2], 100)
    split = stratified_split(labels, test_frac=0.2, seed=0)
    assert len(split.test) == 60
    for cls in (0, 1, 2):
        assert int((labels[split.test] == cls).sum()) == 20


def test_split_floor_rule_small():
    split = stratified_split([0, 0, 1, 1], test_frac=0.5, seed=0)
    assert len(split.test) == 2
    assert len(split.train) == 2
    assert sorted(np.concatenate([split.train, split.test]).tolist()) == [0, 1, 2, 3]


def test_split_disjoint_and_complete():
    labels = np.random.default_rng(2).integers(0, 3, size=97)
    split = stratified_split(labels, test_frac=0.25, seed=5)
    combined = np.concatenate([split.train, split.test])
    assert len(set(combined.tolist())) == 97
    assert set(combined.tolist()) == set(range(97))


def test_split_deterministic():
    labels = np.repeat([0, 1, 2], 30)
    a = stratified_split(labels, seed=3)
    b = stratified_split(labels, seed=3)
    assert np.array_equal(a.test, b.test)
    c = stratified_split(labels, seed=4)
    assert not np.array_equal(a.test, c.test)


def test_split_rejects_tiny_class():
    with pytest.raises(DatasetError, match="fewer than 2"):
        stratified_split([0, 0, 1], test_frac=0.2)


def test_split_rejects_bad_frac():
    with pytest.raises(ValueError):
        stratified_split([0, 0, 1, 1], test_frac=0.0)
    with pytest.raises(ValueError):
        stratified_split([0, 0, 1, 1], test_frac=1.0)


# --- normalization --------------------------------------------------------

def test_fit_norm_moments():
    rng = np.random.default_rng(3)
    w = rng.normal(loc=[1.0, 2.0, 3.0], scale=[0.5, 1.0, 2.0], size=(50, 40, 3))
    stats = fit_norm(w)
    flat = w.reshape(-1, 3)
    assert np.allclose(stats.mean, flat.mean(axis=0))
    assert np.allclose(stats.std, flat.std(axis=0))


def test_constant_channel_clamps_and_normalizes_to_zero():
    w = np.ones((4, 40, 3)) * np.array([1.0, 2.0, 3.0])
    stats = fit_norm(w)
    assert np.all(stats.std == 1e-6)
    out = apply_norm(w, stats)
    assert np.all(out == 0.0)


def test_apply_invert_round_trip():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(10, 40, 3))
    stats = fit_norm(w)
    back = invert_norm(apply_norm(w, stats), stats)
    assert np.max(np.abs(back - w)) < 1e-12


def test_fit_norm_rejects_empty():
    with pytest.raises(DatasetError):
        fit_norm(np.empty((0, 40, 3)))


# --- binary container -----------------------------------------------------

def make_ds(n=7, seed=0):
    rng = np.random.default_rng(seed)
    return WindowedDataset(inputs=rng.normal(size=(n, 40, 3)),
                           labels=rng.integers(0, 3, size=n))


def test_dataset_round_trip(tmp_path):
    ds = make_ds()
    p = tmp_path / "d.nnwd"
    save_dataset(ds, p)
    loaded = load_dataset(p)
    assert loaded.inputs.shape == (7, 40, 3)
    assert np.array_equal(loaded.labels, ds.labels)
    # inputs survive exactly at single precision
    assert np.array_equal(loaded.inputs,
                          ds.inputs.astype("<f4").astype(np.float64))


def test_dataset_header_layout(tmp_path):
    ds = make_ds(n=3)
    p = tmp_path / "d.nnwd"
    save_dataset(ds, p)
    raw = p.read_bytes()
    magic, version, n, window_len, channels = struct.unpack("<4sHIHH", raw[:14])
    assert magic == b"NNWD"
    assert version == 1
    assert (n, window_len, channels) == (3, 40, 3)
    assert len(raw) == 14 + 3 * 40 * 3 * 4 + 3 + 4


def test_dataset_checksum_detects_corruption(tmp_path):
    p = tmp_path / "d.nnwd"
    save_dataset(make_ds(), p)
    raw = bytearray(p.read_bytes())
    raw[30] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="checksum"):
        load_dataset(p)


def test_dataset_rejects_truncation(tmp_path):
    p = tmp_path / "d.nnwd"
    save_dataset(make_ds(), p)
    p.write_bytes(p.read_bytes()[:-9])
    with pytest.raises(DatasetError):
        load_dataset(p)


def test_dataset_rejects_bad_magic(tmp_path):
    p = tmp_path / "d.nnwd"
    save_dataset(make_ds(), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="magic"):
        load_dataset(p)


def test_dataset_rejects_future_version(tmp_path):
    p = tmp_path / "d.nnwd"
    save_dataset(make_ds(), p)
    raw = bytearray(p.read_bytes())
    raw[4:6] = struct.pack("<H", 99)
    # re-seal so only the version check can fire
    import zlib
    body = bytes(raw[:-4])
    raw[-4:] = struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="version"):
        load_dataset(p)


def test_labels_survive_for_all_classes(tmp_path):
    ds = WindowedDataset(inputs=np.zeros((3, 40, 3)),
                         labels=np.array([LABEL_BASELINE, LABEL_STRESS,
                                          LABEL_AMUSEMENT]))
    p = tmp_path / "d.nnwd"
    save_dataset(ds, p)
    assert load_dataset(p).labels.tolist() == [0, 1, 2]
