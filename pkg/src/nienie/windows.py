"""Sliding-window segmentation, stratified splitting, and normalization.

Windows are (40, 3) slices of the canonical series taken every 20 samples,
labeled by majority overlap with the recording's condition segments.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WINDOW_LEN = 40
WINDOW_STEP = 20
NORM_EPS = 1e-6

_DATASET_MAGIC = b"NNWD"
_DATASET_VERSION = 1


class DatasetError(ValueError):
    """Malformed dataset container or split request."""


@dataclass
class WindowedDataset:
    inputs: np.ndarray   # (N, window_len, 3) float64
    labels: np.ndarray   # (N,) int
    window_len: int = WINDOW_LEN
    step: int = WINDOW_STEP

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class SplitIndices:
    train: np.ndarray
    test: np.ndarray


@dataclass
class NormStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,), clamped >= NORM_EPS


def slide_windows(data, window_len: int = WINDOW_LEN, step: int = WINDOW_STEP):
    """Return [(start, window)] with starts 0, step, 2*step ... while the
    full window fits. data is (T, C) or a CanonicalSeries."""
    if window_len <= 0 or step <= 0:
        raise ValueError("window_len and step must be positive")
    arr = np.asarray(getattr(data, "data", data), dtype=np.float64)
    t = arr.shape[0]
    out = []
    start = 0
    while start + window_len <= t:
        out.append((start, arr[start:start + window_len]))
        start += step
    return out


def window_count(t: int, window_len: int = WINDOW_LEN, step: int = WINDOW_STEP) -> int:
    return max(0, (t - window_len) // step + 1)


def assign_labels(starts, segments, window_len: int = WINDOW_LEN,
                  keep_boundary: bool = True):
    """Label each window start by majority sample overlap with segments.

    Ties go to the earlier segment. Windows overlapping no segment are
    dropped, as are boundary-straddling windows when keep_boundary is False.
    Returns (labels, kept_positions, dropped_count).
    """
    if not segments:
        raise ValueError("segment list is empty")
    labels, kept = [], []
    dropped = 0
    for pos, start in enumerate(starts):
        end = start + window_len
        best_label, best_overlap = None, 0
        n_overlapping = 0
        for label, seg_start, seg_end in segments:
            overlap = min(end, seg_end) - max(start, seg_start)
            if overlap > 0:
                n_overlapping += 1
                if overlap > best_overlap:  # strict: ties keep the earlier segment
                    best_overlap = overlap
                    best_label = label
        if best_label is None or (not keep_boundary and n_overlapping > 1):
            dropped += 1
            continue
        labels.append(best_label)
        kept.append(pos)
    return np.asarray(labels, dtype=np.int64), np.asarray(kept, dtype=np.int64), dropped


def build_dataset(series, window_len: int = WINDOW_LEN, step: int = WINDOW_STEP,
                  keep_boundary: bool = True) -> WindowedDataset:
    """Slide windows over a CanonicalSeries and label them from its segments."""
    pairs = slide_windows(series, window_len, step)
    if not pairs:
        return WindowedDataset(inputs=np.empty((0, window_len, 3)),
                               labels=np.empty(0, dtype=np.int64),
                               window_len=window_len, step=step)
    starts = [s for s, _ in pairs]
    labels, kept, _ = assign_labels(starts, series.segments, window_len, keep_boundary)
    inputs = np.stack([pairs[i][1] for i in kept]) if kept.size else \
        np.empty((0, window_len, 3))
    return WindowedDataset(inputs=inputs, labels=labels, window_len=window_len, step=step)


def stratified_split(labels, test_frac: float = 0.2, seed: int = 0) -> SplitIndices:
    """Per-class seeded shuffle; the first floor(test_frac * n_class) go to test."""
    labels = np.asarray(labels)
    if not (0.0 < test_frac < 1.0):
        raise ValueError("test_frac must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    test_idx = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < 2:
            raise DatasetError(f"class {int(cls)} has fewer than 2 members")
        perm = rng.permutation(members.size)
        n_test = int(np.floor(test_frac * members.size))
        test_idx.extend(members[perm[:n_test]].tolist())
    test = np.asarray(sorted(test_idx), dtype=np.int64)
    mask = np.ones(labels.size, dtype=bool)
    mask[test] = False
    train = np.flatnonzero(mask)
    return SplitIndices(train=train, test=test)


def fit_norm(train_windows) -> NormStats:
    """Per-channel mean/std over all training samples; std clamped at NORM_EPS."""
    arr = np.asarray(train_windows, dtype=np.float64)
    if arr.size == 0:
        raise DatasetError("cannot fit normalization on an empty training set")
    flat = arr.reshape(-1, arr.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.maximum(std, NORM_EPS)
    return NormStats(mean=mean, std=std)


def apply_norm(windows, stats: NormStats) -> np.ndarray:
    return (np.asarray(windows, dtype=np.float64) - stats.mean) / stats.std


def invert_norm(windows, stats: NormStats) -> np.ndarray:
    return np.asarray(windows, dtype=np.float64) * stats.std + stats.mean


# --- NNWD binary container ----------------------------------------------

def save_dataset(ds: WindowedDataset, path) -> None:
    """NNWD container: little-endian header (magic, version u16, N u32,
    window_len u16, channels u16), float32 inputs row-major, one label byte
    per window, CRC32 of the payload."""
    path = Path(path)
    channels = int(ds.inputs.shape[2]) if ds.inputs.ndim == 3 else 3
    header = struct.pack("<4sHIHH", _DATASET_MAGIC, _DATASET_VERSION,
                         ds.n, ds.window_len, channels)
    body = ds.inputs.astype("<f4").tobytes(order="C")
    body += np.asarray(ds.labels, dtype=np.uint8).tobytes()
    crc = zlib.crc32(header + body) & 0xFFFFFFFF
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(body)
        f.write(struct.pack("<I", crc))


def load_dataset(path) -> WindowedDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 14:
        raise DatasetError(f"{path}: truncated dataset file")
    magic, version, n, window_len, channels = struct.unpack("<4sHIHH", raw[:14])
    if magic != _DATASET_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != _DATASET_VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {version}")
    body_len = n * window_len * channels * 4 + n
    expected = 14 + body_len + 4
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {len(raw)}")
    crc_stored, = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc_stored:
        raise DatasetError(f"{path}: checksum mismatch")
    inputs = np.frombuffer(raw, dtype="<f4", count=n * window_len * channels,
                           offset=14).reshape(n, window_len, channels).astype(np.float64)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n,
                           offset=14 + n * window_len * channels * 4).astype(np.int64)
    return WindowedDataset(inputs=inputs, labels=labels,
                           window_len=window_len, step=WINDOW_STEP)
