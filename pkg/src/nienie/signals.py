"""Physiological signal loading, synthesis, and resampling.

Everything downstream consumes a CanonicalSeries: a T x 3 matrix of
[eda, temp, hr] at 1 Hz. Recordings arrive either from disk (csv_dir or
jsonl) or from the seeded synthetic generator.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNELS = ("eda", "temp", "hr")
CHANNEL_UNITS = {"eda": "µS", "temp": "°C", "hr": "bpm"}

LABEL_BASELINE = 0
LABEL_STRESS = 1
LABEL_AMUSEMENT = 2
LABEL_NAMES = {LABEL_BASELINE: "baseline", LABEL_STRESS: "stress", LABEL_AMUSEMENT: "amusement"}
LABEL_IDS = {v: k for k, v in LABEL_NAMES.items()}

CANONICAL_RATE_HZ = 1.0


class RecordingError(ValueError):
    """Malformed or inconsistent recording data."""


@dataclass
class ChannelSpec:
    name: str
    sample_rate_hz: float
    units: str = ""

    def __post_init__(self):
        if self.name not in CHANNELS:
            raise RecordingError(f"unknown channel name {self.name!r}")
        if not (self.sample_rate_hz > 0):
            raise RecordingError(f"channel {self.name}: sample_rate_hz must be > 0")
        if not self.units:
            self.units = CHANNEL_UNITS[self.name]


@dataclass
class RawRecording:
    subject_id: str
    channels: dict  # name -> (ChannelSpec, np.ndarray)
    segments: list  # [(label, start_s, end_s)] ordered, non-overlapping

    def validate(self) -> "RawRecording":
        for name, (spec, samples) in self.channels.items():
            if name != spec.name:
                raise RecordingError(f"channel key {name!r} does not match spec name {spec.name!r}")
            samples = np.asarray(samples, dtype=np.float64)
            if samples.size == 0:
                raise RecordingError(f"channel {name} is empty")
            bad = np.flatnonzero(~np.isfinite(samples))
            if bad.size:
                raise RecordingError(f"non-finite sample at ({name}, {int(bad[0])})")
        prev_end = None
        for label, start_s, end_s in self.segments:
            if label not in LABEL_NAMES:
                raise RecordingError(f"unknown segment label {label!r}")
            if end_s <= start_s or start_s < 0:
                raise RecordingError(f"malformed segment interval [{start_s}, {end_s}]")
            if prev_end is not None and start_s < prev_end:
                raise RecordingError(
                    f"segment overlap: [{start_s}, {end_s}] starts before {prev_end}")
            prev_end = end_s
        return self


@dataclass
class CanonicalSeries:
    """Uniform 1 Hz series, columns fixed as [eda, temp, hr]."""

    data: np.ndarray  # (T, 3) float64
    segments: list    # [(label, start_idx, end_idx)] half-open sample intervals
    rate_hz: float = CANONICAL_RATE_HZ
    warnings: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.data.shape[0])


def resample_channel(samples, src_rate_hz: float, dst_rate_hz: float) -> np.ndarray:
    """Resample to dst_rate_hz; output length is floor(len * dst / src).

    Integer-ratio downsampling mean-pools fixed blocks; everything else is
    linear interpolation on the sample-time grid.
    """
    if not (src_rate_hz > 0 and dst_rate_hz > 0):
        raise ValueError("sample rates must be positive")
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot resample an empty channel")
    if src_rate_hz == dst_rate_hz:
        return x.copy()

    out_len = int(math.floor(x.size * dst_rate_hz / src_rate_hz))
    ratio = src_rate_hz / dst_rate_hz
    if ratio > 1 and abs(ratio - round(ratio)) < 1e-9:
        block = int(round(ratio))
        if out_len == 0:
            return np.empty(0, dtype=np.float64)
        return x[: out_len * block].reshape(out_len, block).mean(axis=1)

    if out_len == 0:
        return np.empty(0, dtype=np.float64)
    t_src = np.arange(x.size) / src_rate_hz
    t_dst = np.arange(out_len) / dst_rate_hz
    return np.interp(t_dst, t_src, x)


def truncate_and_stack(rec: RawRecording) -> CanonicalSeries:
    """Resample all channels to 1 Hz, truncate to the shortest, stack T x 3."""
    rec.validate()
    missing = [c for c in CHANNELS if c not in rec.channels]
    if missing:
        raise RecordingError(f"missing channel(s): {', '.join(missing)}")

    resampled = {}
    for name in CHANNELS:
        spec, samples = rec.channels[name]
        resampled[name] = resample_channel(samples, spec.sample_rate_hz, CANONICAL_RATE_HZ)
    t = min(arr.size for arr in resampled.values())
    if t == 0:
        raise RecordingError("series empty after resampling to 1 Hz")

    data = np.column_stack([resampled[name][:t] for name in CHANNELS])
    warnings = []
    segments = []
    for label, start_s, end_s in rec.segments:
        start_idx = int(math.floor(start_s * CANONICAL_RATE_HZ))
        end_idx = int(math.floor(end_s * CANONICAL_RATE_HZ))
        if end_idx > t:
            warnings.append(
                f"segment {LABEL_NAMES[label]} [{start_s}, {end_s}] clipped to series end {t}")
            end_idx = t
        start_idx = min(max(start_idx, 0), t)
        end_idx = min(max(end_idx, 0), t)
        if end_idx > start_idx:
            segments.append((label, start_idx, end_idx))
    return CanonicalSeries(data=data, segments=segments, warnings=warnings)


# --- synthetic generator -------------------------------------------------

@dataclass
class SynthParams:
    """Per-class channel model for the synthetic stand-in dataset.

    Class means are generator configuration (directionally consistent with
    stress physiology), not measured ground truth. Noise is AR(1) with
    per-channel sigma at `noise_frac` of the mean absolute between-class
    gap, plus a slow sinusoidal drift.
    """

    # label -> (eda µS, temp °C, hr bpm)
    class_means: dict = field(default_factory=lambda: {
        LABEL_BASELINE: (2.0, 33.5, 70.0),
        LABEL_STRESS: (8.0, 34.5, 95.0),
        LABEL_AMUSEMENT: (4.0, 34.0, 80.0),
    })
    ar_rho: float = 0.9
    noise_frac: float = 0.3
    drift_frac: float = 0.5        # drift amplitude as a fraction of noise sigma
    drift_period_s: float = 500.0
    # native generation rates, resampled to 1 Hz by truncate_and_stack
    channel_rates: dict = field(default_factory=lambda: {"eda": 4.0, "temp": 4.0, "hr": 1.0})

    def noise_sigma(self) -> np.ndarray:
        """Per-channel sigma: noise_frac times the mean pairwise class gap."""
        means = np.array([self.class_means[k] for k in sorted(self.class_means)])
        gaps = []
        for i in range(len(means)):
            for j in range(i + 1, len(means)):
                gaps.append(np.abs(means[i] - means[j]))
        return self.noise_frac * np.mean(gaps, axis=0)


def default_schedule(repeat: int = 5) -> list:
    """Interleaved schedule: `repeat` cycles of 15 min per class."""
    block = [(LABEL_BASELINE, 900.0), (LABEL_STRESS, 900.0), (LABEL_AMUSEMENT, 900.0)]
    return block * max(1, int(repeat))


def synth_recording(seed: int, schedule, params: SynthParams | None = None,
                    subject_id: str | None = None) -> RawRecording:
    """Deterministic synthetic recording following a (label, duration_s) schedule."""
    if not schedule:
        raise ValueError("schedule must be non-empty")
    for label, dur in schedule:
        if label not in LABEL_NAMES:
            raise ValueError(f"unknown label {label!r} in schedule")
        if not (dur > 0):
            raise ValueError("schedule durations must be > 0")
    params = params or SynthParams()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    sigma = params.noise_sigma()

    total_s = float(sum(dur for _, dur in schedule))
    channels = {}
    for ci, name in enumerate(CHANNELS):
        rate = params.channel_rates[name]
        n = int(round(total_s * rate))
        mean_track = np.empty(n, dtype=np.float64)
        pos = 0
        for label, dur in schedule:
            k = int(round(dur * rate))
            k = min(k, n - pos)
            mean_track[pos:pos + k] = params.class_means[label][ci]
            pos += k
        mean_track[pos:] = mean_track[pos - 1] if pos else 0.0

        # stationary AR(1): x_t = rho x_{t-1} + sqrt(1-rho^2) sigma eps_t
        rho = params.ar_rho
        eps = rng.standard_normal(n)
        noise = np.empty(n, dtype=np.float64)
        acc = eps[0] * sigma[ci]
        noise[0] = acc
        scale = math.sqrt(1.0 - rho * rho) * sigma[ci]
        for i in range(1, n):
            acc = rho * acc + scale * eps[i]
            noise[i] = acc

        phase = rng.uniform(0.0, 2.0 * math.pi)
        t = np.arange(n) / rate
        drift = params.drift_frac * sigma[ci] * np.sin(2.0 * math.pi * t / params.drift_period_s + phase)

        channels[name] = (ChannelSpec(name, rate), mean_track + noise + drift)

    segments = []
    cursor = 0.0
    for label, dur in schedule:
        segments.append((label, cursor, cursor + float(dur)))
        cursor += float(dur)

    sid = subject_id or f"synth-{seed}"
    return RawRecording(subject_id=sid, channels=channels, segments=segments).validate()


# --- disk formats --------------------------------------------------------

def save_recording(rec: RawRecording, path, fmt: str | None = None) -> None:
    """Write a recording as csv_dir (one CSV per channel + segments.csv) or
    jsonl; fmt inferred from the path suffix when omitted."""
    rec.validate()
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix == ".jsonl" else "csv_dir"
    if fmt == "csv_dir":
        path.mkdir(parents=True, exist_ok=True)
        for name, (spec, samples) in rec.channels.items():
            with open(path / f"{name}.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["t_s", "value"])
                for i, v in enumerate(np.asarray(samples, dtype=np.float64)):
                    w.writerow([repr(i / spec.sample_rate_hz), repr(float(v))])
        with open(path / "segments.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["label", "start_s", "end_s"])
            for label, start_s, end_s in rec.segments:
                w.writerow([label, repr(float(start_s)), repr(float(end_s))])
    elif fmt == "jsonl":
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write(json.dumps({"kind": "meta", "subject_id": rec.subject_id}) + "\n")
            for name in CHANNELS:
                if name not in rec.channels:
                    continue
                spec, samples = rec.channels[name]
                obj = {
                    "kind": "channel",
                    "name": name,
                    "sample_rate_hz": spec.sample_rate_hz,
                    "units": spec.units,
                    "samples": [float(v) for v in np.asarray(samples, dtype=np.float64)],
                }
                f.write(json.dumps(obj) + "\n")
            for label, start_s, end_s in rec.segments:
                obj = {"kind": "segment", "label": int(label),
                       "start_s": float(start_s), "end_s": float(end_s)}
                f.write(json.dumps(obj) + "\n")
    else:
        raise ValueError(f"unknown recording format {fmt!r}")


def _load_csv_dir(path: Path) -> RawRecording:
    channels = {}
    for name in CHANNELS:
        fp = path / f"{name}.csv"
        if not fp.exists():
            raise RecordingError(f"missing channel(s): {name} ({fp} not found)")
        times, values = [], []
        with open(fp, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["t_s", "value"]:
                raise RecordingError(f"{fp}: expected header 't_s,value'")
            for row in reader:
                if not row:
                    continue
                times.append(float(row[0]))
                values.append(float(row[1]))
        if not values:
            raise RecordingError(f"channel {name} is empty")
        if len(times) >= 2:
            dt = times[1] - times[0]
            if dt <= 0:
                raise RecordingError(f"{fp}: non-increasing timestamps")
            rate = 1.0 / dt
        else:
            rate = CANONICAL_RATE_HZ
        channels[name] = (ChannelSpec(name, rate), np.asarray(values, dtype=np.float64))

    seg_fp = path / "segments.csv"
    segments = []
    if seg_fp.exists():
        with open(seg_fp, newline="") as f:
            reader = csv.reader(f)
            next(reader, None)
            for row in reader:
                if not row:
                    continue
                segments.append((int(row[0]), float(row[1]), float(row[2])))
    return RawRecording(subject_id=path.name, channels=channels, segments=segments)


def _load_jsonl(path: Path) -> RawRecording:
    channels = {}
    segments = []
    subject_id = path.stem
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "meta":
                subject_id = obj.get("subject_id", subject_id)
            elif kind == "channel":
                spec = ChannelSpec(obj["name"], float(obj["sample_rate_hz"]),
                                   obj.get("units", ""))
                channels[spec.name] = (spec, np.asarray(obj["samples"], dtype=np.float64))
            elif kind == "segment":
                segments.append((int(obj["label"]), float(obj["start_s"]), float(obj["end_s"])))
            else:
                raise RecordingError(f"{path}:{line_no}: unknown record kind {kind!r}")
    return RawRecording(subject_id=subject_id, channels=channels, segments=segments)


def load_recording(path, fmt: str | None = None) -> RawRecording:
    """Load a recording; fmt is csv_dir or jsonl (inferred from the path if omitted)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"recording path {path} does not exist")
    if fmt is None:
        fmt = "csv_dir" if path.is_dir() else "jsonl"
    if fmt == "csv_dir":
        rec = _load_csv_dir(path)
    elif fmt == "jsonl":
        rec = _load_jsonl(path)
    else:
        raise ValueError(f"unknown recording format {fmt!r}")
    missing = [c for c in CHANNELS if c not in rec.channels]
    if missing:
        raise RecordingError(f"missing channel(s): {', '.join(missing)}")
    return rec.validate()
