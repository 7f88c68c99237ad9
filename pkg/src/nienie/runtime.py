"""Streaming stress inference over the live 1 Hz sample feed.

A ring buffer re-creates the training-time window geometry sample by sample:
an estimate is emitted exactly when a full 40-sample window completes on the
20-sample stride. Raw p(stress) is then baseline-adjusted against a per-user
calibration profile and EWMA-smoothed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .lstm import ModelBundle, predict_proba
from .windows import WINDOW_LEN, WINDOW_STEP, apply_norm

STRESS_CLASS = 1
MIN_BASELINE_STD = 1e-3


class StreamError(ValueError):
    """Bad streaming input or an ill-posed calibration request."""


class StreamBuffer:
    """Ring of the most recent `capacity` canonical samples.

    ready() flips true exactly when samples_seen >= capacity and
    (samples_seen - capacity) % stride == 0.
    """

    def __init__(self, capacity: int = WINDOW_LEN, stride: int = WINDOW_STEP,
                 channels: int = 3):
        self.capacity = capacity
        self.stride = stride
        self.data = np.zeros((capacity, channels))
        self.samples_seen = 0

    def push(self, sample) -> bool:
        sample = np.asarray(sample, dtype=np.float64)
        if sample.shape != (self.data.shape[1],):
            raise StreamError(f"expected a {self.data.shape[1]}-vector, got {sample.shape}")
        if not np.all(np.isfinite(sample)):
            raise StreamError("non-finite sample rejected")
        self.data[self.samples_seen % self.capacity] = sample
        self.samples_seen += 1
        return (self.samples_seen >= self.capacity
                and (self.samples_seen - self.capacity) % self.stride == 0)

    def window(self) -> np.ndarray:
        """Latest `capacity` samples in chronological order."""
        if self.samples_seen < self.capacity:
            raise StreamError("window not yet full")
        head = self.samples_seen % self.capacity
        return np.roll(self.data, -head, axis=0).copy()


@dataclass
class StressEstimate:
    t_ms: int
    probs: np.ndarray
    raw_score: float
    adjusted_score: float
    smoothed_score: float


@dataclass
class CalibrationProfile:
    baseline_mean: float
    baseline_std: float  # clamped >= MIN_BASELINE_STD
    duration_s: float = 60.0
    k_sensitivity: float = 1.0


def raw_stress_score(probs) -> float:
    """The stress-class probability mass, already in [0, 1]."""
    return float(np.asarray(probs)[STRESS_CLASS])


def calibrate(raw_scores, duration_s: float = 60.0,
              k_sensitivity: float = 1.0) -> CalibrationProfile:
    """Population mean/std of the calibration-span raw scores."""
    scores = np.asarray(list(raw_scores), dtype=np.float64)
    if scores.size < 2:
        raise StreamError(f"calibration needs >= 2 estimates, got {scores.size}")
    return CalibrationProfile(
        baseline_mean=float(scores.mean()),
        baseline_std=max(float(scores.std()), MIN_BASELINE_STD),
        duration_s=duration_s, k_sensitivity=k_sensitivity)


def adjusted_score(raw: float, profile: CalibrationProfile) -> float:
    """logistic(k * z) of the raw score's deviation from the user baseline."""
    z = profile.k_sensitivity * (raw - profile.baseline_mean) / profile.baseline_std
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def smooth(prev_smoothed: float | None, adjusted: float, alpha: float = 0.3) -> float:
    """EWMA step; the first estimate passes through unsmoothed."""
    if prev_smoothed is None:
        return adjusted
    return alpha * adjusted + (1.0 - alpha) * prev_smoothed


def push_sample(buffer: StreamBuffer, sample, bundle: ModelBundle):
    """Push one canonical sample; returns (probs, raw_score) on window
    completion, else None. Rejects non-finite samples without advancing."""
    if not buffer.push(sample):
        return None
    window = apply_norm(buffer.window(), bundle.stats)
    probs = predict_proba(bundle.params, window)
    return probs, raw_stress_score(probs)


class StressRuntime:
    """Session-scoped streaming pipeline: buffer -> model -> calibration ->
    baseline adjustment -> smoothing, with per-window latency bookkeeping."""

    def __init__(self, bundle: ModelBundle, calibration_s: float = 60.0,
                 k_sensitivity: float = 1.0, alpha: float = 0.3):
        self.bundle = bundle
        self.calibration_s = calibration_s
        self.k_sensitivity = k_sensitivity
        self.alpha = alpha
        self.buffer = StreamBuffer()
        self.profile: CalibrationProfile | None = None
        self._cal_scores: list = []
        self._prev_smoothed: float | None = None
        self.last_estimate: StressEstimate | None = None
        self.latencies_ms: list = []

    def push(self, t_ms: int, sample) -> StressEstimate | None:
        if self.profile is None and t_ms > self.calibration_s * 1000.0:
            self.finalize_calibration()
        started = time.perf_counter()
        out = push_sample(self.buffer, sample, self.bundle)
        if out is None:
            return None
        self.latencies_ms.append((time.perf_counter() - started) * 1000.0)
        probs, raw = out
        if self.profile is None:
            self._cal_scores.append(raw)
            adj = raw  # pre-calibration passthrough
        else:
            adj = adjusted_score(raw, self.profile)
        smoothed = smooth(self._prev_smoothed, adj, self.alpha)
        self._prev_smoothed = smoothed
        est = StressEstimate(t_ms=int(t_ms), probs=probs, raw_score=raw,
                             adjusted_score=adj, smoothed_score=smoothed)
        self.last_estimate = est
        return est

    def finalize_calibration(self) -> CalibrationProfile:
        """Freeze the baseline profile; the smoothing chain restarts so the
        first adjusted estimate passes through clean."""
        self.profile = calibrate(self._cal_scores, duration_s=self.calibration_s,
                                 k_sensitivity=self.k_sensitivity)
        self._prev_smoothed = None
        return self.profile

    def current_adjusted(self) -> float:
        """Adjusted score of the latest raw estimate under the frozen profile;
        0.5 (no deviation) when nothing has been seen yet."""
        if self.last_estimate is None:
            return 0.5
        if self.profile is None:
            return self.last_estimate.raw_score
        return adjusted_score(self.last_estimate.raw_score, self.profile)

    def latency_stats(self) -> dict:
        if not self.latencies_ms:
            return {"count": 0}
        arr = np.asarray(self.latencies_ms)
        return {"count": int(arr.size),
                "median_ms": float(np.median(arr)),
                "p95_ms": float(np.percentile(arr, 95)),
                "max_ms": float(arr.max())}
