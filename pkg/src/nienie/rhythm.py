"""Squeeze-release rhythm generation, cue scheduling, squeeze detection,
and adherence scoring.

All times are integer milliseconds from session start. Cue due times are
closed-form functions of the plan, so the schedule cannot drift no matter
how it is polled.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

MIN_PERIOD_MS = 600
MAX_PERIOD_MS = 6000
DEFAULT_SQUEEZE_FRACTION = 0.4
DEFAULT_REPS = 5
DEFAULT_TOLERANCE_MS = 250

CUE_SQUEEZE = "squeeze"
CUE_RELEASE = "release"
CUE_REST = "rest"
CUE_END = "end"


class RhythmError(ValueError):
    """Ill-formed pattern or plan request."""


@dataclass
class RhythmPattern:
    """One block of `reps` squeeze-release cycles at a fixed period."""

    cycle_period_ms: int
    squeeze_fraction: float = DEFAULT_SQUEEZE_FRACTION
    reps: int = DEFAULT_REPS

    def __post_init__(self):
        self.cycle_period_ms = int(round(self.cycle_period_ms))
        if not (MIN_PERIOD_MS <= self.cycle_period_ms <= MAX_PERIOD_MS):
            raise RhythmError(
                f"cycle period {self.cycle_period_ms} outside "
                f"[{MIN_PERIOD_MS}, {MAX_PERIOD_MS}] ms")
        if not (0.0 < self.squeeze_fraction < 1.0):
            raise RhythmError("squeeze_fraction must lie in (0, 1)")
        if self.reps < 1:
            raise RhythmError("reps must be >= 1")

    @property
    def squeeze_ms(self) -> int:
        return int(round(self.cycle_period_ms * self.squeeze_fraction))

    @property
    def duration_ms(self) -> int:
        return self.reps * self.cycle_period_ms

    def beats(self, start_ms: int = 0):
        """[(squeeze_onset_ms, release_onset_ms)] for each cycle, absolute
        against start_ms; cycle n sits exactly at start + n * period."""
        out = []
        for n in range(self.reps):
            onset = start_ms + n * self.cycle_period_ms
            out.append((onset, onset + self.squeeze_ms))
        return out


@dataclass
class RhythmPlan:
    """Contiguous pattern blocks; block k starts where block k-1 ends."""

    start_ms: int
    patterns: list  # [RhythmPattern]
    block_starts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.patterns:
            raise RhythmError("plan needs at least one pattern block")
        self.block_starts = []
        cursor = int(self.start_ms)
        for pat in self.patterns:
            self.block_starts.append(cursor)
            cursor += pat.duration_ms
        self.end_ms = cursor
        self._cues = []
        for start, pat in zip(self.block_starts, self.patterns):
            for onset, release in pat.beats(start):
                self._cues.append((onset, CUE_SQUEEZE))
                self._cues.append((release, CUE_RELEASE))
        self._cues.sort()
        self._cue_times = [t for t, _ in self._cues]

    def beat_onsets(self) -> list:
        return [t for t, kind in self._cues if kind == CUE_SQUEEZE]

    def block_range(self, block_idx: int):
        start = self.block_starts[block_idx]
        return start, start + self.patterns[block_idx].duration_ms

    def cues(self):
        return list(self._cues)


def generate_pattern(smoothed_stress: float,
                     squeeze_fraction: float = DEFAULT_SQUEEZE_FRACTION,
                     reps: int = DEFAULT_REPS) -> RhythmPattern:
    """Map stress in [0, 1] linearly onto the cycle period: calm pacing at
    2000 ms down to 1000 ms under maximal stress."""
    s = min(max(float(smoothed_stress), 0.0), 1.0)
    period = int(round(2000.0 - 1000.0 * s))
    return RhythmPattern(cycle_period_ms=period, squeeze_fraction=squeeze_fraction,
                         reps=reps)


def plan_ramp(initial: RhythmPattern, target_period_ms: int = 4000,
              step_ms: int = 200, cycles_per_step: int = 3,
              start_ms: int = 0) -> RhythmPlan:
    """Lengthen the cycle period from the initial pattern up to the target,
    one `step_ms` increment every `cycles_per_step` cycles, clamped at the
    target period."""
    target = int(target_period_ms)
    if target < initial.cycle_period_ms:
        raise RhythmError("ramp target is below the initial period")
    if target == initial.cycle_period_ms:
        return RhythmPlan(start_ms=start_ms, patterns=[initial])
    if step_ms <= 0 or cycles_per_step < 1:
        raise RhythmError("step_ms and cycles_per_step must be positive")
    patterns = []
    period = initial.cycle_period_ms
    while period < target:
        patterns.append(RhythmPattern(cycle_period_ms=period,
                                      squeeze_fraction=initial.squeeze_fraction,
                                      reps=cycles_per_step))
        period = min(period + step_ms, target)
    patterns.append(RhythmPattern(cycle_period_ms=target,
                                  squeeze_fraction=initial.squeeze_fraction,
                                  reps=cycles_per_step))
    return RhythmPlan(start_ms=start_ms, patterns=patterns)


@dataclass
class CueEvent:
    kind: str
    due_ms: int


def next_cue(plan: RhythmPlan, now_ms: int) -> CueEvent:
    """The first cue due at or after now_ms; a stateless lookup. Past the
    final release the marker kind is CUE_END at the plan end time."""
    idx = bisect_left(plan._cue_times, int(now_ms))
    if idx >= len(plan._cues):
        return CueEvent(kind=CUE_END, due_ms=plan.end_ms)
    due, kind = plan._cues[idx]
    return CueEvent(kind=kind, due_ms=due)


# --- squeeze stream ------------------------------------------------------

@dataclass
class SqueezeSample:
    t_ms: int
    intensity: float


@dataclass
class SqueezeEvent:
    onset_ms: int
    peak_intensity: float
    release_ms: int


def detect_squeeze_events(stream, on_th: float = 0.5, off_th: float = 0.3,
                          min_gap_ms: int = 150) -> list:
    """Hysteresis event extraction over a (t_ms, intensity) stream.

    Opens on the first sample >= on_th, closes on the first sample < off_th,
    merges an onset that follows the previous onset within min_gap_ms, and
    closes any unfinished event at the last sample.
    """
    events: list = []
    open_event = None
    last_t = None
    for item in stream:
        t, x = (item.t_ms, item.intensity) if isinstance(item, SqueezeSample) else item
        t = int(t)
        if last_t is not None and t < last_t:
            raise RhythmError(f"squeeze timestamps decrease at {t}")
        last_t = t
        if open_event is None:
            if x >= on_th:
                if events and t - events[-1].onset_ms < min_gap_ms:
                    open_event = events.pop()  # refractory merge into previous
                    open_event.peak_intensity = max(open_event.peak_intensity, x)
                else:
                    open_event = SqueezeEvent(onset_ms=t, peak_intensity=x, release_ms=t)
        else:
            if x < off_th:
                open_event.release_ms = t
                events.append(open_event)
                open_event = None
            else:
                open_event.peak_intensity = max(open_event.peak_intensity, x)
    if open_event is not None:
        open_event.release_ms = max(last_t, open_event.onset_ms + 1)
        events.append(open_event)
    for ev in events:
        if ev.release_ms <= ev.onset_ms:
            ev.release_ms = ev.onset_ms + 1
    return events


@dataclass
class AdherenceReport:
    beats_total: int
    beats_hit: int
    mean_abs_timing_error_ms: float
    sync_score: float
    tolerance_ms: int = DEFAULT_TOLERANCE_MS


def _sync_score(hits: int, total: int, mean_err: float, tolerance_ms: int) -> float:
    if total == 0 or hits == 0:
        return 0.0
    return (hits / total) * max(0.0, 1.0 - mean_err / tolerance_ms)


def score_adherence(events, beat_onsets, tolerance_ms: int = DEFAULT_TOLERANCE_MS,
                    ) -> AdherenceReport:
    """Greedy one-to-one matching of beats (in time order) to the nearest
    unmatched event onset within the tolerance window."""
    beats = sorted(int(b) for b in beat_onsets)
    if not beats:
        raise RhythmError("beat list is empty")
    onsets = [ev.onset_ms for ev in events]
    matched = [False] * len(onsets)
    errors = []
    for beat in beats:
        best, best_err = None, None
        for j, onset in enumerate(onsets):
            if matched[j]:
                continue
            err = abs(onset - beat)
            if err <= tolerance_ms and (best_err is None or err < best_err):
                best, best_err = j, err
        if best is not None:
            matched[best] = True
            errors.append(best_err)
    hits = len(errors)
    mean_err = float(np.mean(errors)) if errors else 0.0
    return AdherenceReport(
        beats_total=len(beats), beats_hit=hits,
        mean_abs_timing_error_ms=mean_err,
        sync_score=_sync_score(hits, len(beats), mean_err, tolerance_ms),
        tolerance_ms=tolerance_ms)


def combine_reports(reports, tolerance_ms: int = DEFAULT_TOLERANCE_MS) -> AdherenceReport:
    """Session-cumulative report: counts add, timing errors average over hits."""
    total = sum(r.beats_total for r in reports)
    hits = sum(r.beats_hit for r in reports)
    err_sum = sum(r.mean_abs_timing_error_ms * r.beats_hit for r in reports)
    mean_err = err_sum / hits if hits else 0.0
    return AdherenceReport(
        beats_total=total, beats_hit=hits, mean_abs_timing_error_ms=mean_err,
        sync_score=_sync_score(hits, total, mean_err, tolerance_ms),
        tolerance_ms=tolerance_ms)
