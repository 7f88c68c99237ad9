"""Session orchestration: a sans-io engine that turns timestamped samples and
squeeze intensities into estimates, cues, adherence scores, and guidance,
writing everything to a replayable JSONL event log.

Time is integer milliseconds supplied by the caller; the engine never reads a
wall clock, so a simulated driver, the websocket service, and log replay all
share one code path. Internal work (phase changes, cue emission, block
scoring) is queued on a heap and runs when the clock is advanced past it.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import guidance as gd
from . import rhythm
from .lstm import ModelBundle
from .runtime import StressRuntime
from .signals import CHANNELS, LABEL_BASELINE, LABEL_STRESS, SynthParams
from .windows import WINDOW_LEN, WINDOW_STEP

SCHEMA_VERSION = 1

# The live stream runs at 1 Hz, so the second estimate (the calibration
# minimum) arrives only after window + step seconds.
MIN_CALIBRATION_S = float(WINDOW_LEN + WINDOW_STEP)

PHASE_CALIBRATING = "calibrating"
PHASE_ACTIVE = "active"
PHASE_COOLDOWN = "cooldown"
PHASE_ENDED = "ended"

# Heap tie-break: at the same timestamp a phase change outranks a replan,
# which outranks cue emission, which outranks block scoring.
_PRIO_PHASE = 0
_PRIO_REPLAN = 1
_PRIO_CUE = 2
_PRIO_BLOCK = 3

_SUBSTREAMS = {"physio": 0, "user": 1, "templates": 2}


class SessionError(Exception):
    pass


def substream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent named stream so adding draws to one consumer never
    perturbs the others."""
    key = _SUBSTREAMS[name]
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(key,))))


@dataclass
class SessionConfig:
    session_s: float = 180.0
    calibration_s: float = 60.0
    replan_interval_s: float = 30.0
    cooldown_s: float = 0.0
    target_period_ms: int = 4000
    ramp_step_ms: int = 200
    cycles_per_step: int = 3
    squeeze_fraction: float = rhythm.DEFAULT_SQUEEZE_FRACTION
    tolerance_ms: int = rhythm.DEFAULT_TOLERANCE_MS
    cue_lead_ms: int = 500
    scoring_grace_ms: int = 250
    smoothing_alpha: float = 0.3
    guidance_mode: str = "template"  # off | template | remote | external
    guidance_min_interval_s: float = gd.DEFAULT_MIN_INTERVAL_S
    seed: int = 0

    def __post_init__(self):
        if self.session_s <= self.calibration_s:
            raise SessionError("session must outlast calibration")
        if self.calibration_s < MIN_CALIBRATION_S:
            raise SessionError(
                f"calibration_s must be >= {MIN_CALIBRATION_S:.0f}: the 1 Hz "
                "stream yields its second estimate only then")
        if self.cooldown_s < 0 or self.cooldown_s >= self.session_s - self.calibration_s:
            raise SessionError("cooldown_s out of range")
        if self.guidance_mode not in ("off", "template", "remote", "external"):
            raise SessionError(f"unknown guidance mode {self.guidance_mode!r}")
        if self.cue_lead_ms < 0 or self.scoring_grace_ms < 0:
            raise SessionError("lead and grace must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SessionConfig":
        return SessionConfig(**d)

    @property
    def end_ms(self) -> int:
        return int(round(self.session_s * 1000))

    @property
    def calibration_end_ms(self) -> int:
        return int(round(self.calibration_s * 1000))


class EventLog:
    """Append-only record list with strictly increasing seq and
    non-decreasing t_ms, serializable to JSONL."""

    def __init__(self, config: SessionConfig | None = None):
        self.records: list[dict] = []
        self._last_t = 0
        if config is not None:
            self.records.append({"seq": 0, "t_ms": 0, "type": "header",
                                 "payload": {"schema_version": SCHEMA_VERSION,
                                             "config": config.to_dict()}})

    def append(self, type_: str, t_ms: int, payload: dict) -> dict:
        t_ms = int(t_ms)
        if t_ms < self._last_t:
            raise SessionError(
                f"log time went backwards: {t_ms} after {self._last_t}")
        self._last_t = t_ms
        rec = {"seq": len(self.records), "t_ms": t_ms, "type": type_,
               "payload": payload}
        self.records.append(rec)
        return rec

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        if not records or records[0].get("type") != "header":
            raise SessionError("log missing header record")
        ver = records[0]["payload"].get("schema_version")
        if ver != SCHEMA_VERSION:
            raise SessionError(f"unsupported log schema {ver}")
        last_seq, last_t = -1, 0
        for rec in records:
            if rec["seq"] <= last_seq or rec["t_ms"] < last_t:
                raise SessionError(f"log ordering broken at seq {rec['seq']}")
            last_seq, last_t = rec["seq"], rec["t_ms"]
        return records


class SessionEngine:
    """Drives one session. Callers feed `on_sample` / `on_squeeze` with a
    non-decreasing clock and may call `advance_to` between inputs; internal
    events scheduled at exactly t fire on the next advance past t."""

    def __init__(self, bundle: ModelBundle, config: SessionConfig | None = None,
                 remote_cfg: gd.RemoteConfig | None = None):
        self.config = config or SessionConfig()
        self.bundle = bundle
        self.remote_cfg = remote_cfg
        cfg = self.config
        self.runtime = StressRuntime(bundle, calibration_s=cfg.calibration_s,
                                     alpha=cfg.smoothing_alpha)
        self.log = EventLog(cfg)
        self.phase = PHASE_CALIBRATING
        self.now = 0
        self.outbox: list[dict] = []
        self.dropped_squeezes = 0

        self._heap: list = []
        self._tie = 0
        self._plans: list[rhythm.RhythmPlan] = []
        self._cutoff: dict[int, float] = {}   # plan id -> first invalid ms
        self._scored: set = set()             # (plan_id, block_idx)
        self._squeezes: list[tuple[int, float]] = []   # (sample_t_ms, intensity)
        self._smoothed_hist: list[tuple[int, float]] = []
        self._last_sync: float | None = None
        self._last_guidance_t: int | None = None
        self._rng_templates = substream_rng(cfg.seed, "templates")

        self._emit("phase", 0, {"phase": PHASE_CALIBRATING})
        self._push(cfg.calibration_end_ms, _PRIO_PHASE, "phase", PHASE_ACTIVE)
        if cfg.cooldown_s > 0:
            self._push(cfg.end_ms - int(round(cfg.cooldown_s * 1000)),
                       _PRIO_PHASE, "phase", PHASE_COOLDOWN)
        self._push(cfg.end_ms, _PRIO_PHASE, "phase", PHASE_ENDED)
        if cfg.replan_interval_s > 0:
            t = cfg.calibration_end_ms
            step = int(round(cfg.replan_interval_s * 1000))
            while t + step < cfg.end_ms:
                t += step
                self._push(t, _PRIO_REPLAN, "replan", None)

    # -- plumbing ---------------------------------------------------------

    def _push(self, t_ms: int, prio: int, kind: str, data) -> None:
        heapq.heappush(self._heap, (int(t_ms), prio, self._tie, kind, data))
        self._tie += 1

    def _emit(self, type_: str, t_ms: int, payload: dict) -> dict:
        rec = self.log.append(type_, t_ms, payload)
        self.outbox.append(rec)
        return rec

    def drain(self) -> list[dict]:
        out, self.outbox = self.outbox, []
        return out

    # -- public inputs ----------------------------------------------------

    def advance_to(self, t_ms: int) -> None:
        """Run every internal event scheduled strictly before t_ms."""
        t_ms = int(t_ms)
        while self._heap and self._heap[0][0] < t_ms:
            ev_t, _prio, _tie, kind, data = heapq.heappop(self._heap)
            self.now = max(self.now, ev_t)
            if kind == "phase":
                self._handle_phase(ev_t, data)
            elif kind == "replan":
                self._handle_replan(ev_t)
            elif kind == "cue":
                self._handle_cue(ev_t, data)
            elif kind == "block":
                self._handle_block(ev_t, data)
        self.now = max(self.now, t_ms)

    def on_sample(self, t_ms: int, sample) -> dict | None:
        """Feed one canonical [eda, temp, hr] sample; returns the estimate
        record when a window boundary was crossed."""
        if self.phase == PHASE_ENDED:
            return None
        self.advance_to(t_ms)
        if self.phase == PHASE_ENDED:
            return None
        sample = np.asarray(sample, dtype=np.float64)
        self.log.append("sample", t_ms, {"channels": [float(v) for v in sample]})
        est = self.runtime.push(int(t_ms), sample)
        if est is None:
            return None
        self._smoothed_hist.append((est.t_ms, est.smoothed_score))
        return self._emit("estimate", est.t_ms, {
            "raw": est.raw_score, "adjusted": est.adjusted_score,
            "smoothed": est.smoothed_score,
            "probs": [float(p) for p in est.probs], "phase": self.phase})

    def on_squeeze(self, t_ms: int, intensity: float,
                   sample_t_ms: int | None = None) -> bool:
        """Accept one squeeze intensity. `t_ms` is arrival time and orders
        the log; `sample_t_ms` (device clock, defaults to arrival) orders the
        scoring stream. Out-of-order device samples are dropped."""
        if self.phase == PHASE_ENDED:
            return False
        self.advance_to(t_ms)
        if self.phase == PHASE_ENDED:
            return False
        sample_t = int(t_ms if sample_t_ms is None else sample_t_ms)
        x = float(intensity)
        if not np.isfinite(x):
            raise SessionError("non-finite squeeze intensity")
        x = min(1.0, max(0.0, x))
        if self._squeezes and sample_t < self._squeezes[-1][0]:
            self.dropped_squeezes += 1
            return False
        self._squeezes.append((sample_t, x))
        self.log.append("squeeze", t_ms, {"intensity": x, "sample_t_ms": sample_t})
        return True

    def deliver_guidance(self, t_ms: int, message: gd.GuidanceMessage) -> None:
        """External-mode delivery path (service fetched the text elsewhere)."""
        if self.phase == PHASE_ENDED:
            return
        self.advance_to(t_ms)
        if self.phase != PHASE_ENDED:
            self._emit("guidance", t_ms, {"tone": message.tone,
                                          "text": message.text,
                                          "source": message.source})

    def finish(self) -> dict:
        """Advance past the scheduled end and return the summary record."""
        self.advance_to(self.config.end_ms + 1)
        return self.log.records[-1]

    def abort(self, t_ms: int) -> dict:
        """Early termination (client went away): close out at t_ms."""
        self.advance_to(t_ms)
        if self.phase != PHASE_ENDED:
            self._end_session(self.now)
        return self.log.records[-1]

    # -- internal events --------------------------------------------------

    def _handle_phase(self, t_ms: int, phase: str) -> None:
        if self.phase == PHASE_ENDED:
            return
        if phase == PHASE_ACTIVE:
            self.phase = phase
            self._emit("phase", t_ms, {"phase": phase})
            self.runtime.finalize_calibration()
            # first beat lands one lead interval after activation
            self._activate_plan(t_ms, start_ms=t_ms + self.config.cue_lead_ms)
        elif phase == PHASE_COOLDOWN:
            self.phase = phase
            self._emit("phase", t_ms, {"phase": phase})
            if self._plans:
                pid = len(self._plans) - 1
                self._cutoff[pid] = min(self._cutoff.get(pid, float("inf")), t_ms)
        elif phase == PHASE_ENDED:
            self._end_session(t_ms)

    def _activate_plan(self, t_ms: int, start_ms: int) -> None:
        stress = self.runtime.current_adjusted()
        cfg = self.config
        initial = rhythm.generate_pattern(stress, squeeze_fraction=cfg.squeeze_fraction,
                                          reps=cfg.cycles_per_step)
        plan = rhythm.plan_ramp(initial, target_period_ms=cfg.target_period_ms,
                                step_ms=cfg.ramp_step_ms,
                                cycles_per_step=cfg.cycles_per_step,
                                start_ms=start_ms)
        pid = len(self._plans)
        self._plans.append(plan)
        self._emit("plan", t_ms, {
            "plan": pid, "start_ms": plan.start_ms, "stress": stress,
            "initial_period_ms": plan.patterns[0].cycle_period_ms,
            "target_period_ms": plan.patterns[-1].cycle_period_ms,
            "n_blocks": len(plan.patterns)})
        for b_idx, pat in enumerate(plan.patterns):
            bs, be = plan.block_range(b_idx)
            for r in range(pat.reps):
                due = bs + r * pat.cycle_period_ms
                self._push(max(due - cfg.cue_lead_ms, t_ms), _PRIO_CUE, "cue",
                           {"plan": pid, "block": b_idx, "due_ms": due,
                            "period_ms": pat.cycle_period_ms,
                            "squeeze_ms": pat.squeeze_ms})
            self._push(be + cfg.tolerance_ms + cfg.scoring_grace_ms,
                       _PRIO_BLOCK, "block", {"plan": pid, "block": b_idx})

    def _handle_replan(self, t_ms: int) -> None:
        if self.phase != PHASE_ACTIVE or not self._plans:
            return
        pid = len(self._plans) - 1
        plan = self._plans[pid]
        # take effect at the next block boundary (with cue lead time) so no
        # block is split and the first new beat is still announceable
        boundary = plan.end_ms
        for b_idx in range(len(plan.patterns)):
            bs, _ = plan.block_range(b_idx)
            if bs >= t_ms + self.config.cue_lead_ms:
                boundary = bs
                break
        boundary = max(boundary, t_ms + self.config.cue_lead_ms)
        if boundary >= self.config.end_ms:
            return
        self._cutoff[pid] = min(self._cutoff.get(pid, float("inf")), boundary)
        self._activate_plan(t_ms, start_ms=boundary)

    def _plan_valid(self, pid: int, due_ms: int) -> bool:
        return due_ms < self._cutoff.get(pid, float("inf"))

    def _handle_cue(self, t_ms: int, data: dict) -> None:
        if self.phase not in (PHASE_CALIBRATING, PHASE_ACTIVE):
            return
        if not self._plan_valid(data["plan"], data["due_ms"]):
            return
        self._emit("cue", t_ms, {"kind": "beat", "due_ms": data["due_ms"],
                                 "period_ms": data["period_ms"],
                                 "squeeze_ms": data["squeeze_ms"],
                                 "plan": data["plan"], "block": data["block"]})

    def _block_beats(self, pid: int, b_idx: int, limit_ms: float) -> list[int]:
        plan = self._plans[pid]
        pat = plan.patterns[b_idx]
        bs, _ = plan.block_range(b_idx)
        cut = min(self._cutoff.get(pid, float("inf")), limit_ms)
        return [bs + r * pat.cycle_period_ms for r in range(pat.reps)
                if bs + r * pat.cycle_period_ms < cut]

    def _score_block(self, t_ms: int, pid: int, b_idx: int) -> None:
        if (pid, b_idx) in self._scored:
            return
        self._scored.add((pid, b_idx))
        beats = self._block_beats(pid, b_idx, float("inf"))
        if not beats:
            return
        tol = self.config.tolerance_ms
        events = rhythm.detect_squeeze_events(self._squeezes)
        lo, hi = beats[0] - tol, beats[-1] + tol
        events = [e for e in events if lo <= e.onset_ms <= hi]
        report = rhythm.score_adherence(events, beats, tolerance_ms=tol)
        bs, be = self._plans[pid].block_range(b_idx)
        self._emit("adherence", t_ms, {
            "plan": pid, "block": b_idx, "block_start_ms": bs,
            "block_end_ms": be, "beats": report.beats_total,
            "hits": report.beats_hit,
            "misses": report.beats_total - report.beats_hit,
            "mean_error_ms": report.mean_abs_timing_error_ms,
            "sync": report.sync_score})
        self._last_sync = report.sync_score
        peaks = [e.peak_intensity for e in events]
        self._maybe_guidance(t_ms, report.sync_score,
                             float(np.mean(peaks)) if peaks else 0.0)

    def _handle_block(self, t_ms: int, data: dict) -> None:
        if self.phase == PHASE_ENDED:
            return
        bs, _ = self._plans[data["plan"]].block_range(data["block"])
        if not self._plan_valid(data["plan"], bs):
            return
        self._score_block(t_ms, data["plan"], data["block"])

    def _end_session(self, t_ms: int) -> None:
        self.phase = PHASE_ENDED
        # score any block that started but was never settled, counting only
        # beats that were actually due before the end
        for pid in range(len(self._plans)):
            self._cutoff[pid] = min(self._cutoff.get(pid, float("inf")), t_ms)
        for pid, plan in enumerate(self._plans):
            for b_idx in range(len(plan.patterns)):
                bs, _ = plan.block_range(b_idx)
                if (pid, b_idx) in self._scored or not self._plan_valid(pid, bs):
                    continue
                self._score_block(t_ms, pid, b_idx)
        self._emit("phase", t_ms, {"phase": PHASE_ENDED})
        summary = summarize(self.log.records, end_ms=t_ms)
        self._emit("summary", t_ms, summary)

    # -- guidance ---------------------------------------------------------

    def _trend(self) -> float:
        pts = [(t, s) for t, s in self._smoothed_hist if t >= self.now - 60000]
        if len(pts) < 2:
            return 0.0
        ts = np.array([p[0] for p in pts], dtype=np.float64) / 1000.0
        ys = np.array([p[1] for p in pts], dtype=np.float64)
        return float(np.polyfit(ts, ys, 1)[0])

    def _maybe_guidance(self, t_ms: int, sync: float, mean_peak: float) -> None:
        cfg = self.config
        if cfg.guidance_mode == "off" or self.phase != PHASE_ACTIVE:
            return
        since = None if self._last_guidance_t is None \
            else (t_ms - self._last_guidance_t) / 1000.0
        ctx = gd.GuidanceContext(sync_score_recent=sync,
                                 stress_trend=self._trend(),
                                 mean_peak_intensity=mean_peak,
                                 seconds_since_last_message=since)
        if not gd.gate_rate(ctx, cfg.guidance_min_interval_s):
            return
        self._last_guidance_t = t_ms
        seed = int(self._rng_templates.integers(0, 2 ** 31))
        if cfg.guidance_mode == "external":
            self.outbox.append({"type": "guidance_request", "t_ms": t_ms,
                                "payload": {"ctx": asdict(ctx),
                                            "fallback_seed": seed}})
            return
        if cfg.guidance_mode == "remote" and self.remote_cfg is not None:
            msg = gd.generate_remote(ctx, self.remote_cfg, fallback_seed=seed,
                                     created_at_ms=t_ms)
        else:
            msg = gd.render_template(gd.select_tone(ctx), ctx, seed=seed,
                                     created_at_ms=t_ms)
        self._emit("guidance", t_ms, {"tone": msg.tone, "text": msg.text,
                                      "source": msg.source})


# -- simulated user and physiology ---------------------------------------


@dataclass
class UserParams:
    skill: float = 0.9
    reaction_mean_ms: float = 50.0
    reaction_sd_ms: float = 30.0
    peak_min: float = 0.7
    peak_max: float = 1.0
    pre_frac: float = 0.35
    decay_fracs: tuple = (0.75, 0.5, 0.25, 0.0)
    grid_ms: int = 33
    adherent_window_ms: int = 5000

    def __post_init__(self):
        if not 0.0 <= self.skill <= 1.0:
            raise SessionError("skill must be in [0, 1]")


@dataclass
class PhysioParams:
    """Elevation follows the rhythm exercise: adherent seconds relax it
    toward zero at relief_rate, non-adherent seconds drift it back toward the
    stressor equilibrium at a quarter of that rate.

    The defaults are a modeling assumption, not measured physiology: sessions
    start well above the stress decision region (the subject arrives
    stressed), so steady adherence carries the signals down through it while
    a non-adherent subject is pulled deeper into stress territory."""
    initial_elevation: float = 1.2
    equilibrium_elevation: float = 2.0
    relief_rate: float = 0.02         # per second
    noise_scale: float = 0.3          # live noise relative to the synth corpus
    synth: SynthParams = field(default_factory=SynthParams)


class SimulatedUser:
    """Reacts to beat cues: with probability `skill` it squeezes once per
    beat, onset jittered by a clamped normal reaction time. Random draws
    happen for every cue so runs with different skill share the same
    timing stream (common random numbers)."""

    def __init__(self, params: UserParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng
        self.last_onset_ms: int | None = None

    def react(self, cue_payload: dict) -> list[tuple[int, float]]:
        p = self.p
        u = self.rng.random()
        z = min(3.0, max(-3.0, self.rng.standard_normal()))
        reaction = p.reaction_mean_ms + p.reaction_sd_ms * z
        peak = p.peak_min + (p.peak_max - p.peak_min) * self.rng.random()
        if u >= p.skill:
            return []
        onset = int(round(cue_payload["due_ms"] + reaction))
        self.last_onset_ms = onset
        g = p.grid_ms
        samples = [(onset - 2 * g, 0.0), (onset - g, p.pre_frac * peak)]
        hold = cue_payload["squeeze_ms"]
        t = onset
        while t < onset + hold:
            samples.append((t, peak))
            t += g
        for frac in p.decay_fracs:
            samples.append((t, frac * peak))
            t += g
        return samples

    def adherent(self, t_ms: int) -> bool:
        return (self.last_onset_ms is not None
                and t_ms - self.last_onset_ms <= self.p.adherent_window_ms)


class SimulatedPhysio:
    """Per-second canonical samples: class-interpolated channel means plus
    stationary AR(1) noise matched to the synthetic corpus at 1 Hz."""

    def __init__(self, params: PhysioParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng
        self.elevation = params.initial_elevation
        sp = params.synth
        self.base = np.array(sp.class_means[LABEL_BASELINE], dtype=np.float64)
        self.span = np.array(sp.class_means[LABEL_STRESS], dtype=np.float64) - self.base
        self.sigma = params.noise_scale * sp.noise_sigma()
        # native-rate AR coefficient compounds down to the 1 Hz grid
        self.rho = np.array([sp.ar_rho ** sp.channel_rates[c] for c in CHANNELS])
        self.state = self.sigma * rng.standard_normal(3)

    def step(self, adherent: bool, exercising: bool, dt_s: float = 1.0) -> np.ndarray:
        p = self.p
        if exercising:
            if adherent:
                self.elevation *= float(np.exp(-p.relief_rate * dt_s))
            else:
                eq = p.equilibrium_elevation
                self.elevation = eq + (self.elevation - eq) * float(
                    np.exp(-(p.relief_rate / 4.0) * dt_s))
        z = self.rng.standard_normal(3)
        self.state = self.rho * self.state + np.sqrt(1 - self.rho ** 2) * self.sigma * z
        return self.base + self.elevation * self.span + self.state


@dataclass
class SessionResult:
    records: list
    summary: dict
    engine: SessionEngine


_TICK_MS = 250   # driver granularity; must stay under cue_lead_ms


def run_session(bundle: ModelBundle, config: SessionConfig | None = None,
                user: UserParams | None = None,
                physio: PhysioParams | None = None,
                remote_cfg: gd.RemoteConfig | None = None,
                out_path=None) -> SessionResult:
    """Simulate a full session against the model and return its log.

    Discrete-event loop: physiological samples at 1 Hz, user squeeze samples
    as they are scheduled, plus idle ticks so internal engine events fire
    close to their scheduled time (the reaction chain assumes cues surface
    within one tick of emission)."""
    cfg = config or SessionConfig()
    engine = SessionEngine(bundle, cfg, remote_cfg=remote_cfg)
    sim_user = SimulatedUser(user or UserParams(),
                             substream_rng(cfg.seed, "user"))
    sim_phys = SimulatedPhysio(physio or PhysioParams(),
                               substream_rng(cfg.seed, "physio"))

    end_ms = cfg.end_ms
    queue: list = []   # (t, prio, tie, kind, value); samples before squeezes
    tie = [0]

    def push(t, prio, kind, value=None):
        heapq.heappush(queue, (int(t), prio, tie[0], kind, value))
        tie[0] += 1

    for k in range(1, int(cfg.session_s) + 1):
        push(k * 1000, 0, "sample")
    for t in range(_TICK_MS, end_ms + 1, _TICK_MS):
        push(t, 2, "tick")

    def pump():
        for rec in engine.drain():
            if rec["type"] == "cue":
                for sq_t, val in sim_user.react(rec["payload"]):
                    if sq_t <= end_ms:
                        push(sq_t, 1, "squeeze", val)

    while queue:
        t, _prio, _tie, kind, value = heapq.heappop(queue)
        if kind == "sample":
            exercising = engine.phase in (PHASE_ACTIVE, PHASE_COOLDOWN)
            x = sim_phys.step(sim_user.adherent(t), exercising)
            engine.on_sample(t, x)
        elif kind == "squeeze":
            engine.on_squeeze(t, value)
        else:
            engine.advance_to(t)
        pump()
    engine.finish()
    pump()
    summary = engine.log.records[-1]["payload"]
    if out_path is not None:
        engine.log.write(out_path)
    return SessionResult(engine.log.records, summary, engine)


def replay_log(records_or_path, bundle: ModelBundle) -> SessionResult:
    """Re-derive every computed record from the logged inputs. Guidance is
    regenerated from templates; estimates, cues, and adherence must come out
    identical to the original run."""
    if isinstance(records_or_path, (str, bytes)) or hasattr(records_or_path, "read"):
        records = EventLog.read(records_or_path)
    else:
        records = records_or_path
    cfg = SessionConfig.from_dict(records[0]["payload"]["config"])
    if cfg.guidance_mode in ("remote", "external"):
        cfg = SessionConfig.from_dict({**cfg.to_dict(), "guidance_mode": "template"})
    engine = SessionEngine(bundle, cfg)
    ended_t = None
    for rec in records:
        if rec["type"] == "sample":
            engine.on_sample(rec["t_ms"], rec["payload"]["channels"])
        elif rec["type"] == "squeeze":
            engine.on_squeeze(rec["t_ms"], rec["payload"]["intensity"],
                              sample_t_ms=rec["payload"]["sample_t_ms"])
        elif rec["type"] == "phase" and rec["payload"]["phase"] == PHASE_ENDED:
            ended_t = rec["t_ms"]
    if ended_t is not None and ended_t < cfg.end_ms:
        engine.abort(ended_t)   # original session was cut short
    else:
        engine.finish()
    engine.drain()
    return SessionResult(engine.log.records, engine.log.records[-1]["payload"], engine)


def compare_logs(a: list, b: list,
                 types: tuple = ("estimate", "cue", "adherence")) -> list[str]:
    """Millisecond-exact comparison of the computed record streams."""
    diffs = []
    for type_ in types:
        ra = [r for r in a if r["type"] == type_]
        rb = [r for r in b if r["type"] == type_]
        if len(ra) != len(rb):
            diffs.append(f"{type_}: {len(ra)} vs {len(rb)} records")
            continue
        for x, y in zip(ra, rb):
            if x["t_ms"] != y["t_ms"] or x["payload"] != y["payload"]:
                diffs.append(f"{type_}@{x['t_ms']}: {x['payload']} != {y['payload']}")
    return diffs


# -- evaluation -----------------------------------------------------------


def _phase_bounds(records: list, end_ms: int | None = None) -> tuple[int, int]:
    start = end = None
    for rec in records:
        if rec["type"] == "phase":
            if rec["payload"]["phase"] == PHASE_ACTIVE and start is None:
                start = rec["t_ms"]
            if rec["payload"]["phase"] in (PHASE_COOLDOWN, PHASE_ENDED) \
                    and start is not None and end is None:
                end = rec["t_ms"]
    if start is None:
        return 0, 0
    if end is None:
        end = end_ms if end_ms is not None else records[-1]["t_ms"]
    return start, end


def summarize(records: list, end_ms: int | None = None) -> dict:
    """Aggregate a record stream into the session summary."""
    t0, t1 = _phase_bounds(records, end_ms)
    est = [(r["t_ms"], r["payload"]) for r in records if r["type"] == "estimate"]
    active = [(t, p) for t, p in est if t0 <= t <= t1 and
              p.get("phase") == PHASE_ACTIVE]
    quarters = [[] for _ in range(4)]
    span = max(t1 - t0, 1)
    for t, p in active:
        idx = min(3, int(4 * (t - t0) / span))
        quarters[idx].append(p["smoothed"])
    reports = [rhythm.AdherenceReport(
        beats_total=r["payload"]["beats"], beats_hit=r["payload"]["hits"],
        mean_abs_timing_error_ms=r["payload"]["mean_error_ms"],
        sync_score=r["payload"]["sync"])
        for r in records if r["type"] == "adherence"]
    combined = rhythm.combine_reports(reports) if reports else None
    return {
        "n_samples": sum(1 for r in records if r["type"] == "sample"),
        "n_estimates": len(est),
        "n_squeeze_samples": sum(1 for r in records if r["type"] == "squeeze"),
        "n_guidance": sum(1 for r in records if r["type"] == "guidance"),
        "active_start_ms": t0, "active_end_ms": t1,
        "quarter_means": [float(np.mean(q)) if q else None for q in quarters],
        "mean_smoothed_active": float(np.mean([p["smoothed"] for _, p in active]))
        if active else None,
        "total_beats": combined.beats_total if combined else 0,
        "hits": combined.beats_hit if combined else 0,
        "sync": combined.sync_score if combined else 0.0,
    }


def evaluate_session(records_or_path) -> dict:
    """Summary metrics for a finished log (path or record list)."""
    if isinstance(records_or_path, (str, bytes)) or hasattr(records_or_path, "read"):
        records = EventLog.read(records_or_path)
    else:
        records = records_or_path
    return summarize(records)
