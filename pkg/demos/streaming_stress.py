"""Stream a recording sample-by-sample through the stress runtime and watch
the estimate chain: raw model score during calibration, then the
baseline-adjusted, smoothed score once the profile freezes at 60 s.

Run from the repo root after `pip install -e .`:

    python3 demos/streaming_stress.py
"""

import numpy as np

from nienie.lstm import TrainConfig, train_on_dataset
from nienie.runtime import StressRuntime
from nienie.signals import LABEL_BASELINE, LABEL_STRESS, default_schedule, \
    synth_recording, truncate_and_stack
from nienie.windows import build_dataset


def quick_model():
    rec = synth_recording(seed=0, schedule=default_schedule(repeat=2))
    ds = build_dataset(truncate_and_stack(rec))
    bundle, _, _ = train_on_dataset(ds, TrainConfig(epochs=5, seed=0, hidden=64))
    return bundle


def main():
    bundle = quick_model()

    # live stream: one calm minute to calibrate, then a stressor
    live = synth_recording(seed=42, schedule=[(LABEL_BASELINE, 90),
                                              (LABEL_STRESS, 150)])
    series = truncate_and_stack(live)
    rt = StressRuntime(bundle, calibration_s=60.0)

    print(" t_s   phase        raw    adjusted  smoothed")
    for i, row in enumerate(np.asarray(series.data)):
        t_ms = (i + 1) * 1000
        est = rt.push(t_ms, row)
        if est is None:
            continue
        phase = "calibrating" if rt.profile is None else "live"
        print(f"{est.t_ms / 1000:>5.0f}  {phase:<11}  {est.raw_score:.4f}  "
              f"{est.adjusted_score:>8.4f}  {est.smoothed_score:>8.4f}")

    stats = rt.latency_stats()
    print(f"\n{stats['count']} windows, median latency "
          f"{stats['median_ms']:.2f} ms, p95 {stats['p95_ms']:.2f} ms")


if __name__ == "__main__":
    main()
