"""Run two closed-loop sessions headless (a practiced user and a distracted
one), compare how their smoothed stress moves across session quarters, then
replay the first log and verify the engine reproduces it exactly.

Run from the repo root after `pip install -e .`:

    python3 demos/simulated_session.py
"""

import tempfile
from pathlib import Path

from nienie.lstm import TrainConfig, train_on_dataset
from nienie.session import (SessionConfig, UserParams, compare_logs,
                            replay_log, run_session, summarize)
from nienie.signals import default_schedule, synth_recording, truncate_and_stack
from nienie.windows import build_dataset


def quick_model():
    rec = synth_recording(seed=0, schedule=default_schedule(repeat=2))
    ds = build_dataset(truncate_and_stack(rec))
    bundle, _, _ = train_on_dataset(ds, TrainConfig(epochs=5, seed=0, hidden=64))
    return bundle


def describe(tag, result):
    s = summarize(result.records)
    quarters = "  ".join(f"{q:.3f}" for q in s["quarter_means"])
    print(f"{tag}: quarters [{quarters}]  sync {s['sync']:.2f}  "
          f"hits {s['hits']}/{s['total_beats']}")
    return s


def main():
    bundle = quick_model()
    cfg = SessionConfig(session_s=180.0, calibration_s=60.0, seed=4)

    practiced = run_session(bundle, cfg, user=UserParams(skill=0.9))
    distracted = run_session(bundle, cfg, user=UserParams(skill=0.2))
    describe("skill 0.9", practiced)
    describe("skill 0.2", distracted)

    with tempfile.TemporaryDirectory() as tmp:
        log_path = Path(tmp) / "session.jsonl"
        practiced.engine.log.write(log_path)
        replayed = replay_log(str(log_path), bundle)
        diffs = compare_logs(practiced.records, replayed.records)
        print(f"replay of {log_path.name}: "
              f"{'exact match' if not diffs else diffs}")


if __name__ == "__main__":
    main()
