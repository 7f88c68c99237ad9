"""Walk the full desk pipeline in one go: synthesize a labelled recording,
window it, train the from-scratch LSTM, and report held-out accuracy.

Run from the repo root after `pip install -e .`:

    python3 demos/train_pipeline.py
"""

import time

import numpy as np

from nienie.lstm import TrainConfig, accuracy, train_on_dataset
from nienie.signals import LABEL_NAMES, default_schedule, synth_recording, \
    truncate_and_stack
from nienie.windows import apply_norm, build_dataset


def main():
    # two passes over the 3-condition protocol keeps the demo under a minute
    rec = synth_recording(seed=0, schedule=default_schedule(repeat=2))
    series = truncate_and_stack(rec)
    print(f"synthesized {series.length} s of [eda, temp, hr] "
          f"across {len(series.segments)} segments")

    ds = build_dataset(series)
    counts = {LABEL_NAMES[c]: int(np.sum(ds.labels == c)) for c in range(3)}
    print(f"windowed into {ds.n} windows: {counts}")

    cfg = TrainConfig(epochs=5, batch_size=32, seed=0, hidden=64)
    t0 = time.perf_counter()
    bundle, history, split = train_on_dataset(ds, cfg)
    for h in history:
        print(f"epoch {h['epoch']:>2}  train_loss {h['train_loss']:.4f}  "
              f"test_acc {h['test_acc']:.3f}")
    print(f"trained H={cfg.hidden} in {time.perf_counter() - t0:.1f} s")

    xn = apply_norm(ds.inputs, bundle.stats)
    held_out = accuracy(bundle.params, xn[split.test], ds.labels[split.test])
    print(f"held-out accuracy on {split.test.size} windows: {held_out:.3f}")


if __name__ == "__main__":
    main()
