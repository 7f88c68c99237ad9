"""Command line front end.

Subcommands cover the whole pipeline: synth -> convert -> train -> eval /
infer, plus simulate / replay for sessions and serve for the websocket
service.

Exit codes: 0 success, 2 usage error (argparse), 3 unreadable or malformed
input data, 4 model or training failure, 5 replay mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import guidance as gd
from .lstm import (ModelError, TrainConfig, load_model, save_model,
                   train_on_dataset, predict_batch, accuracy)
from .rhythm import RhythmError
from .runtime import StreamError
from .session import (SessionConfig, SessionError, UserParams, PhysioParams,
                      EventLog, run_session, replay_log, compare_logs,
                      evaluate_session)
from .signals import (RecordingError, SynthParams, default_schedule,
                      load_recording, save_recording, synth_recording,
                      truncate_and_stack, LABEL_IDS)
from .windows import (DatasetError, apply_norm, build_dataset, load_dataset,
                      save_dataset, stratified_split)

EXIT_OK = 0
EXIT_DATA = 3
EXIT_MODEL = 4
EXIT_REPLAY = 5

_DATA_ERRORS = (RecordingError, DatasetError, StreamError, SessionError,
                RhythmError, FileNotFoundError, IsADirectoryError,
                NotADirectoryError, json.JSONDecodeError)


def _parse_schedule(text: str) -> list:
    out = []
    for part in text.split(","):
        name, _, secs = part.strip().partition(":")
        if name not in LABEL_IDS or not secs:
            raise RecordingError(f"bad schedule entry {part!r}")
        out.append((LABEL_IDS[name], float(secs)))
    return out


def load_flat_config(path) -> dict:
    """key=value per line; '#' starts a comment; values stay strings."""
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SessionError(f"bad config line {raw!r}")
        key, val = line.split("=", 1)
        cfg[key.strip()] = val.strip()
    return cfg


def _session_config(args) -> SessionConfig:
    base = SessionConfig().to_dict()
    if getattr(args, "config", None):
        for key, val in load_flat_config(args.config).items():
            if key in base:   # llm_* keys belong to the remote config
                cur = base[key]
                if isinstance(cur, int):
                    base[key] = int(float(val))
                elif isinstance(cur, float):
                    base[key] = float(val)
                else:
                    base[key] = val
    for key in ("session_s", "calibration_s", "seed", "guidance_mode"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return SessionConfig.from_dict(base)


def _remote_cfg(args) -> gd.RemoteConfig | None:
    file_cfg = load_flat_config(args.config) if getattr(args, "config", None) else {}
    return gd.RemoteConfig.resolve(file_cfg)


# -- subcommand bodies ----------------------------------------------------


def cmd_synth(args) -> int:
    schedule = _parse_schedule(args.schedule) if args.schedule \
        else default_schedule(args.repeat)
    rec = synth_recording(args.seed, schedule, SynthParams())
    fmt = {"csv": "csv_dir", "jsonl": "jsonl", None: None}[args.format]
    save_recording(rec, args.out, fmt=fmt)
    total = sum(s for _, s in schedule)
    print(f"wrote recording: {len(schedule)} segments, {total:.0f}s -> {args.out}")
    return EXIT_OK


def cmd_convert(args) -> int:
    rec = load_recording(args.input)
    series = truncate_and_stack(rec)
    for w in series.warnings:
        print(f"warning: {w}", file=sys.stderr)
    ds = build_dataset(series, keep_boundary=not args.drop_boundary)
    save_dataset(ds, args.out)
    counts = np.bincount(ds.labels, minlength=3)
    print(f"wrote dataset: {len(ds.labels)} windows "
          f"(baseline={counts[0]} stress={counts[1]} amusement={counts[2]}) "
          f"-> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                      lr=args.lr, seed=args.seed, hidden=args.hidden)
    bundle, history, split = train_on_dataset(ds, cfg, test_frac=args.test_frac)
    for h in history:
        print(f"epoch {h['epoch']:3d}  loss {h['train_loss']:.4f}  "
              f"test_acc {h['test_acc']:.4f}")
    save_model(bundle, args.out)
    print(f"wrote model -> {args.out}  (test acc {history[-1]['test_acc']:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_model(args.model)
    ds = load_dataset(args.data)
    split = stratified_split(ds.labels, test_frac=args.test_frac, seed=args.seed)
    idx = split.test if args.split == "test" else \
        np.concatenate([split.train, split.test])
    inputs = apply_norm(ds.inputs[idx], bundle.stats)
    labels = ds.labels[idx]
    preds = predict_batch(bundle.params, inputs).argmax(axis=1)
    acc = accuracy(bundle.params, inputs, labels)
    conf = np.zeros((3, 3), dtype=int)
    for y, p in zip(labels, preds):
        conf[int(y), int(p)] += 1
    print(f"accuracy on {args.split}: {acc:.4f}  ({len(labels)} windows)")
    print("confusion (rows=true baseline/stress/amusement):")
    for row in conf:
        print("  " + " ".join(f"{v:5d}" for v in row))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .windows import slide_windows, WINDOW_STEP, WINDOW_LEN
    from .lstm import predict_proba

    bundle = load_model(args.model)
    rec = load_recording(args.input)
    series = truncate_and_stack(rec)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for s, w in slide_windows(series.data):
            probs = predict_proba(bundle.params, apply_norm(w, bundle.stats))
            line = {"t_ms": int((s + WINDOW_LEN) * 1000),
                    "probs": [round(float(p), 6) for p in probs],
                    "raw": round(float(probs[1]), 6)}
            out.write(json.dumps(line) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    bundle = load_model(args.model)
    cfg = _session_config(args)
    result = run_session(bundle, cfg,
                         user=UserParams(skill=args.skill),
                         physio=PhysioParams(),
                         remote_cfg=_remote_cfg(args),
                         out_path=args.out)
    lat = result.engine.runtime.latency_stats()
    print(json.dumps({"summary": result.summary, "latency_ms": lat}, indent=2))
    if args.out:
        print(f"wrote log -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_replay(args) -> int:
    bundle = load_model(args.model)
    records = EventLog.read(args.log)
    result = replay_log(records, bundle)
    if args.out:
        result.engine.log.write(args.out)
    diffs = compare_logs(records, result.records)
    if diffs:
        for d in diffs[:20]:
            print(f"mismatch: {d}", file=sys.stderr)
        print(f"replay diverged ({len(diffs)} differences)", file=sys.stderr)
        return EXIT_REPLAY
    print(f"replay matches: {evaluate_session(result.records)['n_estimates']} "
          f"estimates, {result.summary['total_beats']} beats")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn
    from .service import ServiceSettings, create_app

    bundle = load_model(args.model)
    settings = ServiceSettings(time_scale=args.time_scale,
                               max_sessions=args.max_sessions,
                               config=_session_config(args),
                               remote_cfg=_remote_cfg(args))
    app = create_app(bundle, settings, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nienie",
        description="adaptive rhythmic squeeze training pipeline",
        epilog="exit codes: 0 ok, 2 usage, 3 bad input data, "
               "4 model/training failure, 5 replay mismatch")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic labelled recording")
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=["csv", "jsonl"], default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--schedule", help="label:seconds,... (default 5x3 blocks)")
    sp.add_argument("--repeat", type=int, default=5)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("convert", help="recording -> windowed dataset (.nnwd)")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--drop-boundary", action="store_true",
                    help="drop windows that span a segment boundary")
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("train", help="train the stress classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--hidden", type=int, default=128)
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a model on a dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", choices=["test", "all"], default="test")
    sp.add_argument("--seed", type=int, default=0,
                    help="split seed (must match training)")
    sp.add_argument("--test-frac", type=float, default=0.2)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="per-window stress scores for a recording")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("simulate", help="run a simulated session")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", help="write the event log here")
    sp.add_argument("--skill", type=float, default=0.9)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--session-s", dest="session_s", type=float)
    sp.add_argument("--calibration-s", dest="calibration_s", type=float)
    sp.add_argument("--guidance", dest="guidance_mode",
                    choices=["off", "template", "remote"])
    sp.add_argument("--config", help="flat key=value config file")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replay", help="re-derive a logged session and compare")
    sp.add_argument("--model", required=True)
    sp.add_argument("--log", required=True)
    sp.add_argument("--out", help="write the replayed log here")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("serve", help="websocket service")
    sp.add_argument("--model", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8871)
    sp.add_argument("--time-scale", type=float, default=1.0)
    sp.add_argument("--max-sessions", type=int, default=8)
    sp.add_argument("--static", help="directory with the web frontend")
    sp.add_argument("--config", help="flat key=value config file")
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
