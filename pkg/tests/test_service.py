import pytest
from fastapi.testclient import TestClient

from nienie.service import ServiceSettings, create_app
from nienie.session import SessionConfig, compare_logs, replay_log


def make_client(bundle, **kw):
    kw.setdefault("time_scale", 400.0)
    kw.setdefault("tick_s", 0.01)
    kw.setdefault("config", SessionConfig(session_s=120.0, calibration_s=60.0,
                                          seed=3))
    return TestClient(create_app(bundle, ServiceSettings(**kw)))


def hello(ws, seq=1, config=None):
    payload = {"config": config} if config else {}
    ws.send_json({"type": "hello", "session_id": None, "seq": seq, "t_ms": 0,
                  "payload": payload})


def collect_until_bye(ws, limit=5000):
    frames = []
    for _ in range(limit):
        frame = ws.receive_json()
        frames.append(frame)
        if frame["type"] == "bye":
            return frames
    raise AssertionError("no bye frame within limit")


def test_health_endpoint(small_bundle):
    client = make_client(small_bundle)
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "sessions": 0}


def test_hello_gets_calibrating_state_first(small_bundle):
    client = make_client(small_bundle)
    with client.websocket_connect("/ws") as ws:
        hello(ws)
        frame = ws.receive_json()
        assert frame["type"] == "state"
        assert frame["payload"]["phase"] == "calibrating"
        assert frame["seq"] == 1
        assert frame["session_id"]
        ws.send_json({"type": "bye", "seq": 2, "t_ms": 0, "payload": {}})
        collect_until_bye(ws)


def test_full_session_frame_stream(small_bundle):
    client = make_client(small_bundle)
    with client.websocket_connect("/ws") as ws:
        hello(ws)
        frames = collect_until_bye(ws)

    assert [f["seq"] for f in frames] == list(range(1, len(frames) + 1))
    assert len({f["session_id"] for f in frames}) == 1

    kinds = [f["type"] for f in frames]
    for expected in ("state", "stress", "beat", "adherence", "bye"):
        assert expected in kinds

    phases = [f["payload"]["phase"] for f in frames
              if f["type"] == "state" and "phase" in f["payload"]]
    assert phases[0] == "calibrating"
    assert "active" in phases
    assert phases[-1] == "ended"

    for f in frames:
        if f["type"] == "beat":
            assert f["payload"]["due_ms"] - f["t_ms"] == 500
        if f["type"] == "stress":
            assert 0.0 <= f["payload"]["smoothed"] <= 1.0

    ended = next(f for f in frames if f["type"] == "state"
                 and f["payload"].get("phase") == "ended"
                 and "dropped_squeezes" in f["payload"])
    assert ended["payload"]["dropped_squeezes"] == 0
    summary = next(f for f in frames if "summary" in f["payload"])
    assert summary["payload"]["summary"]["n_samples"] == 120


def test_config_overrides_from_hello(small_bundle):
    client = make_client(small_bundle)
    with client.websocket_connect("/ws") as ws:
        hello(ws, config={"session_s": 100.0, "seed": 9})
        frames = collect_until_bye(ws)
    summary = next(f for f in frames if "summary" in f["payload"])
    assert summary["payload"]["summary"]["n_samples"] == 100


def test_first_frame_must_be_hello(small_bundle):
    client = make_client(small_bundle)
    with client.websocket_connect("/ws") as ws:
        ws.send_json({"type": "squeeze", "seq": 1, "t_ms": 0,
                      "payload": {"intensity": 1.0}})
        frame = ws.receive_json()
        assert frame["type"] == "error"
        assert frame["payload"]["code"] == "expected_hello"


def test_bad_config_rejected_with_typed_error(small_bundle):
    client = make_client(small_bundle)
    with client.websocket_connect("/ws") as ws:
        hello(ws, config={"session_s": 10.0, "calibration_s": 60.0})
        frame = ws.receive_json()
        assert frame["type"] == "error"
        assert frame["payload"]["code"] == "bad_config"


def test_session_cap_rejects_next_hello(small_bundle):
    client = make_client(small_bundle, max_sessions=1)
    with client.websocket_connect("/ws") as first:
        hello(first)
        assert first.receive_json()["type"] == "state"
        with client.websocket_connect("/ws") as second:
            hello(second)
            frame = second.receive_json()
            assert frame["type"] == "error"
            assert frame["payload"]["code"] == "max_sessions"
        first.send_json({"type": "bye", "seq": 2, "t_ms": 0, "payload": {}})
        collect_until_bye(first)


def test_out_of_order_seq_gets_error_but_connection_lives(small_bundle):
    client = make_client(small_bundle)
    with client.websocket_connect("/ws") as ws:
        hello(ws, seq=5)
        ws.send_json({"type": "squeeze", "seq": 3, "t_ms": 0,
                      "payload": {"intensity": 0.8}})
        ws.send_json({"type": "squeeze", "seq": 6, "t_ms": 0,
                      "payload": {"intensity": 0.8}})
        ws.send_json({"type": "bye", "seq": 7, "t_ms": 0, "payload": {}})
        frames = collect_until_bye(ws)
    errors = [f for f in frames if f["type"] == "error"]
    assert len(errors) == 1
    assert errors[0]["payload"]["code"] == "out_of_order"
    assert frames[-1]["type"] == "bye"


def test_squeeze_rate_limit_drops_fast_repeats(small_bundle):
    # near-zero time scale: both squeezes land inside the 30 ms spacing gate
    client = make_client(small_bundle, time_scale=0.01)
    with client.websocket_connect("/ws") as ws:
        hello(ws)
        ws.send_json({"type": "squeeze", "seq": 2, "t_ms": 0,
                      "payload": {"intensity": 0.9}})
        ws.send_json({"type": "squeeze", "seq": 3, "t_ms": 1,
                      "payload": {"intensity": 0.9}})
        ws.send_json({"type": "bye", "seq": 4, "t_ms": 2, "payload": {}})
        frames = collect_until_bye(ws)
    ended = next(f for f in frames if f["type"] == "state"
                 and "dropped_squeezes" in f["payload"])
    assert ended["payload"]["dropped_squeezes"] == 1


def test_summary_endpoint_lifecycle(small_bundle):
    client = make_client(small_bundle)
    assert client.get("/sessions/nope/summary").json() == {
        "session_id": "nope", "ended": None, "summary": None}
    with client.websocket_connect("/ws") as ws:
        hello(ws)
        sid = ws.receive_json()["session_id"]
        live = client.get(f"/sessions/{sid}/summary").json()
        assert live["ended"] is False
        frames = collect_until_bye(ws)
    done = client.get(f"/sessions/{sid}/summary").json()
    assert done["ended"] is True
    assert done["summary"]["n_samples"] == 120
    wire = next(f for f in frames if "summary" in f["payload"])
    assert done["summary"] == wire["payload"]["summary"]


def test_live_log_replays_offline(small_bundle):
    client = make_client(small_bundle)
    registry = client.app.state.registry
    with client.websocket_connect("/ws") as ws:
        hello(ws)
        ws.receive_json()
        live = next(iter(registry.active.values()))
        collect_until_bye(ws)
    records = live.engine.log.records
    replayed = replay_log(records, small_bundle)
    assert compare_logs(records, replayed.records) == []


def test_disconnect_mid_session_still_summarized(small_bundle):
    client = make_client(small_bundle, time_scale=50.0)
    registry = client.app.state.registry
    with client.websocket_connect("/ws") as ws:
        hello(ws)
        ws.receive_json()
        sid = next(iter(registry.active))
        # leave without bye: server aborts and records a summary
    out = client.get(f"/sessions/{sid}/summary").json()
    assert out["ended"] is True
    assert isinstance(out["summary"], dict)
