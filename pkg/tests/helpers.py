"""Shared test utilities: a brute-force matching oracle, scripted HTTP stubs
for the remote guidance path, and a fixed-physiology session driver."""

from __future__ import annotations

import heapq
import json
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np


def finite_diff_grads(params, x, y, eps=1e-5):
    """Central-difference gradient of the mean cross-entropy loss."""
    from nienie.lstm import ModelParams, forward_batch, softmax_xent_batch

    def loss_of(p):
        logits, _ = forward_batch(p, x)
        return softmax_xent_batch(logits, y)[0]

    arrays = [a.copy() for a in params.as_arrays()]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_of(ModelParams.from_arrays(arrays))
            flat[i] = orig - eps
            lm = loss_of(ModelParams.from_arrays(arrays))
            flat[i] = orig
            gf[i] = (lp - lm) / (2.0 * eps)
        grads.append(g)
    from nienie.lstm import ModelParams as MP
    return MP.from_arrays(grads)


def max_rel_error(analytic, numeric, floor=1e-6):
    """Worst per-entry relative disagreement; the floor keeps near-zero
    entries from inflating the ratio past what the difference supports."""
    worst = 0.0
    for a, n in zip(analytic.as_arrays(), numeric.as_arrays()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def scalar_adam_trace(p0, g, steps, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Literal textbook Adam on one scalar with a constant gradient."""
    import math
    p, m, v = p0, 0.0, 0.0
    out = []
    for t in range(1, steps + 1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(p)
    return out


def brute_force_match(beats, onsets, tolerance_ms):
    """Exhaustive one-to-one matching oracle.

    Maximizes hit count, then minimizes total absolute timing error.
    Returns (hits, total_error). Feasible pairs only within tolerance.
    """
    beats = sorted(beats)
    candidates = []
    for b in beats:
        cand = [j for j, o in enumerate(onsets) if abs(o - b) <= tolerance_ms]
        candidates.append((b, cand))

    best = (0, 0.0)

    def rec(i, used, hits, err):
        nonlocal best
        if i == len(candidates):
            if hits > best[0] or (hits == best[0] and err < best[1]):
                best = (hits, err)
            return
        # upper bound prune: even matching every remaining beat can't win
        remaining = len(candidates) - i
        if hits + remaining < best[0]:
            return
        b, cand = candidates[i]
        rec(i + 1, used, hits, err)  # skip this beat
        for j in cand:
            if j in used:
                continue
            used.add(j)
            rec(i + 1, used, hits + 1, err + abs(onsets[j] - b))
            used.discard(j)

    rec(0, set(), 0, 0.0)
    return best


# --- scripted HTTP stubs --------------------------------------------------


class StubLLM:
    """Local chat-completion stub. `script` maps request count (1-based) to a
    reply, or a single reply used for every request. Replies:
      ("text", str)    -> 200 with choices[0].message.content = str
      ("status", int)  -> that HTTP status, empty body
      ("garbage",)     -> 200 with non-JSON body
    """

    def __init__(self, reply=("text", "Nice and steady.")):
        self.reply = reply
        self.requests: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                try:
                    stub.requests.append(json.loads(self.rfile.read(n)))
                except ValueError:
                    stub.requests.append({})
                kind = stub.reply[0]
                if kind == "status":
                    self.send_response(stub.reply[1])
                    self.end_headers()
                elif kind == "garbage":
                    self.send_response(200)
                    self.end_headers()
                    self.wfile.write(b"not json at all")
                else:
                    body = json.dumps({"choices": [{"message": {
                        "content": stub.reply[1]}}]}).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat"
        self.thread = threading.Thread(target=self.server.serve_forever,
                                       daemon=True)
        self.thread.start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


class HangingServer:
    """Accepts TCP connections and never responds; the client must time out."""

    def __init__(self):
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(8)
        self.url = f"http://127.0.0.1:{self.sock.getsockname()[1]}/v1/chat"
        self._conns: list[socket.socket] = []
        self._stop = False
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def _loop(self):
        self.sock.settimeout(0.1)
        while not self._stop:
            try:
                conn, _ = self.sock.accept()
                self._conns.append(conn)  # hold open, never reply
            except socket.timeout:
                continue
            except OSError:
                break

    def close(self):
        self._stop = True
        for c in self._conns:
            try:
                c.close()
            except OSError:
                pass
        self.sock.close()
        self.thread.join(timeout=1)


def closed_port_url():
    """URL on a port that is bound then released, so connects are refused."""
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return f"http://127.0.0.1:{port}/v1/chat"


# --- open-loop session driver --------------------------------------------


def drive_fixed_samples(engine, samples, user, end_ms, tick_ms=250):
    """Run an engine against a pre-generated 1 Hz sample stream (physiology
    decoupled from adherence) with a reactive simulated user."""
    queue: list = []
    tie = [0]

    def push(t, prio, kind, value=None):
        heapq.heappush(queue, (int(t), prio, tie[0], kind, value))
        tie[0] += 1

    for k, x in enumerate(samples, start=1):
        if k * 1000 > end_ms:
            break
        push(k * 1000, 0, "sample", x)
    for t in range(tick_ms, end_ms + 1, tick_ms):
        push(t, 2, "tick")

    def pump():
        for rec in engine.drain():
            if rec["type"] == "cue":
                for sq_t, val in user.react(rec["payload"]):
                    if sq_t <= end_ms:
                        push(sq_t, 1, "squeeze", val)

    while queue:
        t, _p, _i, kind, value = heapq.heappop(queue)
        if kind == "sample":
            engine.on_sample(t, value)
        elif kind == "squeeze":
            engine.on_squeeze(t, value)
        else:
            engine.advance_to(t)
        pump()
    engine.finish()
    pump()
    return engine.log.records


def wait_until(predicate, timeout_s=5.0, interval_s=0.01):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval_s)
    return predicate()
