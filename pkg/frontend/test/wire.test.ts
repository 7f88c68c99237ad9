import { describe, expect, it } from "vitest";

import { Frame } from "../src/protocol.js";
import { ConnState, SessionSocket } from "../src/wire.js";
import { FakeScheduler, FakeSocket } from "./fake.js";

function makeHarness(config?: Record<string, unknown>) {
  const sockets: FakeSocket[] = [];
  const sched = new FakeScheduler();
  let t = 10_000;
  const socket = new SessionSocket("ws://test/ws", {
    factory: () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    now: () => t,
    schedule: sched.schedule,
    config,
  });
  const statuses: ConnState[] = [];
  const frames: Frame[] = [];
  socket.onStatus = s => statuses.push(s);
  socket.onFrame = f => frames.push(f);
  return {
    socket,
    sockets,
    sched,
    statuses,
    frames,
    setNow: (v: number) => {
      t = v;
    },
    last: () => sockets[sockets.length - 1] as FakeSocket,
  };
}

describe("handshake", () => {
  it("sends hello first with seq 1 and the config overrides", () => {
    const h = makeHarness({ session_s: 120, guidance_mode: "off" });
    h.socket.connect();
    h.last().open();
    const sent = h.last().sentJson();
    expect(sent).toHaveLength(1);
    expect(sent[0]).toMatchObject({
      type: "hello",
      seq: 1,
      t_ms: 10_000,
      payload: { config: { session_s: 120, guidance_mode: "off" } },
    });
    expect(h.statuses).toEqual(["connecting", "open"]);
  });

  it("defaults to an empty config", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    expect(h.last().sentJson()[0]?.payload).toEqual({ config: {} });
  });
});

describe("client frames", () => {
  it("numbers frames contiguously after the hello", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    h.socket.sendSqueeze(0.8, 1234.6);
    h.socket.sendSqueeze(0.2, 1301.2);
    h.socket.sendBye();
    const sent = h.last().sentJson();
    expect(sent.map(f => [f.type, f.seq])).toEqual([
      ["hello", 1],
      ["squeeze", 2],
      ["squeeze", 3],
      ["bye", 4],
    ]);
    // squeeze timestamps ride the sample clock, rounded to whole ms
    expect(sent[1]?.payload).toEqual({ intensity: 0.8, t_ms: 1235 });
  });
});

describe("server frames", () => {
  it("forwards frames and learns the clock offset from them", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    h.setNow(5000);
    h.last().deliver({
      type: "state",
      session_id: "s1",
      seq: 1,
      t_ms: 0,
      payload: { phase: "calibrating" },
    });
    expect(h.frames).toHaveLength(1);
    expect(h.frames[0]?.type).toBe("state");
    expect(h.socket.clock.ready()).toBe(true);
    expect(h.socket.clock.toServer(5000)).toBe(0);
    expect(h.socket.clock.toLocal(1000)).toBe(6000);
  });

  it("drops unparseable messages without dying", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    h.last().onmessage?.({ data: "{not json" });
    expect(h.frames).toHaveLength(0);
  });
});

describe("reconnect", () => {
  it("backs off, then redoes the handshake with a fresh seq space", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    h.socket.sendSqueeze(0.5, 100);
    h.last().dropFromServer();

    expect(h.sched.runNext()).toBe(500); // attempt 2 fails too
    h.last().dropFromServer();
    expect(h.sched.runNext()).toBe(1000); // attempt 3 succeeds
    h.last().open();

    expect(h.sockets).toHaveLength(3);
    const sent = h.last().sentJson();
    expect(sent[0]).toMatchObject({ type: "hello", seq: 1 });
    h.socket.sendSqueeze(0.4, 200);
    expect(h.last().sentJson()[1]).toMatchObject({ type: "squeeze", seq: 2 });
    expect(h.statuses[h.statuses.length - 1]).toBe("open");
  });

  it("caps the backoff delay", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    h.last().dropFromServer();
    const delays: number[] = [];
    for (let i = 0; i < 7; i++) {
      delays.push(h.sched.runNext());
      h.last().dropFromServer();
    }
    expect(delays).toEqual([500, 1000, 2000, 4000, 8000, 8000, 8000]);
  });

  it("stop() closes for good and never reschedules", () => {
    const h = makeHarness();
    h.socket.connect();
    h.last().open();
    h.socket.stop();
    expect(h.last().closed).toBe(true);
    expect(h.statuses[h.statuses.length - 1]).toBe("closed");
    expect(h.sched.pending).toHaveLength(0);
    expect(h.socket.connected).toBe(false);
  });
});
