/**
 * Websocket session client: hello-first handshake, per-sender seq
 * counting, clock-offset estimation from server frames, and reconnect
 * with capped exponential backoff. The socket, clock, and timer are all
 * injectable so tests can script a whole session deterministically.
 */

import { OffsetClock } from "./clock.js";
import { Frame } from "./protocol.js";

export interface SocketLike {
  onopen: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;
export type Scheduler = (fn: () => void, delayMs: number) => void;
export type ConnState = "connecting" | "open" | "reconnecting" | "closed";

export interface SessionSocketOpts {
  factory?: SocketFactory;
  now?: () => number;
  schedule?: Scheduler;
  config?: Record<string, unknown>; // hello config overrides
}

export const BACKOFF_MS = [500, 1000, 2000, 4000, 8000];

export class SessionSocket {
  readonly clock = new OffsetClock();
  onFrame: (frame: Frame) => void = () => {};
  onStatus: (state: ConnState) => void = () => {};

  private ws: SocketLike | null = null;
  private clientSeq = 0;
  private retries = 0;
  private stopped = false;

  constructor(private url: string, private opts: SessionSocketOpts = {}) {}

  connect(): void {
    if (this.stopped) return;
    this.onStatus(this.retries > 0 ? "reconnecting" : "connecting");
    const factory =
      this.opts.factory ??
      ((url: string) => new WebSocket(url) as unknown as SocketLike);
    const ws = factory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.retries = 0;
      this.clientSeq = 0; // fresh session, fresh seq space
      this.sendRaw("hello", { config: this.opts.config ?? {} });
      this.onStatus("open");
    };
    ws.onmessage = ev => {
      let frame: Frame;
      try {
        frame = JSON.parse(ev.data) as Frame;
      } catch {
        return;
      }
      this.clock.observe(frame.t_ms, this.now());
      this.onFrame(frame);
    };
    ws.onerror = () => {}; // close always follows
    ws.onclose = () => this.handleDrop();
  }

  sendSqueeze(intensity: number, sampleTMs: number): void {
    this.sendRaw("squeeze", {
      intensity,
      t_ms: Math.round(sampleTMs),
    });
  }

  sendBye(): void {
    this.sendRaw("bye", {});
  }

  /** Stop for good: no further reconnect attempts. */
  stop(): void {
    if (this.stopped) return;
    this.stopped = true;
    this.ws?.close();
  }

  get connected(): boolean {
    return this.ws !== null && !this.stopped;
  }

  private handleDrop(): void {
    this.ws = null;
    if (this.stopped) {
      this.onStatus("closed");
      return;
    }
    const delay =
      BACKOFF_MS[Math.min(this.retries, BACKOFF_MS.length - 1)] as number;
    this.retries += 1;
    this.onStatus("reconnecting");
    const schedule =
      this.opts.schedule ??
      ((fn: () => void, ms: number) => {
        setTimeout(fn, ms);
      });
    schedule(() => this.connect(), delay);
  }

  private sendRaw(type: string, payload: Record<string, unknown>): void {
    if (this.ws === null) return;
    this.clientSeq += 1;
    this.ws.send(
      JSON.stringify({
        type,
        seq: this.clientSeq,
        t_ms: Math.round(this.now()),
        payload,
      }),
    );
  }

  private now(): number {
    return (this.opts.now ?? (() => performance.now()))();
  }
}
