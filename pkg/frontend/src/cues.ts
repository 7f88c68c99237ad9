/**
 * Beat cue bookkeeping. Holds only server-announced beats; the ring render
 * never extrapolates past the 500 ms lead window the server promises, so a
 * stale plan simply stops producing rings when its frames stop coming.
 */

import { BeatPayload, CUE_LEAD_MS } from "./protocol.js";

export interface Beat {
  dueMs: number;
  periodMs: number;
  squeezeMs: number;
  plan: number;
  block: number;
}

const KEEP_PAST_MS = 1500;

export class CueSchedule {
  private beats: Beat[] = [];

  onBeat(payload: BeatPayload): void {
    const beat: Beat = {
      dueMs: payload.due_ms,
      periodMs: payload.period_ms,
      squeezeMs: payload.squeeze_ms,
      plan: payload.plan,
      block: payload.block,
    };
    if (this.beats.some(b => b.dueMs === beat.dueMs && b.plan === beat.plan)) {
      return;
    }
    this.beats.push(beat);
    this.beats.sort((a, b) => a.dueMs - b.dueMs);
  }

  prune(serverNowMs: number): void {
    this.beats = this.beats.filter(b => b.dueMs >= serverNowMs - KEEP_PAST_MS);
  }

  /** Next due beat at or after serverNowMs, if the server announced one. */
  next(serverNowMs: number): Beat | undefined {
    return this.beats.find(b => b.dueMs >= serverNowMs);
  }

  upcoming(serverNowMs: number, n: number): Beat[] {
    return this.beats.filter(b => b.dueMs >= serverNowMs).slice(0, n);
  }

  /**
   * Ring contraction toward the next due beat: 0 when the lead window
   * opens, 1 exactly at due. Null outside any announced lead window.
   */
  ringProgress(serverNowMs: number): number | null {
    const beat = this.next(serverNowMs);
    if (beat === undefined) return null;
    const remaining = beat.dueMs - serverNowMs;
    if (remaining > CUE_LEAD_MS) return null;
    return 1 - remaining / CUE_LEAD_MS;
  }

  count(): number {
    return this.beats.length;
  }
}
