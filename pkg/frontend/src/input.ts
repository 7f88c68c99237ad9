/**
 * Key/pointer hold to squeeze-intensity mapper. Keyboards have no pressure
 * sensor, so intensity comes from hold duration: 0 to 1 over 300 ms of
 * hold, back to 0 over 200 ms after release. Samples go out on a 33 ms
 * tick, hard-capped at 30 per sliding second, and pause entirely while the
 * page is hidden.
 */

export interface InputSample {
  t_ms: number;
  intensity: number;
}

export const TICK_MS = 33;
export const RAMP_MS = 300;
export const DECAY_MS = 200;
const MAX_PER_SECOND = 30;
const MIN_SPACING_MS = TICK_MS;

export class HoldInput {
  private holding = false;
  private hidden = false;
  private intensity = 0;
  private lastAdvance: number | null = null;
  private emitted: number[] = [];

  constructor(private emit: (sample: InputSample) => void) {}

  press(nowMs: number): void {
    this.advance(nowMs);
    if (!this.hidden) this.holding = true;
  }

  release(nowMs: number): void {
    this.advance(nowMs);
    this.holding = false;
  }

  setHidden(hidden: boolean, nowMs: number): void {
    this.advance(nowMs);
    this.hidden = hidden;
    if (hidden) this.holding = false; // keyup may never arrive while hidden
  }

  current(): number {
    return this.intensity;
  }

  /** Move the ramp/decay forward to nowMs without emitting. */
  private advance(nowMs: number): void {
    if (this.lastAdvance === null) {
      this.lastAdvance = nowMs;
      return;
    }
    const dt = Math.max(0, nowMs - this.lastAdvance);
    this.lastAdvance = nowMs;
    this.intensity = this.holding
      ? Math.min(1, this.intensity + dt / RAMP_MS)
      : Math.max(0, this.intensity - dt / DECAY_MS);
  }

  /** One timer tick: advance the ramp and emit unless rate-capped. */
  tick(nowMs: number): InputSample | null {
    this.advance(nowMs);
    if (this.hidden) return null;
    const cutoff = nowMs - 1000;
    while (this.emitted.length && (this.emitted[0] as number) <= cutoff) {
      this.emitted.shift();
    }
    const last = this.emitted[this.emitted.length - 1];
    if (last !== undefined && nowMs - last < MIN_SPACING_MS) return null;
    if (this.emitted.length >= MAX_PER_SECOND) return null;
    this.emitted.push(nowMs);
    const sample = { t_ms: Math.round(nowMs), intensity: this.intensity };
    this.emit(sample);
    return sample;
  }
}
