/**
 * Shared view state, fed only by server frames. The client never computes
 * a score: stress comes from stress frames, sync and can fill from
 * adherence frames, and toasts replay guidance frames in arrival order
 * with a 4 s minimum display and a single visible slot.
 */

import {
  AdherencePayload,
  ErrorPayload,
  Frame,
  GuidancePayload,
  Phase,
  StatePayload,
  StressPayload,
} from "./protocol.js";

export const TOAST_MIN_MS = 4000;

export type ConnState = "connecting" | "open" | "reconnecting" | "closed";

export interface CanState {
  plan: number;
  block: number;
  beats: number;
  hits: number;
  sync: number; // fill fraction, straight from the adherence frame
}

export interface Toast {
  text: string;
  tone: string;
  shownAtMs: number;
}

export class SessionView {
  connection: ConnState = "connecting";
  sessionId: string | null = null;
  phase: Phase | null = null;
  stress: number | null = null;
  lastSync: number | null = null;
  cans: CanState[] = [];
  toast: Toast | null = null;
  droppedSqueezes = 0;
  summary: Record<string, unknown> | null = null;
  lastError: string | null = null;
  serverTMs = 0;

  private toastQueue: { text: string; tone: string }[] = [];

  applyFrame(frame: Frame, localNowMs: number): void {
    if (frame.session_id && frame.session_id !== this.sessionId) {
      this.resetSession();
      this.sessionId = frame.session_id;
    }
    this.serverTMs = Math.max(this.serverTMs, frame.t_ms);
    switch (frame.type) {
      case "state": {
        const p = frame.payload as unknown as StatePayload;
        if (p.phase) this.phase = p.phase;
        if (p.summary) this.summary = p.summary;
        if (typeof p.dropped_squeezes === "number") {
          this.droppedSqueezes = p.dropped_squeezes;
        }
        break;
      }
      case "stress": {
        const p = frame.payload as unknown as StressPayload;
        this.stress = p.smoothed;
        break;
      }
      case "adherence": {
        const p = frame.payload as unknown as AdherencePayload;
        this.lastSync = p.sync;
        const can: CanState = { plan: p.plan, block: p.block,
                                beats: p.beats, hits: p.hits, sync: p.sync };
        const idx = this.cans.findIndex(
          c => c.plan === can.plan && c.block === can.block);
        if (idx >= 0) this.cans[idx] = can;
        else this.cans.push(can);
        break;
      }
      case "guidance": {
        const p = frame.payload as unknown as GuidancePayload;
        this.toastQueue.push({ text: p.text, tone: p.tone });
        this.promoteToast(localNowMs);
        break;
      }
      case "error": {
        const p = frame.payload as unknown as ErrorPayload;
        this.lastError = p.code;
        break;
      }
      default:
        break; // beat frames go to CueSchedule; bye is connection-level
    }
  }

  /** Advance the toast slot; call on guidance arrival and on render ticks. */
  promoteToast(localNowMs: number): void {
    if (this.toast && localNowMs - this.toast.shownAtMs < TOAST_MIN_MS) return;
    const next = this.toastQueue.shift();
    if (next) this.toast = { ...next, shownAtMs: localNowMs };
  }

  queuedToasts(): number {
    return this.toastQueue.length;
  }

  private resetSession(): void {
    this.phase = null;
    this.stress = null;
    this.lastSync = null;
    this.cans = [];
    this.toast = null;
    this.toastQueue = [];
    this.droppedSqueezes = 0;
    this.summary = null;
    this.lastError = null;
    this.serverTMs = 0;
  }
}
