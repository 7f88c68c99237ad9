/**
 * Wire protocol types, mirroring docs/PROTOCOL.md on the server side.
 * Every frame in either direction is one JSON object with a per-sender
 * strictly increasing seq and a session-time t_ms.
 */

export type Phase = "calibrating" | "active" | "cooldown" | "ended";

export interface Frame {
  type: string;
  session_id: string | null;
  seq: number;
  t_ms: number;
  payload: Record<string, unknown>;
}

export interface BeatPayload {
  kind: "beat";
  due_ms: number;
  period_ms: number;
  squeeze_ms: number;
  plan: number;
  block: number;
}

export interface StressPayload {
  raw: number;
  adjusted: number;
  smoothed: number;
  probs: number[];
  phase: Phase;
}

export interface AdherencePayload {
  plan: number;
  block: number;
  block_start_ms: number;
  block_end_ms: number;
  beats: number;
  hits: number;
  misses: number;
  mean_error_ms: number;
  sync: number;
}

export interface GuidancePayload {
  tone: string;
  text: string;
  source: string;
}

export interface StatePayload {
  phase: Phase;
  plan?: Record<string, unknown>;
  summary?: Record<string, unknown>;
  dropped_squeezes?: number;
}

export interface ErrorPayload {
  code: string;
  detail?: string;
}

// server-enforced floor between accepted squeezes, in session ms
export const SQUEEZE_MIN_SPACING_MS = 30;
export const CUE_LEAD_MS = 500;
