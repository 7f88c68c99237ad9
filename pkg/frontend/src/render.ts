/**
 * Canvas painting for the single-screen game: a cue ring contracting
 * toward each due beat, the tomato that squashes with hold intensity,
 * a row of cans that fill with each scored block, and the stress gauge.
 * Pure drawing; all numbers come in from the view/cue state.
 */

import { CueSchedule } from "./cues.js";
import { SessionView } from "./view.js";

const TOMATO = "#d8433b";
const TOMATO_DARK = "#a32f29";
const STEM = "#4d7a3a";
const CAN = "#9aa5b1";
const CAN_FILL = "#c23b33";

export interface RenderState {
  view: SessionView;
  cues: CueSchedule;
  serverNowMs: number;
  intensity: number;
}

export function drawFrame(ctx: CanvasRenderingContext2D, s: RenderState): void {
  const { width: w, height: h } = ctx.canvas;
  ctx.clearRect(0, 0, w, h);
  const cx = w / 2;
  const cy = h * 0.42;

  drawRing(ctx, s, cx, cy);
  drawTomato(ctx, cx, cy, s.intensity);
  drawCans(ctx, s, w, h);
  drawGauge(ctx, s, w, h);
}

function drawRing(ctx: CanvasRenderingContext2D, s: RenderState,
                  cx: number, cy: number): void {
  const progress = s.cues.ringProgress(s.serverNowMs);
  if (progress === null) return;
  const rMax = 150;
  const rMin = 62;
  const r = rMax - (rMax - rMin) * progress;
  ctx.beginPath();
  ctx.arc(cx, cy, r, 0, Math.PI * 2);
  ctx.strokeStyle = progress > 0.92 ? "#ffe08a" : "#f2b705";
  ctx.lineWidth = progress > 0.92 ? 7 : 4;
  ctx.stroke();
}

function drawTomato(ctx: CanvasRenderingContext2D, cx: number, cy: number,
                    intensity: number): void {
  // squash flattens vertically and widens as the hold ramps up
  const base = 55;
  const rx = base * (1 + 0.45 * intensity);
  const ry = base * (1 - 0.55 * intensity);
  ctx.beginPath();
  ctx.ellipse(cx, cy, rx, ry, 0, 0, Math.PI * 2);
  const grad = ctx.createRadialGradient(cx - rx / 3, cy - ry / 3, 8, cx, cy, rx);
  grad.addColorStop(0, TOMATO);
  grad.addColorStop(1, TOMATO_DARK);
  ctx.fillStyle = grad;
  ctx.fill();
  ctx.fillStyle = STEM;
  ctx.beginPath();
  ctx.ellipse(cx, cy - ry, 12, 6 + 3 * (1 - intensity), 0, 0, Math.PI * 2);
  ctx.fill();
}

function drawCans(ctx: CanvasRenderingContext2D, s: RenderState,
                  w: number, h: number): void {
  // most recent blocks slide in from the right, fill equals sync score
  const canW = 46;
  const canH = 64;
  const gap = 14;
  const maxCans = Math.max(1, Math.floor((w - 40) / (canW + gap)));
  const cans = s.view.cans.slice(-maxCans);
  const y = h - canH - 18;
  let x = w - 20 - canW;
  for (let i = cans.length - 1; i >= 0; i--) {
    const can = cans[i];
    if (can === undefined) continue;
    ctx.fillStyle = CAN;
    ctx.fillRect(x, y, canW, canH);
    const fillH = canH * Math.max(0, Math.min(1, can.sync));
    ctx.fillStyle = CAN_FILL;
    ctx.fillRect(x, y + canH - fillH, canW, fillH);
    ctx.strokeStyle = "#5c6670";
    ctx.lineWidth = 2;
    ctx.strokeRect(x, y, canW, canH);
    ctx.fillStyle = "#2b2f33";
    ctx.font = "11px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(`${can.hits}/${can.beats}`, x + canW / 2, y + canH + 13);
    x -= canW + gap;
  }
}

function drawGauge(ctx: CanvasRenderingContext2D, s: RenderState,
                   w: number, h: number): void {
  const gw = 16;
  const gh = h * 0.55;
  const x = w - 34;
  const y = h * 0.08;
  ctx.strokeStyle = "#5c6670";
  ctx.lineWidth = 2;
  ctx.strokeRect(x, y, gw, gh);
  const stress = s.view.stress;
  if (stress === null) return;
  const level = Math.max(0, Math.min(1, stress));
  const fillH = gh * level;
  ctx.fillStyle = level > 0.66 ? "#d8433b" : level > 0.33 ? "#f2b705" : "#63a24f";
  ctx.fillRect(x, y + gh - fillH, gw, fillH);
  ctx.fillStyle = "#2b2f33";
  ctx.font = "11px system-ui, sans-serif";
  ctx.textAlign = "center";
  ctx.fillText(stress.toFixed(2), x + gw / 2, y + gh + 14);
}
