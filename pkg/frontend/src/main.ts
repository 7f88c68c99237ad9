/**
 * Bootstrap: wire the socket, input mapper, cue schedule, and view state
 * to the DOM. One RAF render loop, one 33 ms input tick, network receive
 * as a callback; all three share the same view objects.
 */

import { CueSchedule } from "./cues.js";
import { HoldInput, TICK_MS } from "./input.js";
import { BeatPayload, Frame } from "./protocol.js";
import { drawFrame } from "./render.js";
import { SessionView } from "./view.js";
import { SessionSocket } from "./wire.js";

const canvas = document.getElementById("game") as HTMLCanvasElement;
const ctx = canvas.getContext("2d") as CanvasRenderingContext2D;
const statusEl = document.getElementById("status") as HTMLElement;
const phaseEl = document.getElementById("phase") as HTMLElement;
const syncEl = document.getElementById("sync") as HTMLElement;
const toastEl = document.getElementById("toast") as HTMLElement;
const summaryEl = document.getElementById("summary") as HTMLElement;

const view = new SessionView();
const cues = new CueSchedule();

const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
const socket = new SessionSocket(wsUrl, {});

const input = new HoldInput(sample => {
  if (view.phase === "active" || view.phase === "cooldown") {
    socket.sendSqueeze(sample.intensity, socket.clock.toServer(sample.t_ms));
  }
});

socket.onFrame = (frame: Frame) => {
  if (frame.type === "beat") {
    cues.onBeat(frame.payload as unknown as BeatPayload);
  } else if (frame.type === "bye") {
    socket.stop();
  }
  view.applyFrame(frame, performance.now());
};

socket.onStatus = state => {
  view.connection = state;
  statusEl.textContent =
    state === "open" ? "" :
    state === "reconnecting" ? "connection lost, retrying" :
    state === "closed" ? "disconnected" : "connecting";
  statusEl.classList.toggle("visible", state !== "open");
};

// --- input events ---------------------------------------------------------

function press(): void {
  input.press(performance.now());
}

function release(): void {
  input.release(performance.now());
}

window.addEventListener("keydown", ev => {
  if (ev.code === "Space" && !ev.repeat) {
    ev.preventDefault();
    press();
  }
});
window.addEventListener("keyup", ev => {
  if (ev.code === "Space") release();
});
canvas.addEventListener("pointerdown", press);
window.addEventListener("pointerup", release);
document.addEventListener("visibilitychange", () => {
  input.setHidden(document.hidden, performance.now());
});

setInterval(() => input.tick(performance.now()), TICK_MS);

// --- render loop ----------------------------------------------------------

function renderLoop(): void {
  const localNow = performance.now();
  const serverNow = socket.clock.ready()
    ? socket.clock.toServer(localNow)
    : view.serverTMs;
  cues.prune(serverNow);
  view.promoteToast(localNow);

  drawFrame(ctx, { view, cues, serverNowMs: serverNow,
                   intensity: input.current() });

  phaseEl.textContent = view.phase ?? "";
  syncEl.textContent = view.lastSync === null
    ? "" : `sync ${view.lastSync.toFixed(2)}`;
  toastEl.textContent = view.toast?.text ?? "";
  toastEl.classList.toggle("visible", view.toast !== null);

  if (view.phase === "ended") {
    const s = view.summary;
    summaryEl.textContent = s === null ? "session ended" :
      `session ended. sync ${Number(s["sync"] ?? 0).toFixed(2)}, ` +
      `${s["hits"] ?? 0}/${s["total_beats"] ?? 0} beats, ` +
      `${view.droppedSqueezes} dropped squeezes`;
    summaryEl.classList.add("visible");
  } else if (view.lastError !== null) {
    summaryEl.textContent = `error: ${view.lastError}`;
    summaryEl.classList.add("visible");
  } else {
    summaryEl.classList.remove("visible");
  }

  requestAnimationFrame(renderLoop);
}

socket.connect();
requestAnimationFrame(renderLoop);
