"""Guidance messages: tone rules, deterministic templates, and an optional
remote chat-completion generator that always degrades to a template.

The remote path can fail, hang, or return garbage without the session ever
noticing more than a template-sourced message.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import httpx

TONE_SUPPORTIVE = "supportive"
TONE_NEUTRAL = "neutral"
TONE_MOTIVATIONAL = "motivational"
TONES = (TONE_SUPPORTIVE, TONE_NEUTRAL, TONE_MOTIVATIONAL)

MAX_MESSAGE_CHARS = 140
DEFAULT_MIN_INTERVAL_S = 10.0
DEFAULT_TIMEOUT_S = 2.0

ENV_LLM_URL = "NIENIE_LLM_URL"
ENV_LLM_KEY = "NIENIE_LLM_KEY"

# Tone rule thresholds: steady-and-calming sessions get support, badly
# desynchronized ones get a push, everything else stays neutral.
SYNC_SUPPORTIVE = 0.7
SYNC_MOTIVATIONAL = 0.4

TEMPLATES = {
    TONE_SUPPORTIVE: [
        "You're in step with the beat. Keep this steady rhythm going.",
        "Beautiful pacing. Let each squeeze stay soft and even.",
        "That steady rhythm is working. Ease into the next cycle.",
    ],
    TONE_NEUTRAL: [
        "Settle in and follow the cue.",
        "Match your squeeze to the ring and let the pace guide you.",
        "Stay with the beat as it gently stretches out.",
    ],
    TONE_MOTIVATIONAL: [
        "Try slowing down a little until you find the rhythm again.",
        "Lost the beat? Ease off, slow down, and rejoin on the next cue.",
        "No rush. Slow your hands and let the rhythm come back to you.",
    ],
}


@dataclass
class GuidanceContext:
    sync_score_recent: float = 0.0
    stress_trend: float = 0.0          # slope of smoothed score per second, last 60 s
    mean_peak_intensity: float = 0.0
    seconds_since_last_message: float | None = None  # None before the first message


@dataclass
class GuidanceMessage:
    tone: str
    text: str
    source: str  # "template" | "remote"
    created_at_ms: int = 0


@dataclass
class RemoteConfig:
    url: str
    api_key: str = ""
    model: str = "guidance-default"
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_tokens: int = 60

    @staticmethod
    def resolve(file_cfg: dict | None = None) -> "RemoteConfig | None":
        """Environment variables override the flat config file; no URL from
        either source means the remote generator stays disabled."""
        cfg = file_cfg or {}
        url = os.environ.get(ENV_LLM_URL) or cfg.get("llm_url")
        if not url:
            return None
        return RemoteConfig(
            url=url,
            api_key=os.environ.get(ENV_LLM_KEY) or cfg.get("llm_key", ""),
            model=cfg.get("llm_model", "guidance-default"),
            timeout_s=float(cfg.get("llm_timeout_s", DEFAULT_TIMEOUT_S)))


def select_tone(ctx: GuidanceContext) -> str:
    """Fixed rule order: supportive, then motivational, then neutral."""
    if ctx.sync_score_recent >= SYNC_SUPPORTIVE and ctx.stress_trend <= 0:
        return TONE_SUPPORTIVE
    if ctx.sync_score_recent < SYNC_MOTIVATIONAL:
        return TONE_MOTIVATIONAL
    return TONE_NEUTRAL


def render_template(tone: str, ctx: GuidanceContext, seed: int = 0,
                    created_at_ms: int = 0) -> GuidanceMessage:
    """Deterministic variant pick per (tone, seed)."""
    if tone not in TEMPLATES:
        raise ValueError(f"unknown tone {tone!r}")
    variants = TEMPLATES[tone]
    text = variants[int(seed) % len(variants)]
    return GuidanceMessage(tone=tone, text=text, source="template",
                           created_at_ms=created_at_ms)


def sanitize(text) -> str | None:
    """First line only, control characters stripped, truncated at a word
    boundary under the length cap. None when nothing survives."""
    if not isinstance(text, str):
        return None
    line = text.strip().splitlines()[0] if text.strip() else ""
    line = "".join(ch for ch in line if ord(ch) >= 32 and ord(ch) != 127).strip()
    if len(line) > MAX_MESSAGE_CHARS:
        cut = line.rfind(" ", 0, MAX_MESSAGE_CHARS + 1)
        if cut <= 0:
            cut = MAX_MESSAGE_CHARS
        line = line[:cut].rstrip()
    return line or None


def build_prompt(tone: str, ctx: GuidanceContext) -> list:
    """Chat messages embedding only derived aggregates, never raw samples."""
    system = (
        "You are the in-game voice of a rhythm biofeedback exercise. "
        "Reply with one short line (under 140 characters) of "
        f"{tone} coaching about the player's squeeze rhythm. No emoji, no lists.")
    user = (
        f"Recent rhythm sync score: {ctx.sync_score_recent:.2f} (0-1). "
        f"Stress trend over the last minute: "
        f"{'falling' if ctx.stress_trend < 0 else 'rising' if ctx.stress_trend > 0 else 'flat'}"
        f" ({ctx.stress_trend:+.4f}/s). "
        f"Mean squeeze intensity: {ctx.mean_peak_intensity:.2f}.")
    return [{"role": "system", "content": system},
            {"role": "user", "content": user}]


def generate_remote(ctx: GuidanceContext, cfg: RemoteConfig,
                    fallback_seed: int = 0, created_at_ms: int = 0) -> GuidanceMessage:
    """Ask the remote endpoint for a message; any failure, timeout, or
    unusable reply falls back to the template table."""
    tone = select_tone(ctx)
    try:
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        body = {"model": cfg.model, "messages": build_prompt(tone, ctx),
                "max_tokens": cfg.max_tokens}
        resp = httpx.post(cfg.url, json=body, headers=headers, timeout=cfg.timeout_s)
        resp.raise_for_status()
        payload = resp.json()
        content = payload["choices"][0]["message"]["content"]
        text = sanitize(content)
        if text:
            return GuidanceMessage(tone=tone, text=text, source="remote",
                                   created_at_ms=created_at_ms)
    except Exception:
        pass  # every failure path degrades to the template below
    return render_template(tone, ctx, seed=fallback_seed, created_at_ms=created_at_ms)


def gate_rate(ctx: GuidanceContext, min_interval_s: float = DEFAULT_MIN_INTERVAL_S) -> bool:
    """True when enough quiet time has passed; the first message always may go."""
    if ctx.seconds_since_last_message is None:
        return True
    return ctx.seconds_since_last_message >= min_interval_s
