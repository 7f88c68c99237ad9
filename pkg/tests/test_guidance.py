import time

import pytest

from helpers import HangingServer, StubLLM, closed_port_url
from nienie.guidance import (ENV_LLM_KEY, ENV_LLM_URL, MAX_MESSAGE_CHARS,
                             TEMPLATES, TONE_MOTIVATIONAL, TONE_NEUTRAL,
                             TONE_SUPPORTIVE, TONES, GuidanceContext,
                             RemoteConfig, build_prompt, gate_rate,
                             generate_remote, render_template, sanitize,
                             select_tone)


def ctx(sync=0.5, trend=0.0, **kw):
    return GuidanceContext(sync_score_recent=sync, stress_trend=trend, **kw)


# --- tone rules -----------------------------------------------------------

@pytest.mark.parametrize("sync,trend,tone", [
    (0.7, 0.0, TONE_SUPPORTIVE),     # both thresholds inclusive
    (0.9, -0.01, TONE_SUPPORTIVE),
    (0.7, 0.001, TONE_NEUTRAL),      # rising stress blocks support
    (0.69, -0.5, TONE_NEUTRAL),
    (0.4, -1.0, TONE_NEUTRAL),       # 0.4 itself is not "badly desynced"
    (0.399, 0.0, TONE_MOTIVATIONAL),
    (0.0, -1.0, TONE_MOTIVATIONAL),
    (0.5, 0.2, TONE_NEUTRAL),
])
def test_tone_rule_boundaries(sync, trend, tone):
    assert select_tone(ctx(sync, trend)) == tone


# --- template table -------------------------------------------------------

def test_template_table_shape():
    assert set(TEMPLATES) == set(TONES)
    for tone, variants in TEMPLATES.items():
        assert len(variants) >= 3
        assert len(set(variants)) == len(variants)
        for text in variants:
            assert 0 < len(text) <= MAX_MESSAGE_CHARS
            assert "\n" not in text


def test_motivational_templates_ask_to_slow_down():
    for text in TEMPLATES[TONE_MOTIVATIONAL]:
        assert "slow" in text.lower()


def test_render_template_deterministic_variant_pick():
    c = ctx()
    for seed in range(6):
        msg = render_template(TONE_NEUTRAL, c, seed=seed)
        assert msg.text == TEMPLATES[TONE_NEUTRAL][seed % 3]
        assert msg.source == "template"
        assert msg.tone == TONE_NEUTRAL


def test_render_template_unknown_tone():
    with pytest.raises(ValueError):
        render_template("bossy", ctx())


# --- sanitize -------------------------------------------------------------

def test_sanitize_passthrough():
    assert sanitize("Keep the pace steady.") == "Keep the pace steady."


def test_sanitize_first_line_only():
    assert sanitize("line one\nline two\nline three") == "line one"


def test_sanitize_strips_control_characters():
    assert sanitize("ok\x07ay\x1b then") == "okay then"
    assert sanitize("del\x7fete") == "delete"


def test_sanitize_truncates_at_word_boundary():
    out = sanitize("word " * 40)
    assert out == ("word " * 28).rstrip()
    assert len(out) <= MAX_MESSAGE_CHARS
    assert not out.endswith(" ")


def test_sanitize_hard_cut_without_spaces():
    out = sanitize("x" * 300)
    assert out == "x" * MAX_MESSAGE_CHARS


@pytest.mark.parametrize("bad", ["", "   \n  ", "\x00\x01\x02", None, 42,
                                 {"content": "hi"}])
def test_sanitize_rejects_unusable_input(bad):
    assert sanitize(bad) is None


# --- remote config --------------------------------------------------------

@pytest.fixture
def clean_env(monkeypatch):
    monkeypatch.delenv(ENV_LLM_URL, raising=False)
    monkeypatch.delenv(ENV_LLM_KEY, raising=False)
    return monkeypatch


def test_resolve_disabled_without_url(clean_env):
    assert RemoteConfig.resolve() is None
    assert RemoteConfig.resolve({"llm_model": "foo"}) is None


def test_resolve_from_file_config(clean_env):
    cfg = RemoteConfig.resolve({"llm_url": "http://file.example/v1",
                                "llm_key": "k1", "llm_model": "m1",
                                "llm_timeout_s": "0.5"})
    assert cfg.url == "http://file.example/v1"
    assert cfg.api_key == "k1"
    assert cfg.model == "m1"
    assert cfg.timeout_s == 0.5


def test_resolve_env_overrides_file(clean_env):
    clean_env.setenv(ENV_LLM_URL, "http://env.example/v1")
    clean_env.setenv(ENV_LLM_KEY, "envkey")
    cfg = RemoteConfig.resolve({"llm_url": "http://file.example/v1",
                                "llm_key": "filekey"})
    assert cfg.url == "http://env.example/v1"
    assert cfg.api_key == "envkey"


# --- prompt ---------------------------------------------------------------

def test_prompt_roles_and_aggregates():
    msgs = build_prompt(TONE_SUPPORTIVE, ctx(sync=0.62, trend=-0.003,
                                             mean_peak_intensity=0.8))
    assert [m["role"] for m in msgs] == ["system", "user"]
    assert "supportive" in msgs[0]["content"]
    assert "0.62" in msgs[1]["content"]
    assert "falling" in msgs[1]["content"]
    assert "0.80" in msgs[1]["content"]


@pytest.mark.parametrize("trend,word", [(-0.01, "falling"), (0.01, "rising"),
                                        (0.0, "flat")])
def test_prompt_trend_word(trend, word):
    assert word in build_prompt(TONE_NEUTRAL, ctx(trend=trend))[1]["content"]


# --- remote generation ----------------------------------------------------

def test_remote_happy_path_and_request_shape():
    stub = StubLLM(("text", "Lovely cadence, keep breathing with it."))
    try:
        msg = generate_remote(ctx(sync=0.8, trend=-0.01),
                              RemoteConfig(url=stub.url, api_key="sekrit"))
        assert msg.source == "remote"
        assert msg.text == "Lovely cadence, keep breathing with it."
        assert msg.tone == TONE_SUPPORTIVE
        (req,) = stub.requests
        assert req["model"] == "guidance-default"
        assert [m["role"] for m in req["messages"]] == ["system", "user"]
        assert req["max_tokens"] == 60
    finally:
        stub.close()


def test_remote_reply_is_sanitized():
    stub = StubLLM(("text", "  first line wins  \nsecond line"))
    try:
        msg = generate_remote(ctx(), RemoteConfig(url=stub.url))
        assert msg.source == "remote"
        assert msg.text == "first line wins"
    finally:
        stub.close()


@pytest.mark.parametrize("reply", [("status", 500), ("status", 404),
                                   ("garbage",), ("text", ""),
                                   ("text", "\x00\x01")])
def test_remote_failures_fall_back_to_template(reply):
    stub = StubLLM(reply)
    try:
        msg = generate_remote(ctx(sync=0.2), RemoteConfig(url=stub.url),
                              fallback_seed=1)
        assert msg.source == "template"
        assert msg.tone == TONE_MOTIVATIONAL
        assert msg.text == TEMPLATES[TONE_MOTIVATIONAL][1]
    finally:
        stub.close()


def test_remote_connection_refused_falls_back():
    msg = generate_remote(ctx(), RemoteConfig(url=closed_port_url()))
    assert msg.source == "template"
    assert msg.text in TEMPLATES[TONE_NEUTRAL]


def test_remote_hang_times_out_to_template():
    srv = HangingServer()
    try:
        t0 = time.perf_counter()
        msg = generate_remote(ctx(), RemoteConfig(url=srv.url, timeout_s=0.25))
        elapsed = time.perf_counter() - t0
    finally:
        srv.close()
    assert msg.source == "template"
    assert elapsed < 2.0


# --- rate gate ------------------------------------------------------------

def test_gate_rate_first_message_always_allowed():
    assert gate_rate(ctx(seconds_since_last_message=None)) is True


@pytest.mark.parametrize("since,allowed", [(9.99, False), (10.0, True),
                                           (60.0, True), (0.0, False)])
def test_gate_rate_min_interval(since, allowed):
    assert gate_rate(ctx(seconds_since_last_message=since)) is allowed


def test_gate_rate_custom_interval():
    assert gate_rate(ctx(seconds_since_last_message=5.0), min_interval_s=4.0)
    assert not gate_rate(ctx(seconds_since_last_message=5.0), min_interval_s=6.0)
