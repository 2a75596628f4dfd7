import http.server
import json
import os
import threading

import pytest

from commonsim.errors import (
    AuthError,
    CassetteMismatchError,
    ConfigurationError,
    TransportError,
)
from commonsim.gateway import (
    Cassette,
    CassetteMode,
    Gateway,
    ModelRegistryEntry,
    UsageMeter,
    default_registry,
    request_digest,
)

from conftest import ForbiddenTransport, ScriptedTransport

MESSAGES = [{"role": "user", "content": "hello"}]


def make_gateway(transport, **kwargs):
    return Gateway(transport=transport, sleep=lambda s: None, **kwargs)


class TestRegistry:
    def test_known_keys_present(self):
        registry = default_registry()
        for key in ("gpt-4o", "gpt-4o-mini", "gpt-4-turbo", "gpt-3.5", "deepseek-v3"):
            assert registry[key].priced

    def test_open_weight_models_unpriced(self):
        registry = default_registry()
        assert not registry["llama-3-8b"].priced
        assert registry["llama-3-8b"].base_url.startswith("http://localhost")

    def test_unknown_key_rejected(self):
        gw = make_gateway(ForbiddenTransport())
        with pytest.raises(ConfigurationError):
            gw.entry("gpt-99")

    def test_negative_price_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelRegistryEntry("x", "x", input_per_mtokens=-1, output_per_mtokens=1)


class TestCompletion:
    def test_text_and_usage_returned(self):
        gw = make_gateway(ScriptedTransport(["hi there"]))
        text, usage = gw.complete("gpt-4o-mini", MESSAGES)
        assert text == "hi there"
        assert usage == {"prompt_tokens": 100, "completion_tokens": 25}

    def test_meter_accumulates(self):
        gw = make_gateway(ScriptedTransport(["a", "b"]))
        gw.complete("gpt-4o-mini", MESSAGES)
        gw.complete("gpt-4o", MESSAGES)
        assert gw.meter.input_tokens == 200
        assert gw.meter.output_tokens == 50
        assert gw.meter.request_count == 2

    def test_malformed_body_is_transport_error(self):
        def transport(url, headers, payload, timeout):
            return 200, {"nonsense": True}

        gw = make_gateway(transport)
        with pytest.raises(TransportError):
            gw.complete("gpt-4o-mini", MESSAGES)


class TestRetries:
    def test_retries_on_server_error_then_succeeds(self):
        calls = []
        ok = {"choices": [{"message": {"content": "done"}}], "usage": {}}

        def transport(url, headers, payload, timeout):
            calls.append(1)
            return (500, {}) if len(calls) < 3 else (200, ok)

        slept = []
        gw = Gateway(transport=transport, sleep=slept.append)
        text, _ = gw.complete("gpt-4o-mini", MESSAGES)
        assert text == "done"
        assert len(calls) == 3
        assert slept == [1, 2]  # exponential backoff between attempts

    def test_exhausted_retries_raise_transport_error(self):
        def transport(url, headers, payload, timeout):
            return 429, {}

        gw = make_gateway(transport)
        with pytest.raises(TransportError, match="HTTP 429"):
            gw.complete("gpt-4o-mini", MESSAGES)

    def test_network_exception_is_retried(self):
        calls = []
        ok = {"choices": [{"message": {"content": "done"}}], "usage": {}}

        def transport(url, headers, payload, timeout):
            calls.append(1)
            if len(calls) == 1:
                raise OSError("connection reset")
            return 200, ok

        gw = make_gateway(transport)
        text, _ = gw.complete("gpt-4o-mini", MESSAGES)
        assert text == "done"
        assert len(calls) == 2


class TestAuthRedaction:
    def test_auth_error_never_contains_credential(self, monkeypatch):
        secret = "sk-super-secret-credential-12345"
        monkeypatch.setenv("OPENAI_API_KEY", secret)

        def transport(url, headers, payload, timeout):
            return 401, {"error": {"message": "bad key"}}

        gw = make_gateway(transport)
        with pytest.raises(AuthError) as err:
            gw.complete("gpt-4o-mini", MESSAGES)
        assert secret not in str(err.value)
        assert "OPENAI_API_KEY" in str(err.value)  # tells the operator where to look

    def test_auth_failure_does_not_retry(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "sk-x")
        calls = []

        def transport(url, headers, payload, timeout):
            calls.append(1)
            return 403, {}

        gw = make_gateway(transport)
        with pytest.raises(AuthError):
            gw.complete("gpt-4o-mini", MESSAGES)
        assert len(calls) == 1


class TestDigest:
    def test_digest_stable_under_key_order(self):
        a = request_digest("m", MESSAGES, {"temperature": 1.0, "top_p": 1.0})
        b = request_digest("m", MESSAGES, {"top_p": 1.0, "temperature": 1.0})
        assert a == b

    def test_digest_sensitive_to_content(self):
        a = request_digest("m", MESSAGES, {})
        b = request_digest("m", [{"role": "user", "content": "hello!"}], {})
        assert a != b


class TestCassette:
    def test_record_then_replay_round_trip(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rec = Cassette(path, CassetteMode.RECORD)
        gw = make_gateway(ScriptedTransport(["first", "second"]), cassette=rec)
        gw.complete("gpt-4o-mini", MESSAGES)
        gw.complete("gpt-4o-mini", MESSAGES + [{"role": "user", "content": "more"}])

        replay = Cassette(path, CassetteMode.REPLAY)
        gw2 = make_gateway(ForbiddenTransport(), cassette=replay)
        text1, _ = gw2.complete("gpt-4o-mini", MESSAGES)
        text2, _ = gw2.complete("gpt-4o-mini", MESSAGES + [{"role": "user", "content": "more"}])
        assert (text1, text2) == ("first", "second")

    def test_cassette_contains_no_credential(self, tmp_path, monkeypatch):
        secret = "sk-cassette-secret-999"
        monkeypatch.setenv("OPENAI_API_KEY", secret)
        path = tmp_path / "c.jsonl"
        gw = make_gateway(ScriptedTransport(["ok"]), cassette=Cassette(path, CassetteMode.RECORD))
        gw.complete("gpt-4o-mini", MESSAGES)
        assert secret not in path.read_text()

    def test_divergent_messages_named(self, tmp_path):
        path = tmp_path / "c.jsonl"
        gw = make_gateway(ScriptedTransport(["ok"]), cassette=Cassette(path, CassetteMode.RECORD))
        gw.complete("gpt-4o-mini", MESSAGES)

        gw2 = make_gateway(ForbiddenTransport(), cassette=Cassette(path, CassetteMode.REPLAY))
        with pytest.raises(CassetteMismatchError, match="'messages'"):
            gw2.complete("gpt-4o-mini", [{"role": "user", "content": "different"}])

    def test_divergent_model_named(self, tmp_path):
        path = tmp_path / "c.jsonl"
        gw = make_gateway(ScriptedTransport(["ok"]), cassette=Cassette(path, CassetteMode.RECORD))
        gw.complete("gpt-4o-mini", MESSAGES)

        gw2 = make_gateway(ForbiddenTransport(), cassette=Cassette(path, CassetteMode.REPLAY))
        with pytest.raises(CassetteMismatchError, match="'model'"):
            gw2.complete("gpt-4o", MESSAGES)

    def test_exhausted_cassette(self, tmp_path):
        path = tmp_path / "c.jsonl"
        gw = make_gateway(ScriptedTransport(["ok"]), cassette=Cassette(path, CassetteMode.RECORD))
        gw.complete("gpt-4o-mini", MESSAGES)

        gw2 = make_gateway(ForbiddenTransport(), cassette=Cassette(path, CassetteMode.REPLAY))
        gw2.complete("gpt-4o-mini", MESSAGES)
        with pytest.raises(CassetteMismatchError, match="exhausted"):
            gw2.complete("gpt-4o-mini", MESSAGES)

    def test_missing_replay_cassette(self, tmp_path):
        with pytest.raises(ConfigurationError):
            Cassette(tmp_path / "absent.jsonl", CassetteMode.REPLAY)


class TestUsageMeter:
    def test_cost_recomputed_from_counters(self):
        registry = default_registry()
        meter = UsageMeter()
        entry = registry["gpt-4o"]
        meter.add(entry, 480_000, 120_000)
        # A full-length run's worth of tokens must price at the calibrated
        # per-run cost for this model.
        assert meter.estimated_cost_usd == pytest.approx(2.40)

    def test_unpriced_models_contribute_zero(self):
        registry = default_registry()
        meter = UsageMeter()
        meter.add(registry["llama-3-8b"], 1_000_000, 1_000_000)
        assert meter.estimated_cost_usd == 0.0

    def test_additivity_across_models(self):
        registry = default_registry()
        meter = UsageMeter()
        meter.add(registry["gpt-4o"], 480_000, 120_000)
        meter.add(registry["gpt-4o-mini"], 480_000, 120_000)
        assert meter.estimated_cost_usd == pytest.approx(2.40 + 0.14)
        assert meter.to_dict()["request_count"] == 2


class TestCostEstimates:
    CASES = {
        "deepseek-v3": 0.08,
        "gpt-3.5": 0.42,
        "gpt-4o-mini": 0.14,
        "gpt-4o": 2.40,
        "gpt-4-turbo": 6.60,
    }

    @pytest.mark.parametrize("key,expected", sorted(CASES.items()))
    def test_twelve_month_estimates(self, key, expected):
        gw = make_gateway(ForbiddenTransport())
        assert gw.estimate_run_cost(key, 12) == pytest.approx(expected, abs=0.01)

    def test_estimate_scales_with_months(self):
        gw = make_gateway(ForbiddenTransport())
        assert gw.estimate_run_cost("gpt-4o", 6) == pytest.approx(1.20, abs=0.01)

    def test_unpriced_model_returns_none(self):
        gw = make_gateway(ForbiddenTransport())
        assert gw.estimate_run_cost("mistral-7b", 12) is None


class _StubHandler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        body = {
            "choices": [{"message": {"content": f"echo:{payload['model']}"}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 3},
        }
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def test_default_transport_against_local_stub(tmp_path):
    server = http.server.HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        port = server.server_address[1]
        registry = {
            "stub": ModelRegistryEntry(
                "stub", "stub-model", base_url=f"http://127.0.0.1:{port}/v1"
            )
        }
        cassette = Cassette(tmp_path / "c.jsonl", CassetteMode.RECORD)
        gw = Gateway(registry=registry, cassette=cassette, sleep=lambda s: None)
        text, usage = gw.complete("stub", MESSAGES)
        assert text == "echo:stub-model"
        assert usage == {"prompt_tokens": 7, "completion_tokens": 3}

        replay = Gateway(
            registry=registry,
            cassette=Cassette(tmp_path / "c.jsonl", CassetteMode.REPLAY),
            transport=ForbiddenTransport(),
            sleep=lambda s: None,
        )
        text2, _ = replay.complete("stub", MESSAGES)
        assert text2 == text
    finally:
        server.shutdown()
        server.server_close()
