"""Client for OpenAI-compatible chat-completion endpoints.

Besides the live HTTP path this module provides record/replay cassettes so a
network-backed run can be replayed byte-identically offline, plus token and
cost accounting. Credentials come from environment variables and never appear
in cassettes, logs, or error messages.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import AuthError, CassetteMismatchError, ConfigurationError, TransportError

# Per-month token budget observed for a five-agent simulation; used only for
# cost estimates, never for enforcement.
EST_INPUT_TOKENS_PER_MONTH = 40_000
EST_OUTPUT_TOKENS_PER_MONTH = 10_000


@dataclass(frozen=True)
class ModelRegistryEntry:
    key: str
    api_identifier: str
    base_url: str = "https://api.openai.com/v1"
    input_per_mtokens: float | None = None
    output_per_mtokens: float | None = None
    max_parallel: int = 4
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        for price in (self.input_per_mtokens, self.output_per_mtokens):
            if price is not None and price < 0:
                raise ConfigurationError("pricing must be nonnegative")
        if self.max_parallel < 1:
            raise ConfigurationError("max_parallel must be positive")

    @property
    def priced(self) -> bool:
        return self.input_per_mtokens is not None and self.output_per_mtokens is not None


def _calibrated(cost_per_run: float) -> float:
    # Symmetric per-MToken price chosen so a 12-month run at the 40k/10k
    # monthly token budget reproduces the observed average cost per run.
    months = 12
    tokens = months * (EST_INPUT_TOKENS_PER_MONTH + EST_OUTPUT_TOKENS_PER_MONTH)
    return cost_per_run * 1e6 / tokens


def default_registry() -> dict[str, ModelRegistryEntry]:
    """Registry seeded with the models the harness is normally run against.

    Prices are calibrated to observed average per-run API costs rather than
    list prices. Open-weight models default to a local OpenAI-compatible
    server and carry no pricing.
    """
    local = "http://localhost:8000/v1"
    entries = [
        ModelRegistryEntry("gpt-3.5", "gpt-3.5-turbo-0125",
                           input_per_mtokens=_calibrated(0.42),
                           output_per_mtokens=_calibrated(0.42)),
        ModelRegistryEntry("gpt-4-turbo", "gpt-4-turbo-2024-04-09",
                           input_per_mtokens=_calibrated(6.60),
                           output_per_mtokens=_calibrated(6.60)),
        ModelRegistryEntry("gpt-4o", "gpt-4o-2024-05-13",
                           input_per_mtokens=_calibrated(2.40),
                           output_per_mtokens=_calibrated(2.40)),
        ModelRegistryEntry("gpt-4o-mini", "gpt-4o-mini-2024-07-18",
                           input_per_mtokens=_calibrated(0.14),
                           output_per_mtokens=_calibrated(0.14)),
        ModelRegistryEntry("deepseek-v3", "deepseek-chat",
                           base_url="https://api.deepseek.com/v1",
                           input_per_mtokens=_calibrated(0.08),
                           output_per_mtokens=_calibrated(0.08),
                           api_key_env="DEEPSEEK_API_KEY"),
        ModelRegistryEntry("llama-3-8b", "meta-llama/Meta-Llama-3-8B-Instruct", base_url=local),
        ModelRegistryEntry("llama-3-70b", "meta-llama/Meta-Llama-3-70B-Instruct", base_url=local),
        ModelRegistryEntry("llama-2-7b", "meta-llama/Llama-2-7b-chat-hf", base_url=local),
        ModelRegistryEntry("llama-2-13b", "meta-llama/Llama-2-13b-chat-hf", base_url=local),
        ModelRegistryEntry("mistral-7b", "mistralai/Mistral-7B-Instruct-v0.2", base_url=local),
        ModelRegistryEntry("qwen2.5-0.5b", "Qwen/Qwen2.5-0.5B-Instruct", base_url=local),
        ModelRegistryEntry("qwen2.5-7b", "Qwen/Qwen2.5-7B-Instruct", base_url=local),
    ]
    return {e.key: e for e in entries}


@dataclass
class UsageMeter:
    """Token counters per model; the dollar figure is always recomputed from
    the counters so it cannot drift."""

    tokens: dict[str, list[int]] = field(default_factory=dict)  # key -> [in, out]
    prices: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)
    request_count: int = 0

    def add(self, entry: ModelRegistryEntry, input_tokens: int, output_tokens: int):
        tally = self.tokens.setdefault(entry.key, [0, 0])
        tally[0] += input_tokens
        tally[1] += output_tokens
        self.prices[entry.key] = (entry.input_per_mtokens, entry.output_per_mtokens)
        self.request_count += 1

    @property
    def input_tokens(self) -> int:
        return sum(t[0] for t in self.tokens.values())

    @property
    def output_tokens(self) -> int:
        return sum(t[1] for t in self.tokens.values())

    @property
    def estimated_cost_usd(self) -> float:
        total = 0.0
        for key, (tin, tout) in self.tokens.items():
            pin, pout = self.prices.get(key, (None, None))
            if pin is not None:
                total += tin * pin / 1e6
            if pout is not None:
                total += tout * pout / 1e6
        return total

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "request_count": self.request_count,
            "estimated_cost_usd": self.estimated_cost_usd,
        }


class CassetteMode(Enum):
    RECORD = "record"
    REPLAY = "replay"
    PASSTHROUGH = "passthrough"


def request_digest(model_key: str, messages: list[dict], params: dict) -> str:
    """Digest over the semantic request content. Timestamps, credentials and
    endpoint URLs are excluded so cassettes survive re-runs."""
    canonical = json.dumps(
        {"model": model_key, "messages": messages, "params": params},
        sort_keys=True, separators=(",", ":"), ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Cassette:
    """Ordered JSON-lines recording of request/response pairs."""

    def __init__(self, path: str | Path, mode: CassetteMode):
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._cursor = 0
        self.entries: list[dict] = []
        if mode is CassetteMode.REPLAY:
            if not self.path.exists():
                raise ConfigurationError(f"cassette not found: {self.path}")
            with self.path.open(encoding="utf-8") as fh:
                self.entries = [json.loads(line) for line in fh if line.strip()]
        elif mode is CassetteMode.RECORD:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def record(self, digest: str, request: dict, response: dict):
        entry = {"digest": digest, "request": request, "response": response}
        with self._lock:
            self.entries.append(entry)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")

    def replay(self, digest: str, request: dict) -> dict:
        with self._lock:
            if self._cursor >= len(self.entries):
                raise CassetteMismatchError(
                    f"cassette exhausted at request {self._cursor + 1}"
                )
            entry = self.entries[self._cursor]
            self._cursor += 1
        if entry["digest"] != digest:
            field_name = self._divergent_field(entry["request"], request)
            raise CassetteMismatchError(
                f"request {self._cursor} diverged from cassette in field "
                f"{field_name!r} (expected digest {entry['digest'][:12]}..., "
                f"got {digest[:12]}...)"
            )
        return entry["response"]

    @staticmethod
    def _divergent_field(recorded: dict, issued: dict) -> str:
        for name in ("model", "params", "messages"):
            if recorded.get(name) != issued.get(name):
                return name
        return "unknown"


def _default_transport(url: str, headers: dict, payload: dict, timeout: float):
    import requests

    resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


DEFAULT_SAMPLING = {"temperature": 1.0}


class Gateway:
    """Chat-completion client with retries, metering, and cassette support."""

    def __init__(
        self,
        registry: dict[str, ModelRegistryEntry] | None = None,
        cassette: Cassette | None = None,
        transport=None,
        sleep=time.sleep,
        timeout: float = 120.0,
        max_attempts: int = 3,
    ):
        self.registry = registry if registry is not None else default_registry()
        self.cassette = cassette
        self.transport = transport or _default_transport
        self.sleep = sleep
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.meter = UsageMeter()
        self._meter_lock = threading.Lock()
        self._semaphores: dict[str, threading.Semaphore] = {}
        self._sem_lock = threading.Lock()

    def entry(self, model_key: str) -> ModelRegistryEntry:
        if model_key not in self.registry:
            raise ConfigurationError(f"model key not registered: {model_key}")
        return self.registry[model_key]

    def complete(
        self,
        model_key: str,
        messages: list[dict],
        params: dict | None = None,
    ) -> tuple[str, dict]:
        """Issue one chat completion; returns (assistant text, usage dict)."""
        entry = self.entry(model_key)
        params = dict(DEFAULT_SAMPLING if params is None else params)
        digest = request_digest(model_key, messages, params)
        request = {"model": model_key, "messages": messages, "params": params}

        if self.cassette is not None and self.cassette.mode is CassetteMode.REPLAY:
            body = self.cassette.replay(digest, request)
        else:
            body = self._live_call(entry, messages, params)
            if self.cassette is not None and self.cassette.mode is CassetteMode.RECORD:
                self.cassette.record(digest, request, body)

        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion body from {model_key}") from exc
        usage = body.get("usage", {})
        in_tok = int(usage.get("prompt_tokens", 0))
        out_tok = int(usage.get("completion_tokens", 0))
        with self._meter_lock:
            self.meter.add(entry, in_tok, out_tok)
        return text, {"prompt_tokens": in_tok, "completion_tokens": out_tok}

    def _semaphore(self, entry: ModelRegistryEntry) -> threading.Semaphore:
        with self._sem_lock:
            if entry.key not in self._semaphores:
                self._semaphores[entry.key] = threading.Semaphore(entry.max_parallel)
            return self._semaphores[entry.key]

    def _live_call(self, entry: ModelRegistryEntry, messages: list[dict], params: dict) -> dict:
        url = entry.base_url.rstrip("/") + "/chat/completions"
        api_key = os.environ.get(entry.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {"model": entry.api_identifier, "messages": messages, **params}

        last_error = "no attempt made"
        with self._semaphore(entry):
            for attempt in range(self.max_attempts):
                try:
                    status, body = self.transport(url, headers, payload, self.timeout)
                except Exception as exc:  # noqa: BLE001 - network errors vary by transport
                    last_error = type(exc).__name__
                    status = None
                else:
                    if status in (401, 403):
                        raise AuthError(
                            f"authentication failed for model {entry.key!r} "
                            f"(credential read from ${entry.api_key_env})"
                        )
                    if status is not None and status < 400:
                        return body
                    last_error = f"HTTP {status}"
                if attempt < self.max_attempts - 1:
                    self.sleep(2 ** attempt)
        raise TransportError(
            f"request to {entry.key!r} failed after {self.max_attempts} attempts: {last_error}"
        )

    def estimate_run_cost(self, model_key: str, months: int) -> float | None:
        """Dollar estimate for a run of the given length, using the fixed
        monthly token budget. Returns None for unpriced models."""
        entry = self.entry(model_key)
        if not entry.priced:
            return None
        return months * (
            EST_INPUT_TOKENS_PER_MONTH * entry.input_per_mtokens
            + EST_OUTPUT_TOKENS_PER_MONTH * entry.output_per_mtokens
        ) / 1e6
