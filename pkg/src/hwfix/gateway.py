"""Completion requests against an HTTP code-completion endpoint.

Three modes share one entry point, :meth:`Gateway.complete`:

* LIVE sends requests to ``$MODEL_ENDPOINT`` with ``$MODEL_API_KEY``;
* RECORD does the same and appends every batch to a JSON-lines cassette;
* REPLAY answers only from the cassette and never opens a connection.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import httpx
from filelock import FileLock

from .errors import (AuthMissing, CassetteMiss, ConfigError, EndpointError, RateLimited,
                     RetriesExhausted)

ENV_ENDPOINT = "MODEL_ENDPOINT"
ENV_API_KEY = "MODEL_API_KEY"
MAX_STOP = 4
RATE_LIMIT_WAIT_S = 60.0


class GatewayMode(str, enum.Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


class FinishReason(str, enum.Enum):
    STOP = "STOP"
    LENGTH = "LENGTH"
    OTHER = "OTHER"

    @classmethod
    def from_api(cls, value) -> "FinishReason":
        v = str(value or "").lower()
        if v == "stop":
            return cls.STOP
        if v == "length":
            return cls.LENGTH
        return cls.OTHER


@dataclass(frozen=True)
class CompletionParams:
    temperature: float
    top_p: float = 1.0
    n: int = 20
    max_tokens: int = 200
    stop: tuple[str, ...] = ("endmodule",)
    model_name: str = "code-davinci-002"

    def __post_init__(self):
        object.__setattr__(self, "stop", tuple(self.stop))
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "top_p", float(self.top_p))
        if not 0.0 <= self.temperature <= 1.0:
            raise ConfigError(f"temperature must be in [0, 1], got {self.temperature}")
        if self.n < 1 or self.max_tokens < 1:
            raise ConfigError("n and max_tokens must be >= 1")
        if not self.stop or "endmodule" not in self.stop:
            raise ConfigError("stop list must contain 'endmodule'")
        if len(self.stop) > MAX_STOP:
            raise ConfigError(f"at most {MAX_STOP} stop strings are allowed, got {len(self.stop)}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["stop"] = list(self.stop)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CompletionParams":
        return cls(**{**d, "stop": tuple(d["stop"])})


@dataclass
class CompletionBatch:
    prompt_hash: str
    params: CompletionParams
    completions: list[str]
    finish_reasons: list[FinishReason]
    latency_ms: int = 0

    def to_json(self) -> dict:
        return {"prompt_hash": self.prompt_hash, "params": self.params.to_json(),
                "completions": list(self.completions),
                "finish_reasons": [f.value for f in self.finish_reasons],
                "latency_ms": self.latency_ms}

    @classmethod
    def from_json(cls, d: dict) -> "CompletionBatch":
        return cls(d["prompt_hash"], CompletionParams.from_json(d["params"]), list(d["completions"]),
                   [FinishReason(f) for f in d["finish_reasons"]], int(d.get("latency_ms", 0)))


def prompt_hash(prompt_text: str) -> str:
    return hashlib.sha256(prompt_text.encode()).hexdigest()


def cassette_key(p_hash: str, params: CompletionParams) -> str:
    blob = json.dumps({"prompt": p_hash, "params": params.to_json()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def trim_stop(text: str, stops) -> tuple[str, bool]:
    """Cut ``text`` at the earliest stop string; True when one was found."""
    hits = [text.find(s) for s in stops if s and s in text]
    if not hits:
        return text, False
    return text[:min(hits)], True


class Cassette:
    """Append-only JSON-lines store of completion batches."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[str, dict] | None = None

    def _load(self) -> dict[str, dict]:
        if self._index is None:
            index = {}
            if self.path.exists():
                for n, line in enumerate(self.path.read_text().splitlines(), 1):
                    if not line.strip():
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ConfigError(f"{self.path}:{n}: corrupt cassette line ({exc})") from exc
                    index.setdefault(entry["key"], entry["batch"])
            self._index = index
        return self._index

    def __len__(self):
        with self._lock:
            return len(self._load())

    def get(self, key: str) -> CompletionBatch | None:
        with self._lock:
            entry = self._load().get(key)
        return CompletionBatch.from_json(entry) if entry else None

    def append(self, key: str, batch: CompletionBatch) -> None:
        line = json.dumps({"key": key, "batch": batch.to_json()}, sort_keys=True)
        with self._lock:
            index = self._load()
            if key in index:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with FileLock(str(self.path) + ".lock"):
                with self.path.open("a") as fh:
                    fh.write(line + "\n")
            index[key] = batch.to_json()


class RateLimiter:
    """Sliding one-minute request budget shared by all gateway threads."""

    def __init__(self, requests_per_minute: int = 60, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep, window_s: float = 60.0):
        if requests_per_minute <= 0:
            raise ConfigError("requests_per_minute must be > 0")
        self.rpm = requests_per_minute
        self.clock = clock
        self.sleep = sleep
        self.window = window_s
        self._sent: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a request may be sent; returns the time waited."""
        waited = 0.0
        with self._lock:
            while True:
                now = self.clock()
                while self._sent and now - self._sent[0] >= self.window:
                    self._sent.popleft()
                if len(self._sent) < self.rpm:
                    self._sent.append(now)
                    return waited
                pause = self._sent[0] + self.window - now
                self.sleep(pause)
                waited += pause

    def penalty(self, seconds: float = RATE_LIMIT_WAIT_S) -> None:
        """Wait out a provider-side rate limit."""
        self.sleep(seconds)


@dataclass
class Gateway:
    mode: GatewayMode = GatewayMode.REPLAY
    cassette: Cassette | None = None
    endpoint: str | None = None
    api_key: str | None = None
    limiter: RateLimiter = field(default_factory=RateLimiter)
    max_retries: int = 3
    max_in_flight: int = 4
    timeout_s: float = 120.0
    transport: httpx.BaseTransport | None = None

    def __post_init__(self):
        self.mode = GatewayMode(self.mode)
        if isinstance(self.cassette, (str, Path)):
            self.cassette = Cassette(self.cassette)
        if self.mode is not GatewayMode.LIVE and self.cassette is None:
            raise ConfigError(f"{self.mode.value} mode needs a cassette")
        self._slots = threading.BoundedSemaphore(self.max_in_flight)
        self._client: httpx.Client | None = None

    # -- public ---------------------------------------------------------------

    def complete(self, prompt, params: CompletionParams) -> CompletionBatch:
        text = getattr(prompt, "text", prompt)
        p_hash = prompt_hash(text)
        key = cassette_key(p_hash, params)
        if self.mode is GatewayMode.REPLAY:
            batch = self.cassette.get(key)
            if batch is None:
                raise CassetteMiss(f"no cassette entry for prompt {p_hash[:12]} with {params}")
            return batch
        if self.mode is GatewayMode.RECORD:
            cached = self.cassette.get(key)
            if cached is not None:
                return cached
        batch = self._request_batch(text, p_hash, params)
        if self.mode is GatewayMode.RECORD:
            self.cassette.append(key, batch)
        return batch

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None

    # -- transport ------------------------------------------------------------

    def _credentials(self) -> tuple[str, str]:
        endpoint = self.endpoint or os.environ.get(ENV_ENDPOINT)
        key = self.api_key or os.environ.get(ENV_API_KEY)
        if not endpoint:
            raise AuthMissing(f"set {ENV_ENDPOINT} to the completion endpoint URL")
        if not key:
            raise AuthMissing(f"set {ENV_API_KEY} to the endpoint credential")
        return endpoint, key

    def _http(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout_s, transport=self.transport)
        return self._client

    def _request_batch(self, text: str, p_hash: str, params: CompletionParams) -> CompletionBatch:
        endpoint, key = self._credentials()
        started = time.monotonic()
        try:
            choices = self._post(endpoint, key, text, params, params.n)
        except EndpointError as exc:
            if params.n > 1 and exc.status in (400, 422):
                choices = []
                for _ in range(params.n):
                    choices.extend(self._post(endpoint, key, text, params, 1))
            else:
                raise
        if len(choices) != params.n:
            raise EndpointError(f"endpoint returned {len(choices)} choices, expected {params.n}")
        completions, reasons = [], []
        for choice in choices:
            out, stopped = trim_stop(choice.get("text", ""), params.stop)
            completions.append(out)
            reasons.append(FinishReason.STOP if stopped else FinishReason.from_api(choice.get("finish_reason")))
        latency = int((time.monotonic() - started) * 1000)
        return CompletionBatch(p_hash, params, completions, reasons, latency)

    def _post(self, endpoint, key, text, params: CompletionParams, n: int) -> list[dict]:
        payload = {"model": params.model_name, "prompt": text, "temperature": params.temperature,
                   "top_p": params.top_p, "n": n, "max_tokens": params.max_tokens,
                   "stop": list(params.stop)}
        headers = {"Authorization": f"Bearer {key}"}
        for attempt in range(self.max_retries + 1):
            self.limiter.acquire()
            with self._slots:
                try:
                    resp = self._http().post(endpoint, json=payload, headers=headers)
                except httpx.HTTPError as exc:
                    raise EndpointError(f"transport error: {exc}") from exc
            if resp.status_code == 429:
                if attempt == self.max_retries:
                    break
                self.limiter.penalty()
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
            try:
                return list(resp.json()["choices"])
            except (ValueError, KeyError, TypeError) as exc:
                raise EndpointError(f"malformed response: {exc}", resp.status_code) from exc
        raise RetriesExhausted(f"still rate limited after {self.max_retries} retries")


__all__ = ["Cassette", "CompletionBatch", "CompletionParams", "FinishReason", "Gateway",
           "GatewayMode", "RateLimited", "RateLimiter", "cassette_key", "prompt_hash", "trim_stop"]
