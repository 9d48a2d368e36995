"""Chat-completion gateway: one client surface over any OpenAI-style HTTP
endpoint plus deterministic offline backends.

Every call is journaled to an append-only calls.jsonl; a finished journal can
be reloaded as a scripted backend, so any run can be replayed byte-for-byte
without touching the original models.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import requests

from .errors import MockMiss, PermanentError, TransientError


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple  # of (role, content) pairs
    request_id: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("at least one user message required")


def make_request(model: str, request_id: str, user: str,
                 system: Optional[str] = None, temperature: float = 0.0,
                 max_tokens: int = 1024) -> ChatRequest:
    messages: List[Tuple[str, str]] = []
    if system:
        messages.append(("system", system))
    messages.append(("user", user))
    return ChatRequest(model=model, messages=tuple(messages),
                       request_id=request_id, temperature=temperature,
                       max_tokens=max_tokens)


@dataclass
class ChatResponse:
    request_id: str
    content: str
    finish_reason: str = "stop"  # stop | length | error
    usage: dict = field(default_factory=lambda: {"prompt_tokens": 0,
                                                 "completion_tokens": 0})
    latency_ms: float = 0.0
    attempts: int = 1
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.finish_reason != "error"


def request_digest(model: str, messages: Sequence[Tuple[str, str]]) -> str:
    """Content digest identifying a request, independent of request_id."""
    canonical = json.dumps(
        {"model": model,
         "messages": [{"role": r, "content": c} for r, c in messages]},
        sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ScriptedMockBackend:
    """Deterministic offline backend.

    Responses come from either an exact request-digest map or an ordered
    rule list matched against the concatenated message text (first rule
    whose needles all appear wins). Missing responses raise MockMiss so
    tests fail loudly.
    """

    def __init__(self, responses: Optional[Dict[str, str]] = None,
                 rules: Optional[List[Tuple[List[str], str]]] = None):
        self.responses = dict(responses or {})
        self.rules = [([n] if isinstance(n, str) else list(n), r)
                      for n, r in (rules or [])]

    @classmethod
    def from_file(cls, path) -> "ScriptedMockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [(r["contains"], r["response"]) for r in data.get("rules", [])]
        return cls(responses=data.get("responses", {}), rules=rules)

    def complete(self, req: ChatRequest) -> ChatResponse:
        digest = request_digest(req.model, req.messages)
        content = self.responses.get(digest)
        if content is None:
            haystack = "\n".join(c for _, c in req.messages)
            for needles, response in self.rules:
                if all(n in haystack for n in needles):
                    content = response
                    break
        if content is None:
            raise MockMiss(f"no scripted response for digest {digest[:12]}")
        return ChatResponse(request_id=req.request_id, content=content)


class CallableBackend:
    """Backend driven by a function (ChatRequest -> str); test plumbing."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn

    def complete(self, req: ChatRequest) -> ChatResponse:
        return ChatResponse(request_id=req.request_id, content=self.fn(req))


class JournalReplayBackend(ScriptedMockBackend):
    """Scripted backend built from a previous run's calls.jsonl."""

    @classmethod
    def from_journal(cls, path) -> "JournalReplayBackend":
        responses: Dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    responses[entry["request_digest"]] = entry["content"]
        return cls(responses=responses)


class RemoteHTTPBackend:
    """OpenAI-style /v1/chat/completions client with retry + backoff."""

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None,
                 max_attempts: int = 4, timeout: float = 120.0,
                 backoff_base: float = 1.0, rng: Optional[random.Random] = None):
        self.url = url or os.environ.get("MCQFORGE_LLM_URL", "")
        self.api_key = api_key or os.environ.get("MCQFORGE_LLM_KEY", "")
        if not self.url:
            raise PermanentError("no chat-completions URL configured")
        self.max_attempts = max_attempts
        self.timeout = timeout
        self.backoff_base = backoff_base
        self.rng = rng or random.Random()

    def complete(self, req: ChatRequest) -> ChatResponse:
        payload = {
            "model": req.model,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_err = "unknown"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = requests.post(self.url, json=payload, headers=headers,
                                     timeout=self.timeout)
            except requests.RequestException as err:
                last_err = str(err)
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_err = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise PermanentError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    body = resp.json()
                    choice = body["choices"][0]
                    usage = body.get("usage", {})
                    out = ChatResponse(
                        request_id=req.request_id,
                        content=choice["message"]["content"] or "",
                        finish_reason=choice.get("finish_reason", "stop"),
                        usage={"prompt_tokens": usage.get("prompt_tokens", 0),
                               "completion_tokens": usage.get("completion_tokens", 0)},
                        attempts=attempt,
                    )
                    return out
            if attempt < self.max_attempts:
                delay = self.backoff_base * (2 ** (attempt - 1))
                time.sleep(delay * (0.5 + self.rng.random()))
        raise TransientError(f"gave up after {self.max_attempts} attempts: {last_err}")


class Gateway:
    """Backend plus journal plus bounded-concurrency batching."""

    def __init__(self, backend, journal_path=None, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.journal_path = Path(journal_path) if journal_path else None
        self.max_in_flight = max_in_flight
        self._journal_lock = threading.Lock()

    def complete(self, req: ChatRequest) -> ChatResponse:
        start = time.monotonic()
        try:
            resp = self.backend.complete(req)
        except (TransientError, PermanentError) as err:
            resp = ChatResponse(request_id=req.request_id, content="",
                                finish_reason="error", error=str(err))
        resp.latency_ms = (time.monotonic() - start) * 1000.0
        self._journal(req, resp)
        return resp

    def complete_batch(self, reqs: Sequence[ChatRequest]) -> List[ChatResponse]:
        """Run requests with at most max_in_flight outstanding; results come
        back in request order and per-item failures are error-marked, never
        raised."""
        if not reqs:
            return []
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.complete, reqs))

    def _journal(self, req: ChatRequest, resp: ChatResponse) -> None:
        if self.journal_path is None:
            return
        entry = {
            "request_id": req.request_id,
            "request_digest": request_digest(req.model, req.messages),
            "model": req.model,
            "content": resp.content,
            "finish_reason": resp.finish_reason,
            "usage": resp.usage,
            "attempts": resp.attempts,
            "latency_ms": round(resp.latency_ms, 3),
            "error": resp.error,
        }
        line = json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n"
        with self._journal_lock:
            with open(self.journal_path, "a", encoding="utf-8") as fh:
                fh.write(line)


def make_gateway(cfg: dict, journal_path=None) -> Gateway:
    """Build a gateway from the run-config gateway section."""
    backend_name = cfg.get("backend", "scripted_mock")
    if backend_name == "scripted_mock":
        mock_file = cfg.get("mock_file")
        backend = (ScriptedMockBackend.from_file(mock_file)
                   if mock_file else ScriptedMockBackend())
    elif backend_name == "journal_replay":
        backend = JournalReplayBackend.from_journal(cfg["journal_file"])
    elif backend_name == "remote_http":
        backend = RemoteHTTPBackend(url=cfg.get("url"), api_key=cfg.get("key"))
    else:
        raise ValueError(f"unknown gateway backend: {backend_name!r}")
    return Gateway(backend, journal_path=journal_path,
                   max_in_flight=int(cfg.get("max_in_flight", 4)))
