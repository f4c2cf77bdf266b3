"""Completion transport: requests, fingerprints, the response cache, and the gateway."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Protocol

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 1024
DEFAULT_CONTEXT_TOKENS = 4096


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call.

    ``tags`` carry routing context (task, question id, hop) that scripted
    backends need; they are part of the fingerprint, the HTTP backend ignores
    them.
    """

    prompt: str
    backend: str
    model: str = ""
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    tags: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "temperature", float(self.temperature))
        object.__setattr__(self, "tags", tuple(sorted((str(k), str(v)) for k, v in self.tags)))

    @property
    def tag_map(self) -> dict[str, str]:
        return dict(self.tags)


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    backend: str
    cached: bool = False


def fingerprint(req: CompletionRequest) -> str:
    """SHA-256 over a canonical JSON encoding of every request field."""
    payload = {
        "backend": req.backend,
        "model": req.model,
        "prompt": req.prompt,
        "max_tokens": req.max_tokens,
        "temperature": repr(req.temperature),
        "tags": [list(t) for t in req.tags],
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend(Protocol):
    name: str

    def generate(self, req: CompletionRequest) -> str: ...


@dataclass
class CacheRecord:
    fingerprint: str
    backend: str
    model: str
    response_text: str
    created_at: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, ensure_ascii=False)


class ResponseCache:
    """Fingerprint-keyed response store, optionally backed by a JSONL file.

    The file is append-only; on load, later records for a fingerprint win.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, CacheRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for rec in read_cache_file(self.path):
                self._records[rec.fingerprint] = rec

    def get(self, fp: str) -> CacheRecord | None:
        with self._lock:
            return self._records.get(fp)

    def put(self, req: CompletionRequest, fp: str, text: str) -> CacheRecord:
        rec = CacheRecord(
            fingerprint=fp,
            backend=req.backend,
            model=req.model,
            response_text=text,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        with self._lock:
            self._records[fp] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(rec.to_json() + "\n")
        return rec

    def clear(self) -> None:
        with self._lock:
            self._records.clear()
            if self.path is not None and self.path.exists():
                self.path.unlink()

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def records(self) -> list[CacheRecord]:
        with self._lock:
            return list(self._records.values())


def read_cache_file(path: str | Path) -> list[CacheRecord]:
    from kgnav.errors import ParseError

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                out.append(CacheRecord(**{k: raw[k] for k in CacheRecord.__dataclass_fields__}))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad cache record: {exc}", lineno, str(path)) from None
    return out


@dataclass
class LLMGateway:
    """Routes requests to one backend with read-through caching.

    Concurrent callers with the same fingerprint are serialized so the
    backend sees each fingerprint at most once while the cache is enabled.
    """

    backend: Backend
    cache: ResponseCache | None = field(default_factory=ResponseCache)
    model: str = ""
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    backend_calls: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def request(
        self,
        prompt: str,
        tags: Mapping[str, object] | None = None,
        *,
        max_tokens: int | None = None,
        temperature: float | None = None,
    ) -> CompletionRequest:
        return CompletionRequest(
            prompt=prompt,
            backend=self.backend.name,
            model=self.model,
            max_tokens=self.max_tokens if max_tokens is None else max_tokens,
            temperature=self.temperature if temperature is None else temperature,
            tags=tuple((k, str(v)) for k, v in (tags or {}).items()),
        )

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if self.cache is None:
            return CompletionResponse(self._call(req, fingerprint(req)), req.backend, False)
        fp = fingerprint(req)
        with self._lock:
            key_lock = self._key_locks.setdefault(fp, threading.Lock())
        with key_lock:
            hit = self.cache.get(fp)
            if hit is not None:
                return CompletionResponse(hit.response_text, req.backend, True)
            text = self._call(req, fp)
            self.cache.put(req, fp, text)
        return CompletionResponse(text, req.backend, False)

    def ask(self, prompt: str, tags: Mapping[str, object] | None = None) -> str:
        return self.complete(self.request(prompt, tags)).text

    def _call(self, req: CompletionRequest, fp: str) -> str:
        text = self.backend.generate(req)
        with self._lock:
            self.backend_calls.append(fp)
        return text
