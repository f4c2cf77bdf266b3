"""Completion backends.

``HttpBackend`` talks to an OpenAI-compatible chat endpoint. The three mocks
are pure functions of the request and read the prompts built in
:mod:`kgnav.prompts`:

* ``LexicalBackend`` picks relations by stem overlap with the question.
* ``OracleBackend`` follows a scripted gold relation path per question.
* ``ReplayBackend`` returns canned text keyed by request fingerprint.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from pathlib import Path
from typing import Iterable, Mapping

import httpx

from kgnav.condense import join_entities, parse_generic_sentence
from kgnav.errors import (
    BackendUnavailableError,
    ConfigError,
    ParseError,
    ProtocolError,
    ReplayMissError,
)
from kgnav.gateway import CompletionRequest, fingerprint, read_cache_file
from kgnav.prompts import (
    TASK_ANSWER,
    TASK_SELECT,
    TASK_VARIANTS,
    parse_answer_prompt,
    parse_selection_prompt,
    parse_variant_prompt,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "KGNAV_API_KEY"


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client.

    Transport errors and 5xx responses are retried with exponential backoff,
    up to ``max_attempts`` in total; 4xx responses fail immediately.
    """

    name = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
    ):
        if not base_url:
            raise ConfigError("http backend needs a base_url")
        api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not api_key:
            raise ConfigError(f"http backend needs the {API_KEY_ENV} environment variable")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {api_key}"}

    def generate(self, req: CompletionRequest) -> str:
        body = {
            "model": req.model or self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=body, headers=self._headers)
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("transport error on attempt %d: %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = BackendUnavailableError(f"server error {resp.status_code}")
                logger.warning("server error %d on attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailableError(
                    f"request rejected with {resp.status_code}: {resp.text[:200]}"
                )
            return _chat_content(resp)
        raise BackendUnavailableError(
            f"backend unreachable after {self.max_attempts} attempts: {last_error}"
        )


def _chat_content(resp: httpx.Response) -> str:
    try:
        payload = resp.json()
        content = payload["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"unexpected chat-completion payload: {exc!r}") from None
    if not isinstance(content, str):
        raise ProtocolError("chat-completion content is not a string")
    return content


_TOKEN = re.compile(r"[a-z0-9]+")
_SUFFIXES = ("ing", "ed", "en", "es", "s")


def stem(token: str) -> str:
    """Crude suffix stripper: 'written' and 'write' both become 'writ'."""
    for suffix in _SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            token = token[: -len(suffix)]
            break
    if token.endswith("e") and len(token) > 3:
        token = token[:-1]
    if len(token) > 3 and token[-1] == token[-2] and token[-1] not in "aeiou":
        token = token[:-1]
    return token


def stems(text: str) -> set[str]:
    return {stem(t) for t in _TOKEN.findall(text.lower())}


def overlap(question: str, name: str) -> int:
    return len(stems(question) & stems(name))


def rank_by_overlap(question: str, candidates: Iterable[str]) -> list[str]:
    return sorted(candidates, key=lambda c: (-overlap(question, c), c))


_REPHRASINGS = (
    "Could you tell me {q}",
    "I would like to know {q}",
    "Please answer: {q}",
    "Question: {q}",
)


def _paraphrases(question: str, m: int) -> str:
    q = question.rstrip("?")
    return "\n".join(_REPHRASINGS[i % len(_REPHRASINGS)].format(q=q) + "?" for i in range(m))


def _mentioned(question: str, names: Iterable[str]) -> list[str]:
    found = []
    for name in sorted(set(names), key=lambda n: (-len(n), n)):
        if re.search(rf"(?<!\w){re.escape(name)}(?!\w)", question, re.IGNORECASE):
            found.append(name)
    return found


def _knowledge_triples(lines: Iterable[str]) -> list[tuple[str, str, str]]:
    out: list[tuple[str, str, str]] = []
    for line in lines:
        out.extend(parse_generic_sentence(line))
    return out


class LexicalBackend:
    """Token-overlap stand-in for an LLM.

    Relation selection ranks candidates by shared stems with the question
    (ties lexicographic). Answering picks the relation most similar to the
    question among facts touching an entity named in the question, and
    returns the entities on the other side.
    """

    name = "mock-lexical"

    def generate(self, req: CompletionRequest) -> str:
        task = req.tag_map.get("task")
        if task == TASK_SELECT or (task is None and parse_selection_prompt(req.prompt)):
            sel = parse_selection_prompt(req.prompt)
            if sel is None:
                return ""
            return "\n".join(rank_by_overlap(sel.question, sel.candidates)[: sel.k])
        if task == TASK_VARIANTS:
            var = parse_variant_prompt(req.prompt)
            return _paraphrases(var.question, var.m) if var else ""
        if task == TASK_ANSWER:
            return self._answer(req.prompt)
        return ""

    def _answer(self, prompt: str) -> str:
        parsed = parse_answer_prompt(prompt)
        if parsed is None:
            return ""
        triples = _knowledge_triples(parsed.knowledge)
        if not triples:
            return "I don't know."
        names = {h for h, _, _ in triples} | {t for _, _, t in triples}
        anchors = set(_mentioned(parsed.question, names))
        touching = [t for t in triples if t[0] in anchors or t[2] in anchors] or triples
        best = max(overlap(parsed.question, r) for _, r, _ in touching)
        answers: list[str] = []
        for h, r, t in touching:
            if overlap(parsed.question, r) != best:
                continue
            other = t if h in anchors else h
            if other not in answers and other not in anchors:
                answers.append(other)
        return ", ".join(answers) if answers else "I don't know."


def load_gold_relations(path: str | Path) -> dict[str, list[str]]:
    """Read the oracle sidecar: JSON Lines ``{question_id, gold_relations}``."""
    gold: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                gold[str(rec["question_id"])] = [str(r) for r in rec["gold_relations"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad sidecar record: {exc}", lineno, str(path)) from None
    return gold


def write_gold_relations(path: str | Path, gold: Mapping[str, Iterable[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(gold):
            fh.write(json.dumps({"question_id": qid, "gold_relations": list(gold[qid])}) + "\n")


class OracleBackend:
    """Scripted gold-path oracle.

    At hop ``i`` it selects the ``i``-th gold relation when it is among the
    candidates. For answering it replays the gold path over the triples it
    can read back from the knowledge block (generic template only).
    """

    name = "mock-oracle"

    def __init__(self, gold: Mapping[str, Iterable[str]]):
        self.gold = {qid: list(rels) for qid, rels in gold.items()}

    @classmethod
    def from_sidecar(cls, path: str | Path) -> "OracleBackend":
        return cls(load_gold_relations(path))

    def _path(self, req: CompletionRequest) -> list[str]:
        qid = req.tag_map.get("question_id")
        if qid is None or qid not in self.gold:
            raise ReplayMissError(f"no gold relation path for question {qid!r}")
        return self.gold[qid]

    def generate(self, req: CompletionRequest) -> str:
        task = req.tag_map.get("task")
        if task == TASK_VARIANTS:
            var = parse_variant_prompt(req.prompt)
            return _paraphrases(var.question, var.m) if var else ""
        if task == TASK_SELECT:
            path = self._path(req)
            sel = parse_selection_prompt(req.prompt)
            hop = int(req.tag_map.get("hop", "1"))
            if sel is None or not 1 <= hop <= len(path):
                return "none"
            wanted = path[hop - 1]
            return wanted if wanted in sel.candidates else "none"
        if task == TASK_ANSWER:
            return self._answer(self._path(req), req.prompt)
        return ""

    @staticmethod
    def _answer(path: list[str], prompt: str) -> str:
        parsed = parse_answer_prompt(prompt)
        if parsed is None:
            return ""
        triples = _knowledge_triples(parsed.knowledge)
        names = {h for h, _, _ in triples} | {t for _, _, t in triples}
        frontier = set(_mentioned(parsed.question, names))
        visited: set[str] = set()
        for rel in path:
            visited |= frontier
            nxt = set()
            for h, r, t in triples:
                if r != rel:
                    continue
                if h in frontier and t not in visited:
                    nxt.add(t)
                if t in frontier and h not in visited:
                    nxt.add(h)
            frontier = nxt
        return join_entities(sorted(frontier)) if frontier else "I don't know."


class ReplayBackend:
    """Returns recorded responses keyed by request fingerprint."""

    name = "mock-replay"

    def __init__(self, responses: Mapping[str, str] | None = None):
        self.responses = dict(responses or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        """Load from a cache file (same JSONL record layout)."""
        return cls({rec.fingerprint: rec.response_text for rec in read_cache_file(path)})

    def add(self, req: CompletionRequest, text: str) -> str:
        if req.backend != self.name:
            raise ValueError(f"request is addressed to {req.backend!r}, not {self.name!r}")
        fp = fingerprint(req)
        self.responses[fp] = text
        return fp

    def generate(self, req: CompletionRequest) -> str:
        fp = fingerprint(req)
        try:
            return self.responses[fp]
        except KeyError:
            raise ReplayMissError(f"no recorded response for fingerprint {fp[:16]}") from None
