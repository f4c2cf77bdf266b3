"""Question analysis: topic entities, hop prediction, similar-question variants."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from kgnav.errors import MissingLabelError, ParseError
from kgnav.gateway import CompletionRequest, LLMGateway
from kgnav.prompts import TASK_VARIANTS, variant_prompt

logger = logging.getLogger(__name__)

ORIGINAL = 0
ORIGINAL_WEIGHT = 2
VARIANT_WEIGHT = 1


@dataclass
class Question:
    id: str
    text: str
    topic_entities: list[str]
    answers: list[str] | None = None
    hops: int | None = None

    @classmethod
    def from_raw(cls, id: str, raw: str, **kwargs) -> "Question":
        text, entities = parse_topic_entities(raw)
        return cls(id=id, text=text, topic_entities=entities, **kwargs)


def parse_topic_entities(raw: str) -> tuple[str, list[str]]:
    """Strip MetaQA-style ``[entity]`` markup.

    >>> parse_topic_entities("what films did [Babaloo Mandel] write")
    ('what films did Babaloo Mandel write', ['Babaloo Mandel'])
    """
    entities: list[str] = []
    clean: list[str] = []
    start = None
    for i, ch in enumerate(raw):
        if ch == "[":
            if start is not None:
                raise ParseError(f"nested '[' at offset {i}")
            start = i
        elif ch == "]":
            if start is None:
                raise ParseError(f"unmatched ']' at offset {i}")
            entities.append(raw[start + 1 : i])
            start = None
        else:
            clean.append(ch)
    if start is not None:
        raise ParseError(f"unmatched '[' at offset {start}")
    return "".join(clean), entities


@dataclass
class QuestionBundle:
    """The original question plus its variants.

    Member 0 is the original (weight 2); members 1..m are variants (weight 1).
    """

    question: Question
    variants: list[str] = field(default_factory=list)
    hops: int = 1

    def members(self) -> list[tuple[int, str]]:
        return [(ORIGINAL, self.question.text)] + [(i, v) for i, v in enumerate(self.variants, start=1)]

    @staticmethod
    def weight(source: int) -> int:
        return ORIGINAL_WEIGHT if source == ORIGINAL else VARIANT_WEIGHT

    @property
    def total_weight(self) -> int:
        return sum(self.weight(s) for s, _ in self.members())


class HopPredictor:
    """Maps a question to a hop count in ``1..max_hops``."""

    kind = "base"

    def __init__(self, max_hops: int = 3):
        if max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        self.max_hops = max_hops

    def _predict(self, q: Question) -> int:
        raise NotImplementedError

    def predict(self, q: Question) -> int:
        return min(max(int(self._predict(q)), 1), self.max_hops)


class OracleHopPredictor(HopPredictor):
    kind = "oracle"

    def _predict(self, q: Question) -> int:
        if q.hops is None:
            raise MissingLabelError(f"question {q.id} has no hop label")
        return q.hops


class FixedHopPredictor(HopPredictor):
    kind = "fixed"

    def __init__(self, hops: int, max_hops: int = 3):
        super().__init__(max_hops)
        self.hops = hops

    def _predict(self, q: Question) -> int:
        return self.hops


# Each group is one kind of relation mentioned in a question; a question
# chaining n kinds tends to need n hops. "co-" phrasing (co-starred,
# co-wrote) hides a film in between, so it adds one.
DEFAULT_CUES: tuple[tuple[str, str], ...] = (
    ("write", r"\b(?:wr(?:ote|ite|ites|itten|iting)|(?:screen|co-?)?writ(?:er|ers))\b"),
    ("direct", r"\b(?:direct(?:ed|s|ing)?|(?:co-?)?director(?:s)?)\b"),
    ("act", r"\b(?:starr(?:ed|ing)|stars?|act(?:ed|ors?|ress(?:es)?|s)?|appear(?:ed|s)?|cast)\b"),
    ("genre", r"\b(?:genres?|types?|kinds?)\b"),
    ("year", r"\b(?:release[ds]?|years?|when)\b"),
    ("language", r"\b(?:languages?|spoken)\b"),
    ("tag", r"\b(?:tags?|topics?|described|about)\b"),
    ("rating", r"\b(?:ratings?|rated|votes?|imdb)\b"),
)
CO_CUE = r"\bco-?(?:star|writ|direct|act)\w*|\bshar(?:e|ed|ing)\b|\bsame\b"


class HeuristicHopPredictor(HopPredictor):
    """Cue-phrase features fed to a linear scorer over hop classes.

    ``features(q)`` is one indicator per cue group plus a count of "co-"
    phrases. Each hop class ``h`` scores ``weights[h-1] . v + bias[h-1]``;
    the default weights make the argmax the hop class nearest to the
    number of distinct relation cues.
    """

    kind = "heuristic"

    def __init__(
        self,
        max_hops: int = 3,
        cues: Sequence[tuple[str, str]] = DEFAULT_CUES,
        co_cue: str = CO_CUE,
        weights: Sequence[Sequence[float]] | None = None,
        bias: Sequence[float] | None = None,
    ):
        super().__init__(max_hops)
        self.cues = [(name, re.compile(pat, re.IGNORECASE)) for name, pat in cues]
        self.co_cue = re.compile(co_cue, re.IGNORECASE)
        d = len(self.cues) + 1
        hops = range(1, max_hops + 1)
        self.weights = [list(w) for w in weights] if weights is not None else [[2.0 * h] * d for h in hops]
        self.bias = list(bias) if bias is not None else [-float(h * h) for h in hops]
        if len(self.weights) != max_hops or len(self.bias) != max_hops:
            raise ValueError("need one weight row and one bias per hop class")
        if any(len(w) != d for w in self.weights):
            raise ValueError(f"weight rows must have length {d}")

    def features(self, q: Question | str) -> list[float]:
        text = q.text if isinstance(q, Question) else q
        if isinstance(q, Question):
            for ent in q.topic_entities:
                text = text.replace(ent, " ")
        v = [1.0 if pat.search(text) else 0.0 for _, pat in self.cues]
        v.append(float(len(self.co_cue.findall(text))))
        return v

    def scores(self, q: Question | str) -> list[float]:
        v = self.features(q)
        return [sum(w * x for w, x in zip(row, v)) + b for row, b in zip(self.weights, self.bias)]

    def _predict(self, q: Question) -> int:
        s = self.scores(q)
        return max(range(len(s)), key=lambda i: (s[i], -i)) + 1


def predict_hops(p: HopPredictor, q: Question) -> int:
    return p.predict(q)


def make_hop_predictor(spec: str | int | HopPredictor, max_hops: int = 3) -> HopPredictor:
    """Build a predictor from ``"oracle"``, ``"heuristic"``, ``"auto"``, ``"fixed:N"`` or an int."""
    if isinstance(spec, HopPredictor):
        return spec
    if isinstance(spec, int):
        return FixedHopPredictor(spec, max_hops)
    s = str(spec).strip().lower()
    if s == "oracle":
        return OracleHopPredictor(max_hops)
    if s in ("heuristic", "auto"):
        return HeuristicHopPredictor(max_hops)
    if s.startswith("fixed:"):
        s = s.split(":", 1)[1]
    if s.isdigit():
        return FixedHopPredictor(int(s), max_hops)
    raise ValueError(f"unknown hop predictor {spec!r}")


_NUMBERING = re.compile(r"^\s*(?:[-*•]|\d+[.)]|\(\d+\))\s*")


def _parse_variant_lines(text: str, q: Question) -> list[str]:
    out = []
    for line in text.splitlines():
        line = _NUMBERING.sub("", line).strip()
        if not line:
            continue
        if all(ent in line for ent in q.topic_entities):
            out.append(line)
        else:
            logger.debug("rejected variant without topic entity: %r", line)
    return out


def variant_request(gateway: LLMGateway, q: Question, m: int, attempt: int = 0) -> CompletionRequest:
    tags = {"task": TASK_VARIANTS, "question_id": q.id, "attempt": attempt}
    return gateway.request(variant_prompt(q.text, q.topic_entities, m), tags)


def generate_variants(gateway: LLMGateway, q: Question, m: int, max_retries: int = 2) -> list[str]:
    """Ask for ``m`` paraphrases of ``q``; always returns exactly ``m`` strings.

    Lines that drop a topic entity are rejected. Missing variants are
    re-requested up to ``max_retries`` times, then filled with the original
    text.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if m == 0:
        return []
    variants: list[str] = []
    for attempt in range(max_retries + 1):
        req = variant_request(gateway, q, m, attempt)
        for line in _parse_variant_lines(gateway.complete(req).text, q):
            if len(variants) < m:
                variants.append(line)
        if len(variants) == m:
            return variants
    logger.info("question %s: backfilling %d variant(s) with the original", q.id, m - len(variants))
    return variants + [q.text] * (m - len(variants))


def analyze(
    gateway: LLMGateway, q: Question, predictor: HopPredictor, n_variants: int
) -> QuestionBundle:
    hops = predictor.predict(q)
    return QuestionBundle(q, generate_variants(gateway, q, n_variants), hops)
