"""Turning retrieved triples into prompt text, and reading answers back out."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from kgnav.errors import ParseError, PromptTooSmallError, TemplateError
from kgnav.prompts import NO_KNOWLEDGE, AnswerExample, answer_prompt_parts

GENERIC_PATTERN = "The {relation} of {head} is(are): {tail}"

_PLACEHOLDER = re.compile(r"\{(head|relation|tail)\}")


class AnchoredTriple(NamedTuple):
    """A name-level triple plus the entity it was reached through (if known)."""

    head: str
    relation: str
    tail: str
    anchor: str | None = None


@dataclass(frozen=True)
class AggregatedFact:
    grouping: str  # "head" or "tail": which side is shared
    fixed: str
    relation: str
    entities: tuple[str, ...]

    def triples(self) -> list[AnchoredTriple]:
        if self.grouping == "head":
            return [AnchoredTriple(self.fixed, self.relation, e, self.fixed) for e in self.entities]
        return [AnchoredTriple(e, self.relation, self.fixed, self.fixed) for e in self.entities]


def _group_side(t: AnchoredTriple) -> str:
    # by-head unless the triple was clearly reached through its tail
    if t.anchor is not None and t.anchor == t.tail and t.anchor != t.head:
        return "tail"
    return "head"


def aggregate(triples: Iterable[Sequence[str]]) -> list[AggregatedFact]:
    """Merge triples sharing an anchor entity and relation.

    Items are ``(head, relation, tail)`` or ``(head, relation, tail, anchor)``.
    Triples reached through their tail are grouped on the tail, everything
    else on the head. Input is treated as a set of triples; a triple seen
    again with another anchor keeps its first one. Facts come out in order
    of first appearance; grouped entities are sorted.
    """
    groups: dict[tuple[str, str, str], set[str]] = {}
    seen: set[tuple[str, str, str]] = set()
    for item in triples:
        t = AnchoredTriple(*item)
        if t[:3] in seen:
            continue
        seen.add(t[:3])
        side = _group_side(t)
        if side == "head":
            groups.setdefault(("head", t.head, t.relation), set()).add(t.tail)
        else:
            groups.setdefault(("tail", t.tail, t.relation), set()).add(t.head)
    return [AggregatedFact(g, fixed, rel, tuple(sorted(ents))) for (g, fixed, rel), ents in groups.items()]


def flatten(facts: Iterable[AggregatedFact]) -> list[AnchoredTriple]:
    out: list[AnchoredTriple] = []
    for fact in facts:
        out.extend(fact.triples())
    return out


def join_entities(names: Sequence[str]) -> str:
    if len(names) <= 1:
        return "".join(names)
    return ", ".join(names[:-1]) + " and " + names[-1]


def _check_pattern(pattern: str, required: tuple[str, ...]) -> None:
    counts = {name: 0 for name in ("head", "relation", "tail")}
    for m in _PLACEHOLDER.finditer(pattern):
        counts[m.group(1)] += 1
    for name, n in counts.items():
        if n > 1 or (name in required and n != 1):
            raise TemplateError(f"template {pattern!r} must contain {{{name}}} exactly once")


@dataclass
class VerbalizationTemplate:
    """Sentence pattern with optional per-relation overrides.

    The generic pattern needs ``{head}``, ``{relation}`` and ``{tail}`` once
    each. Overrides are relation-specific, so ``{relation}`` is optional
    there.
    """

    pattern: str = GENERIC_PATTERN
    overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        _check_pattern(self.pattern, ("head", "relation", "tail"))
        for pat in self.overrides.values():
            _check_pattern(pat, ("head", "tail"))

    def pattern_for(self, relation: str) -> str:
        return self.overrides.get(relation, self.pattern)

    def render(self, head: str, relation: str, tail: str) -> str:
        values = {"head": head, "relation": relation, "tail": tail}
        return _PLACEHOLDER.sub(lambda m: values[m.group(1)], self.pattern_for(relation))


def load_overrides(path: str | Path) -> dict[str, str]:
    """Read ``relation<TAB>template`` lines."""
    overrides: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip():
                raise ParseError("expected 'relation<TAB>template'", lineno, str(path))
            try:
                _check_pattern(parts[1], ("head", "tail"))
            except TemplateError as exc:
                raise ParseError(str(exc), lineno, str(path)) from None
            overrides[parts[0].strip()] = parts[1]
    return overrides


def verbalize(fact: AggregatedFact, template: VerbalizationTemplate | None = None) -> str:
    template = template or VerbalizationTemplate()
    group = join_entities(fact.entities)
    if fact.grouping == "head":
        return template.render(fact.fixed, fact.relation, group)
    return template.render(group, fact.relation, fact.fixed)


_GENERIC_SENTENCE = re.compile(r"^The (?P<relation>\S+) of (?P<head>.+) is\(are\): (?P<tail>.+)$")


def split_joined(text: str) -> list[str]:
    """Inverse of :func:`join_entities` for names free of ', ' and ' and '."""
    if " and " not in text:
        return [text]
    front, last = text.rsplit(" and ", 1)
    return front.split(", ") + [last]


def parse_generic_sentence(sentence: str) -> list[tuple[str, str, str]]:
    """Recover triples from a sentence rendered with the generic pattern.

    Returns an empty list for sentences in any other shape.
    """
    m = _GENERIC_SENTENCE.match(sentence.strip())
    if not m:
        return []
    heads = split_joined(m.group("head"))
    tails = split_joined(m.group("tail"))
    rel = m.group("relation")
    return [(h, rel, t) for h in heads for t in tails]


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class AnswerPrompt:
    text: str
    truncated: bool
    sentences_kept: int
    sentences_total: int

    @property
    def n_chars(self) -> int:
        return len(self.text)


def build_answer_prompt(
    question: str,
    knowledge: Sequence[str],
    few_shot: Sequence[AnswerExample] = (),
    budget: int = 3072,
) -> AnswerPrompt:
    """Assemble the knowledge-grounded answer prompt within ``budget`` tokens.

    Token cost is estimated as characters / 4. Whole sentences are dropped
    from the end of the knowledge block until the prompt fits.
    """
    if budget <= 0:
        raise PromptTooSmallError("budget must be positive")
    head, tail = answer_prompt_parts(question, few_shot)
    limit = budget * 4
    fixed = len(head) + len(tail)
    if fixed + len(NO_KNOWLEDGE) > limit:
        raise PromptTooSmallError(
            f"budget of {budget} tokens cannot hold the instruction and question "
            f"({estimate_tokens(head + NO_KNOWLEDGE + tail)} tokens)"
        )
    kept = 0
    used = fixed
    for sentence in knowledge:
        cost = len(sentence) + (1 if kept else 0)
        if used + cost > limit:
            break
        used += cost
        kept += 1
    block = "\n".join(knowledge[:kept]) if kept else NO_KNOWLEDGE
    return AnswerPrompt(head + block + tail, kept < len(knowledge), kept, len(knowledge))


_ANSWER_PREFIX = re.compile(
    r"^\s*(?:(?:the\s+)?(?:final\s+)?answers?\b(?:\s+(?:is|are)\b)?|answer\(s\))\s*[:\-]?\s*",
    re.IGNORECASE,
)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")


def split_answers(text: str) -> list[str]:
    """Answer strings in original case.

    Splits on newlines, commas and " and ", strips boilerplate such as
    "The answer is:" and list bullets, drops empties and repeats.
    """
    out: list[str] = []
    seen: set[str] = set()
    for line in text.splitlines():
        line = _BULLET.sub("", line)
        line = _ANSWER_PREFIX.sub("", line, count=1)
        for piece in re.split(r",| and ", line):
            piece = piece.strip().strip("\"'").rstrip(".").strip()
            if piece and piece.lower() not in seen:
                seen.add(piece.lower())
                out.append(piece)
    return out


def extract_answers(text: str) -> list[str]:
    return [a.lower() for a in split_answers(text)]


@dataclass
class AnswerRecord:
    question_id: str
    raw: str
    answers: list[str]
    display_answers: list[str]
    prompt_chars: int
    truncated: bool

    @classmethod
    def from_completion(cls, question_id: str, raw: str, prompt: AnswerPrompt) -> "AnswerRecord":
        display = split_answers(raw)
        return cls(
            question_id=question_id,
            raw=raw,
            answers=[a.lower() for a in display],
            display_answers=display,
            prompt_chars=prompt.n_chars,
            truncated=prompt.truncated,
        )


def knowledge_entities(facts: Iterable[AggregatedFact]) -> set[str]:
    names: set[str] = set()
    for fact in facts:
        names.add(fact.fixed)
        names.update(fact.entities)
    return names
