"""Prompt templates and the small parsers the mock backends use to read them.

The templates are fixed text; ``PROMPT_VERSION`` is written into run reports
so cached responses and reports can be tied to the wording that produced
them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

PROMPT_VERSION = "kgnav-prompts-1"

TASK_VARIANTS = "variants"
TASK_SELECT = "select_relations"
TASK_ANSWER = "answer"

CANDIDATE_SEPARATOR = "; "
NO_KNOWLEDGE = "No relevant knowledge was retrieved."

_VARIANT_TEMPLATE = """\
Rewrite the question below in {m} different ways. Every rewrite must keep exactly the same meaning.
Keep these entity names exactly as written: {entities}.
Write one question per line, without numbering or extra text.
Question: {question}
Rewrites:"""

_SELECT_HEADER = """\
You are exploring a knowledge graph to answer a question.
From the candidate relations of the entity, choose the {k} most relevant for answering the question.
Reply with exactly {k} relation name(s) copied from the candidate list, one per line, and nothing else."""

_SELECT_BODY = """\
Question: {question}
Entity: {entity}
Candidate relations: {candidates}
Relations:"""

ANSWER_INSTRUCTION = """\
Answer the question using only the knowledge given below. Do not use your own knowledge.
If several entities answer the question, list all of them separated by commas.
Reply with the answer entities only."""


@dataclass(frozen=True)
class SelectionExample:
    question: str
    entity: str
    candidates: tuple[str, ...]
    answer: tuple[str, ...]


@dataclass(frozen=True)
class AnswerExample:
    question: str
    knowledge: tuple[str, ...]
    answer: str


def variant_prompt(question: str, entities: Sequence[str], m: int) -> str:
    return _VARIANT_TEMPLATE.format(
        m=m, entities=", ".join(entities) if entities else "(none)", question=question
    )


def selection_prompt(
    question: str,
    entity: str,
    candidates: Sequence[str],
    k: int,
    examples: Sequence[SelectionExample] = (),
) -> str:
    parts = [_SELECT_HEADER.format(k=k)]
    for ex in examples:
        parts.append(
            _SELECT_BODY.format(
                question=ex.question,
                entity=ex.entity,
                candidates=CANDIDATE_SEPARATOR.join(ex.candidates),
            )
            + " "
            + "\n".join(ex.answer)
        )
    parts.append(
        _SELECT_BODY.format(
            question=question, entity=entity, candidates=CANDIDATE_SEPARATOR.join(candidates)
        )
    )
    return "\n\n".join(parts)


def answer_example_block(ex: AnswerExample) -> str:
    knowledge = "\n".join(ex.knowledge) if ex.knowledge else NO_KNOWLEDGE
    return f"Knowledge:\n{knowledge}\nQuestion: {ex.question}\nAnswer: {ex.answer}"


def answer_prompt_parts(question: str, examples: Sequence[AnswerExample] = ()) -> tuple[str, str]:
    """Everything before and after the knowledge sentences."""
    head = ANSWER_INSTRUCTION
    if examples:
        head += "\n\nExamples:\n\n" + "\n\n".join(answer_example_block(ex) for ex in examples)
    head += "\n\nKnowledge:\n"
    tail = f"\nQuestion: {question}\nAnswer:"
    return head, tail


# parsing helpers for mock backends; always read the last block so few-shot
# examples earlier in the prompt are ignored

_LAST_FIELD = {
    name: re.compile(rf"^{label}: ?(.*)$", re.MULTILINE)
    for name, label in [
        ("question", "Question"),
        ("entity", "Entity"),
        ("candidates", "Candidate relations"),
    ]
}


def _last(name: str, prompt: str) -> str | None:
    found = _LAST_FIELD[name].findall(prompt)
    return found[-1].strip() if found else None


@dataclass
class ParsedSelection:
    question: str
    entity: str
    candidates: list[str]
    k: int


def parse_selection_prompt(prompt: str) -> ParsedSelection | None:
    question = _last("question", prompt)
    entity = _last("entity", prompt)
    cands = _last("candidates", prompt)
    k = re.search(r"choose the (\d+) most relevant", prompt)
    if question is None or entity is None or cands is None or k is None:
        return None
    names = [c.strip() for c in cands.split(CANDIDATE_SEPARATOR.strip())] if cands else []
    return ParsedSelection(question, entity, [c for c in names if c], int(k.group(1)))


@dataclass
class ParsedVariants:
    question: str
    entities: list[str]
    m: int


def parse_variant_prompt(prompt: str) -> ParsedVariants | None:
    m = re.search(r"in (\d+) different ways", prompt)
    ents = re.search(r"^Keep these entity names exactly as written: (.*)\.$", prompt, re.MULTILINE)
    question = _last("question", prompt)
    if m is None or question is None:
        return None
    names = [] if ents is None or ents.group(1) == "(none)" else ents.group(1).split(", ")
    return ParsedVariants(question, names, int(m.group(1)))


@dataclass
class ParsedAnswer:
    question: str
    knowledge: list[str] = field(default_factory=list)


def parse_answer_prompt(prompt: str) -> ParsedAnswer | None:
    idx = prompt.rfind("Knowledge:\n")
    q_idx = prompt.rfind("\nQuestion: ")
    if idx < 0 or q_idx < idx:
        return None
    block = prompt[idx + len("Knowledge:\n") : q_idx]
    question = prompt[q_idx + len("\nQuestion: ") :].split("\n", 1)[0].strip()
    lines = [ln for ln in block.split("\n") if ln.strip() and ln.strip() != NO_KNOWLEDGE]
    return ParsedAnswer(question, lines)
