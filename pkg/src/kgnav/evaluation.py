"""Dataset-level evaluation: Hits@1 and error categories."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from kgnav.errors import DataError, EmptyDatasetError, ParseError
from kgnav.gateway import LLMGateway
from kgnav.kg import KnowledgeGraph
from kgnav.pipeline import PipelineConfig, QuestionResult, answer_question
from kgnav.prompts import PROMPT_VERSION
from kgnav.question import HopPredictor, Question, parse_topic_entities

logger = logging.getLogger(__name__)


class ErrorCategory(str, Enum):
    RELATION_SELECTION = "RelationSelectionError"
    REASONING = "ReasoningError"
    HALLUCINATION = "Hallucination"
    OTHER = "OtherError"


def infer_hops(path: str | Path) -> int | None:
    """Hop label from a MetaQA-style path such as ``2-hop/vanilla/qa_test.txt``."""
    m = re.search(r"(\d+)[-_ ]?hop", str(path), re.IGNORECASE)
    return int(m.group(1)) if m else None


def load_metaqa_qa(path: str | Path, hops: int | None = None) -> list[Question]:
    """Parse ``question<TAB>answer1|answer2|...`` lines.

    Question ids are ``<file name>:<line number>``. Lines without gold
    answers are skipped with a warning.
    """
    path = Path(path)
    if hops is None:
        hops = infer_hops(path)
    questions: list[Question] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'question<TAB>answers'", lineno, str(path))
            try:
                text, entities = parse_topic_entities(parts[0])
            except ParseError as exc:
                raise ParseError(str(exc), lineno, str(path)) from None
            if not entities:
                raise ParseError("question has no [topic entity]", lineno, str(path))
            answers = [a for a in parts[1].split("|") if a.strip()]
            if not answers:
                logger.warning("%s:%d has no gold answers, skipped", path.name, lineno)
                continue
            questions.append(Question(f"{path.name}:{lineno}", text, entities, answers, hops))
    return questions


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def hits_at_1(extracted: Sequence[str], gold: Iterable[str]) -> bool:
    """True iff the first extracted answer matches any gold answer after normalization."""
    gold_set = {normalize(g) for g in gold}
    if not gold_set:
        raise ValueError("gold answers must be non-empty")
    return bool(extracted) and normalize(extracted[0]) in gold_set


def rk_entities(g: KnowledgeGraph, result: QuestionResult) -> set[str]:
    names: set[str] = set()
    if result.state is not None:
        for t in result.state.rk:
            names.add(normalize(g.entity_name(t.head)))
            names.add(normalize(g.entity_name(t.tail)))
    return names


def classify_error(g: KnowledgeGraph, result: QuestionResult, gold: Iterable[str]) -> ErrorCategory:
    """Bucket a missed question.

    Interruptions and truncated prompts are OtherError, except a backend
    failure during the very first relation selection, before anything was
    retrieved, which counts as a relation selection failure. Otherwise: gold
    absent from the retrieved triples is RelationSelectionError; a first
    answer naming no entity from the knowledge is Hallucination; anything
    else is ReasoningError.
    """
    if result.failure_stage == "retrieval":
        state = result.state
        if state is not None and state.failure_hop == 1 and not state.rk:
            return ErrorCategory.RELATION_SELECTION
        return ErrorCategory.OTHER
    if result.failure_stage is not None or result.record is None:
        return ErrorCategory.OTHER
    if result.record.truncated:
        return ErrorCategory.OTHER
    if not {normalize(x) for x in gold} & rk_entities(g, result):
        return ErrorCategory.RELATION_SELECTION
    if result.record.answers:
        known = {normalize(e) for f in result.facts for e in (f.fixed, *f.entities)}
        if normalize(result.record.answers[0]) not in known:
            return ErrorCategory.HALLUCINATION
    return ErrorCategory.REASONING


def _id_key(qid: str):
    name, _, line = qid.rpartition(":")
    return (name, int(line), "") if line.isdigit() else (qid, -1, qid)


@dataclass
class EvalReport:
    dataset: str
    question_count: int
    hits: int
    hits_at_1: float
    error_histogram: dict[str, int]
    records: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "question_count": self.question_count,
            "hits": self.hits,
            "hits_at_1": self.hits_at_1,
            "error_histogram": self.error_histogram,
            "meta": self.meta,
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def by_hops(self) -> dict[int, float]:
        buckets: dict[int, list[bool]] = {}
        for rec in self.records:
            buckets.setdefault(rec["gold_hops"], []).append(rec["hit"])
        return {h: sum(v) / len(v) for h, v in sorted(buckets.items(), key=lambda kv: str(kv[0]))}


def _record(g: KnowledgeGraph, result: QuestionResult, hit: bool, category: ErrorCategory | None) -> dict:
    q = result.question
    state = result.state
    return {
        "id": q.id,
        "question": q.text,
        "topic_entities": q.topic_entities,
        "gold": q.answers,
        "gold_hops": q.hops,
        "predicted_hops": result.bundle.hops if result.bundle else None,
        "variants": result.bundle.variants if result.bundle else [],
        "answers": result.record.display_answers if result.record else [],
        "raw_completion": result.record.raw if result.record else None,
        "hit": hit,
        "category": category.value if category else None,
        "truncated": result.prompt.truncated if result.prompt else False,
        "prompt_chars": result.prompt.n_chars if result.prompt else 0,
        "rk_size": len(state.rk) if state else 0,
        "hops_run": state.hop if state else 0,
        "diagnostics": [d.to_dict() for d in state.diagnostics] if state else [],
        "failure_stage": result.failure_stage,
        "failure": result.failure,
        "trace": q.id,
    }


def run_eval(
    questions: Sequence[Question],
    graph: KnowledgeGraph,
    gateway: LLMGateway,
    predictor: HopPredictor,
    config: PipelineConfig = PipelineConfig(),
    *,
    workers: int = 1,
    dataset: str = "dataset",
    trace_path: str | Path | None = None,
) -> tuple[EvalReport, list[QuestionResult]]:
    """Answer every question once and score the run.

    Results are assembled in question-id order, so the report does not
    depend on ``workers`` when the backend is deterministic.
    """
    if not questions:
        raise EmptyDatasetError("dataset contains no questions")
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        raise DataError("question ids are not unique")
    for q in questions:
        if not q.answers:
            raise DataError(f"question {q.id} has no gold answers")

    def run(q: Question) -> QuestionResult:
        return answer_question(graph, gateway, q, predictor, config)

    if workers <= 1:
        results = [run(q) for q in questions]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, questions))
    results.sort(key=lambda r: _id_key(r.question.id))

    histogram = {c.value: 0 for c in ErrorCategory}
    records = []
    hits = 0
    for res in results:
        hit = hits_at_1(res.answers, res.question.answers or [])
        category = None
        if hit:
            hits += 1
        else:
            category = classify_error(graph, res, res.question.answers or [])
            histogram[category.value] += 1
        records.append(_record(graph, res, hit, category))

    report = EvalReport(
        dataset=dataset,
        question_count=len(results),
        hits=hits,
        hits_at_1=hits / len(results),
        error_histogram=histogram,
        records=records,
        meta={
            "backend": gateway.backend.name,
            "model": gateway.model,
            "prompt_version": PROMPT_VERSION,
            "k": config.retrieval.k,
            "m": config.retrieval.m,
            "max_hops": config.retrieval.max_hops,
            "n_variants": config.n_variants,
            "budget": config.budget,
            "hop_predictor": predictor.kind,
        },
    )
    if trace_path is not None:
        write_trace(trace_path, results)
    return report, results


def write_trace(path: str | Path, results: Iterable[QuestionResult]) -> None:
    """One JSON line per (question, hop, expanded entity)."""
    with open(path, "w", encoding="utf-8") as fh:
        for res in sorted(results, key=lambda r: _id_key(r.question.id)):
            if res.state is None:
                continue
            for rec in sorted(res.state.trace, key=lambda r: (r["hop"], r["entity"])):
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
