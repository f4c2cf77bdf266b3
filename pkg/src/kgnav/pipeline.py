"""One question through all three stages: analysis, retrieval, reasoning."""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Sequence

from kgnav.condense import (
    AggregatedFact,
    AnswerPrompt,
    AnswerRecord,
    VerbalizationTemplate,
    aggregate,
    build_answer_prompt,
    verbalize,
)
from kgnav.errors import BackendError, DataError
from kgnav.gateway import CompletionRequest, LLMGateway
from kgnav.kg import KnowledgeGraph
from kgnav.prompts import TASK_ANSWER, AnswerExample, SelectionExample
from kgnav.question import HopPredictor, Question, QuestionBundle, generate_variants
from kgnav.retrieval import RetrievalConfig, RetrievalState, retrieve

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    n_variants: int = 2
    budget: int = 3072  # answer prompt tokens: 4096 context minus 1024 for output
    template: VerbalizationTemplate = field(default_factory=VerbalizationTemplate)
    answer_examples: Sequence[AnswerExample] = ()
    selection_examples: Sequence[SelectionExample] = ()


@dataclass
class QuestionResult:
    question: Question
    bundle: QuestionBundle | None = None
    state: RetrievalState | None = None
    facts: list[AggregatedFact] = field(default_factory=list)
    knowledge: list[str] = field(default_factory=list)
    prompt: AnswerPrompt | None = None
    record: AnswerRecord | None = None
    failure_stage: str | None = None  # setup | analysis | retrieval | reasoning
    failure: str | None = None

    @property
    def answers(self) -> list[str]:
        return self.record.answers if self.record else []

    @property
    def first_answer(self) -> str | None:
        return self.record.display_answers[0] if self.record and self.record.display_answers else None


def condense(g: KnowledgeGraph, state: RetrievalState, template: VerbalizationTemplate):
    facts = aggregate(state.anchored(g))
    return facts, [verbalize(f, template) for f in facts]


def answer_request(gateway: LLMGateway, question: Question, prompt: AnswerPrompt) -> CompletionRequest:
    return gateway.request(prompt.text, {"task": TASK_ANSWER, "question_id": question.id})


def answer_question(
    g: KnowledgeGraph,
    gateway: LLMGateway,
    question: Question,
    predictor: HopPredictor,
    config: PipelineConfig = PipelineConfig(),
    *,
    executor: Executor | None = None,
) -> QuestionResult:
    """Run the full pipeline; backend and data problems are recorded, not raised."""
    result = QuestionResult(question)
    try:
        hops = min(predictor.predict(question), config.retrieval.max_hops)
        variants = generate_variants(gateway, question, config.n_variants)
    except (BackendError, DataError) as exc:
        return _fail(result, "analysis", exc)
    result.bundle = QuestionBundle(question, variants, hops)

    try:
        result.state = retrieve(
            g, gateway, result.bundle, config.retrieval,
            examples=config.selection_examples, executor=executor,
        )
    except DataError as exc:
        return _fail(result, "setup", exc)
    if result.state.interrupted:
        result.failure_stage = "retrieval"
        result.failure = result.state.failure

    result.facts, result.knowledge = condense(g, result.state, config.template)
    result.prompt = build_answer_prompt(
        question.text, result.knowledge, config.answer_examples, config.budget
    )
    try:
        raw = gateway.complete(answer_request(gateway, question, result.prompt)).text
    except BackendError as exc:
        return _fail(result, "reasoning", exc)
    result.record = AnswerRecord.from_completion(question.id, raw, result.prompt)
    return result


def _fail(result: QuestionResult, stage: str, exc: Exception) -> QuestionResult:
    result.failure_stage = stage
    result.failure = f"{type(exc).__name__}: {exc}"
    logger.warning("question %s failed during %s: %s", result.question.id, stage, exc)
    return result
