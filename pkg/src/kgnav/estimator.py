"""scikit-learn style front end.

``fit`` indexes a knowledge graph, ``predict`` answers questions,
``transform`` returns the verbalized knowledge each question would be
answered from, and ``score`` is Hits@1. Hyper-parameters are plain
constructor arguments, so ``get_params``/``set_params``/``clone`` work.

>>> nav = KGNavEstimator(backend="mock-lexical", n_variants=0)
>>> nav = nav.fit([("Splash", "written_by", "Babaloo Mandel")])
>>> nav.predict(["what films did [Babaloo Mandel] write"]).tolist()
['Splash']
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from kgnav.backends import HttpBackend, LexicalBackend, OracleBackend, ReplayBackend
from kgnav.condense import VerbalizationTemplate
from kgnav.evaluation import hits_at_1
from kgnav.gateway import LLMGateway, ResponseCache
from kgnav.kg import KnowledgeGraph, load_metaqa_kb
from kgnav.pipeline import PipelineConfig, QuestionResult, answer_question, condense
from kgnav.question import Question, analyze, make_hop_predictor
from kgnav.retrieval import RetrievalConfig, retrieve


def check_triples(X) -> KnowledgeGraph:
    """Coerce ``X`` to a :class:`KnowledgeGraph`.

    Accepts a graph, a kb file path, raw kb bytes, or an iterable of
    ``(head, relation, tail)`` string triples.
    """
    if isinstance(X, KnowledgeGraph):
        return X
    if isinstance(X, (str, Path, bytes)):
        return load_metaqa_kb(X)
    rows = []
    for i, row in enumerate(X):
        row = tuple(row)
        if len(row) != 3 or not all(isinstance(x, str) for x in row):
            raise ValueError(f"row {i} is not a (head, relation, tail) string triple: {row!r}")
        rows.append(row)
    return KnowledgeGraph(rows)


def check_questions(X) -> list[Question]:
    """Coerce ``X`` to questions.

    Items may be :class:`Question` objects or strings with ``[entity]``
    markup; string ids are their position in ``X``.
    """
    if isinstance(X, (str, Question)):
        X = [X]
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Question):
            out.append(item)
        elif isinstance(item, str):
            q = Question.from_raw(str(i), item)
            if not q.topic_entities:
                raise ValueError(f"question {i} has no [topic entity] markup: {item!r}")
            out.append(q)
        else:
            raise TypeError(f"cannot interpret {type(item).__name__} as a question")
    return out


class KGNavEstimator(BaseEstimator):
    def __init__(
        self,
        backend: str = "mock-lexical",
        model: str = "",
        base_url: str = "",
        temperature: float = 0.0,
        max_tokens: int = 1024,
        k: int = 1,
        m: int = 1,
        max_hops: int = 3,
        n_variants: int = 2,
        candidate_cap: int = 50,
        budget: int = 3072,
        hop_predictor="heuristic",
        template_overrides: Mapping[str, str] | None = None,
        gold_relations: Mapping[str, Sequence[str]] | None = None,
        replay: Mapping[str, str] | None = None,
        cache_path: str | None = None,
        gateway: LLMGateway | None = None,
        n_jobs: int = 1,
    ):
        self.backend = backend
        self.model = model
        self.base_url = base_url
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.k = k
        self.m = m
        self.max_hops = max_hops
        self.n_variants = n_variants
        self.candidate_cap = candidate_cap
        self.budget = budget
        self.hop_predictor = hop_predictor
        self.template_overrides = template_overrides
        self.gold_relations = gold_relations
        self.replay = replay
        self.cache_path = cache_path
        self.gateway = gateway
        self.n_jobs = n_jobs

    def _make_gateway(self) -> LLMGateway:
        if self.gateway is not None:
            return self.gateway
        if self.backend == "http":
            backend = HttpBackend(self.base_url, self.model)
        elif self.backend == "mock-lexical":
            backend = LexicalBackend()
        elif self.backend == "mock-oracle":
            backend = OracleBackend(self.gold_relations or {})
        elif self.backend == "mock-replay":
            backend = ReplayBackend(self.replay or {})
        else:
            raise ValueError(f"unknown backend {self.backend!r}")
        return LLMGateway(
            backend,
            ResponseCache(self.cache_path),
            model=self.model,
            max_tokens=self.max_tokens,
            temperature=self.temperature,
        )

    def fit(self, X, y=None):
        self.graph_ = check_triples(X)
        self.gateway_ = self._make_gateway()
        self.predictor_ = make_hop_predictor(self.hop_predictor, self.max_hops)
        self.config_ = PipelineConfig(
            retrieval=RetrievalConfig(self.k, self.m, self.max_hops, self.candidate_cap),
            n_variants=self.n_variants,
            budget=self.budget,
            template=VerbalizationTemplate(overrides=dict(self.template_overrides or {})),
        )
        self.n_entities_ = self.graph_.n_entities
        self.n_relations_ = self.graph_.n_relations
        return self

    def _map(self, fn, items):
        if self.n_jobs <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
            return list(pool.map(fn, items))

    def predict_results(self, X) -> list[QuestionResult]:
        check_is_fitted(self, "graph_")
        questions = check_questions(X)
        return self._map(
            lambda q: answer_question(self.graph_, self.gateway_, q, self.predictor_, self.config_),
            questions,
        )

    def predict(self, X) -> np.ndarray:
        """First extracted answer per question ('' when there is none)."""
        return np.array([r.first_answer or "" for r in self.predict_results(X)], dtype=object)

    def transform(self, X) -> list[list[str]]:
        """Verbalized retrieved knowledge per question (no answer generation)."""
        check_is_fitted(self, "graph_")

        def one(q: Question) -> list[str]:
            bundle = analyze(self.gateway_, q, self.predictor_, self.n_variants)
            bundle.hops = min(bundle.hops, self.max_hops)
            state = retrieve(self.graph_, self.gateway_, bundle, self.config_.retrieval)
            return condense(self.graph_, state, self.config_.template)[1]

        return self._map(one, check_questions(X))

    def score(self, X, y: Iterable[Sequence[str]] | None = None) -> float:
        """Hits@1. Gold answers come from ``y`` or from each question's ``answers``."""
        results = self.predict_results(X)
        golds = list(y) if y is not None else [r.question.answers for r in results]
        if len(golds) != len(results):
            raise ValueError("X and y have different lengths")
        if not results:
            raise ValueError("cannot score an empty question set")
        hits = [hits_at_1(r.answers, g or []) for r, g in zip(results, golds)]
        return float(np.mean(hits))
