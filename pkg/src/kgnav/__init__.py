"""Multi-hop question answering over a knowledge graph with an LLM in the loop.

Three stages: question analysis (hop count, paraphrases), iterative
retrieval with weighted relation voting, and reasoning over aggregated,
verbalized triples.
"""

from kgnav.condense import (
    AggregatedFact,
    VerbalizationTemplate,
    aggregate,
    build_answer_prompt,
    extract_answers,
    flatten,
    verbalize,
)
from kgnav.estimator import KGNavEstimator
from kgnav.evaluation import ErrorCategory, EvalReport, classify_error, hits_at_1, run_eval
from kgnav.gateway import CompletionRequest, CompletionResponse, LLMGateway, ResponseCache, fingerprint
from kgnav.kg import DirectedRelation, Direction, KnowledgeGraph, Triple, load_metaqa_kb
from kgnav.pipeline import PipelineConfig, QuestionResult, answer_question
from kgnav.question import Question, QuestionBundle, generate_variants, parse_topic_entities, predict_hops
from kgnav.retrieval import (
    Ballot,
    RetrievalConfig,
    RetrievalState,
    cast_ballots,
    gather_candidates,
    retrieve,
    select_top_m,
    tally_votes,
)

__version__ = "0.1.0"

__all__ = [
    "AggregatedFact",
    "Ballot",
    "CompletionRequest",
    "CompletionResponse",
    "DirectedRelation",
    "Direction",
    "ErrorCategory",
    "EvalReport",
    "KnowledgeGraph",
    "KGNavEstimator",
    "LLMGateway",
    "PipelineConfig",
    "Question",
    "QuestionBundle",
    "QuestionResult",
    "ResponseCache",
    "RetrievalConfig",
    "RetrievalState",
    "Triple",
    "VerbalizationTemplate",
    "aggregate",
    "answer_question",
    "build_answer_prompt",
    "cast_ballots",
    "classify_error",
    "extract_answers",
    "fingerprint",
    "flatten",
    "gather_candidates",
    "generate_variants",
    "hits_at_1",
    "load_metaqa_kb",
    "parse_topic_entities",
    "predict_hops",
    "retrieve",
    "run_eval",
    "select_top_m",
    "tally_votes",
    "verbalize",
]
