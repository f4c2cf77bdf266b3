"""Run configuration from an INI file.

Example::

    [llm]
    backend = mock-lexical      ; http | mock-lexical | mock-oracle | mock-replay
    model = gpt-3.5-turbo
    base_url = https://api.openai.com/v1
    temperature = 0
    max_tokens = 1024
    cache = runs/cache.jsonl
    oracle_sidecar = gold_paths.jsonl
    replay = replay.jsonl

    [retrieval]
    k = 1
    m = 1
    h = 3
    variants = 2
    candidate_cap = 50
    hop_predictor = heuristic   ; heuristic | oracle | fixed:N

    [prompts]
    templates = templates.tsv
    few_shot = answer_examples.jsonl
    selection_few_shot = selection_examples.jsonl

    [eval]
    budget = 3072
    hops = 2

Relative paths resolve against the config file's directory. The API key
for the http backend is read from ``KGNAV_API_KEY`` only.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from pathlib import Path

from kgnav.backends import HttpBackend, LexicalBackend, OracleBackend, ReplayBackend
from kgnav.condense import VerbalizationTemplate, load_overrides
from kgnav.errors import ConfigError, ParseError, TemplateError
from kgnav.gateway import DEFAULT_MAX_TOKENS, LLMGateway, ResponseCache
from kgnav.pipeline import PipelineConfig
from kgnav.prompts import AnswerExample, SelectionExample
from kgnav.question import HopPredictor, make_hop_predictor
from kgnav.retrieval import RetrievalConfig

BACKENDS = ("http", "mock-lexical", "mock-oracle", "mock-replay")


@dataclass
class Settings:
    backend: str = "mock-lexical"
    model: str = ""
    base_url: str = ""
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    cache: Path | None = None
    oracle_sidecar: Path | None = None
    replay: Path | None = None
    k: int = 1
    m: int = 1
    max_hops: int = 3
    n_variants: int = 2
    candidate_cap: int = 50
    hop_predictor: str = "heuristic"
    templates: Path | None = None
    few_shot: Path | None = None
    selection_few_shot: Path | None = None
    budget: int = 3072
    hops: int | None = None


def _path(base: Path, value: str | None) -> Path | None:
    if not value:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def load_config(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = path.parent
    s = Settings()
    try:
        if parser.has_section("llm"):
            llm = parser["llm"]
            s.backend = llm.get("backend", s.backend).strip()
            s.model = llm.get("model", s.model).strip()
            s.base_url = llm.get("base_url", s.base_url).strip()
            s.temperature = llm.getfloat("temperature", s.temperature)
            s.max_tokens = llm.getint("max_tokens", s.max_tokens)
            if "api_key" in llm:
                raise ConfigError("API keys are not read from config files; set KGNAV_API_KEY")
            s.cache = _path(base, llm.get("cache"))
            s.oracle_sidecar = _path(base, llm.get("oracle_sidecar"))
            s.replay = _path(base, llm.get("replay"))
        if parser.has_section("retrieval"):
            r = parser["retrieval"]
            s.k = r.getint("k", s.k)
            s.m = r.getint("m", s.m)
            s.max_hops = r.getint("h", s.max_hops)
            s.n_variants = r.getint("variants", s.n_variants)
            s.candidate_cap = r.getint("candidate_cap", s.candidate_cap)
            s.hop_predictor = r.get("hop_predictor", s.hop_predictor).strip()
        if parser.has_section("prompts"):
            p = parser["prompts"]
            s.templates = _path(base, p.get("templates"))
            s.few_shot = _path(base, p.get("few_shot"))
            s.selection_few_shot = _path(base, p.get("selection_few_shot"))
        if parser.has_section("eval"):
            e = parser["eval"]
            s.budget = e.getint("budget", s.budget)
            if e.get("hops"):
                s.hops = e.getint("hops")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if s.backend not in BACKENDS:
        raise ConfigError(f"unknown backend {s.backend!r}; expected one of {', '.join(BACKENDS)}")
    return s


def build_gateway(s: Settings, *, use_cache: bool = True) -> LLMGateway:
    if s.backend == "http":
        backend = HttpBackend(s.base_url, s.model)
    elif s.backend == "mock-lexical":
        backend = LexicalBackend()
    elif s.backend == "mock-oracle":
        if s.oracle_sidecar is None:
            raise ConfigError("mock-oracle needs [llm] oracle_sidecar")
        backend = OracleBackend.from_sidecar(s.oracle_sidecar)
    elif s.backend == "mock-replay":
        if s.replay is None:
            raise ConfigError("mock-replay needs [llm] replay")
        backend = ReplayBackend.from_file(s.replay)
    else:  # pragma: no cover - load_config validates
        raise ConfigError(f"unknown backend {s.backend!r}")
    cache = ResponseCache(s.cache) if use_cache else None
    return LLMGateway(backend, cache, model=s.model, max_tokens=s.max_tokens, temperature=s.temperature)


def build_predictor(s: Settings, override: str | None = None) -> HopPredictor:
    try:
        return make_hop_predictor(override or s.hop_predictor, s.max_hops)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(str(exc), lineno, str(path)) from None
    return rows


def load_answer_examples(path: Path) -> list[AnswerExample]:
    """JSON Lines ``{question, knowledge: [sentence, ...], answer}``."""
    try:
        return [
            AnswerExample(r["question"], tuple(r.get("knowledge", ())), r["answer"])
            for r in _read_jsonl(path)
        ]
    except KeyError as exc:
        raise ParseError(f"few-shot record missing {exc}", source=str(path)) from None


def load_selection_examples(path: Path) -> list[SelectionExample]:
    """JSON Lines ``{question, entity, candidates: [...], answer: [...]}``."""
    try:
        return [
            SelectionExample(r["question"], r["entity"], tuple(r["candidates"]), tuple(r["answer"]))
            for r in _read_jsonl(path)
        ]
    except KeyError as exc:
        raise ParseError(f"few-shot record missing {exc}", source=str(path)) from None


def build_pipeline_config(s: Settings) -> PipelineConfig:
    try:
        retrieval = RetrievalConfig(s.k, s.m, s.max_hops, s.candidate_cap)
        template = VerbalizationTemplate(overrides=load_overrides(s.templates) if s.templates else {})
    except (ValueError, TemplateError) as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(
        retrieval=retrieval,
        n_variants=s.n_variants,
        budget=s.budget,
        template=template,
        answer_examples=load_answer_examples(s.few_shot) if s.few_shot else (),
        selection_examples=load_selection_examples(s.selection_few_shot) if s.selection_few_shot else (),
    )
