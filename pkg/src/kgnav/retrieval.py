"""Iterative, depth-bounded knowledge retrieval with weighted relation voting."""

from __future__ import annotations

import logging
import random
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from kgnav.condense import AnchoredTriple
from kgnav.errors import BackendError, SetupError
from kgnav.gateway import CompletionRequest, LLMGateway
from kgnav.kg import KnowledgeGraph, Triple
from kgnav.prompts import TASK_SELECT, SelectionExample, selection_prompt
from kgnav.question import QuestionBundle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 1  # relations picked per (member, entity) ballot
    m: int = 1  # relations expanded per entity after voting
    max_hops: int = 3
    candidate_cap: int = 50

    def __post_init__(self):
        if self.k < 1 or self.m < 1 or self.max_hops < 1:
            raise ValueError("k, m and max_hops must all be >= 1")
        if self.candidate_cap < self.k:
            raise ValueError("candidate_cap must be >= k")


@dataclass
class Diagnostic:
    kind: str
    message: str
    hop: int | None = None
    entity: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": self.message, "hop": self.hop, "entity": self.entity}


@dataclass(frozen=True)
class Ballot:
    source: int  # 0 = original question, i = i-th variant
    entity: int
    chosen: tuple[str, ...]

    @property
    def weight(self) -> int:
        return QuestionBundle.weight(self.source)


@dataclass(frozen=True)
class Retrieved:
    hop: int
    anchor: int  # entity the triple was expanded from


@dataclass
class RetrievalState:
    """Per-question search state.

    ``rk`` maps each retrieved triple to the hop it first appeared at and
    its anchor entity. ``scoreboard`` keeps the vote tally of every expanded
    entity.
    """

    frontier: set[int] = field(default_factory=set)
    visited: set[int] = field(default_factory=set)
    rk: dict[Triple, Retrieved] = field(default_factory=dict)
    hop: int = 0
    scoreboard: dict[int, dict[str, int]] = field(default_factory=dict)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    interrupted: bool = False
    failure: str | None = None
    failure_hop: int | None = None

    def sorted_rk(self, g: KnowledgeGraph) -> list[tuple[Triple, Retrieved]]:
        return sorted(self.rk.items(), key=lambda kv: (kv[1].hop, g.names(kv[0])))

    def anchored(self, g: KnowledgeGraph) -> list[AnchoredTriple]:
        return [AnchoredTriple(*g.names(t), g.entity_name(r.anchor)) for t, r in self.sorted_rk(g)]

    def canonical(self, g: KnowledgeGraph) -> dict:
        """Name-level, order-normalized view used for equality checks and reports."""
        return {
            "rk": [[*g.names(t), r.hop, g.entity_name(r.anchor)] for t, r in self.sorted_rk(g)],
            "visited": sorted(g.entity_name(e) for e in self.visited),
            "frontier": sorted(g.entity_name(e) for e in self.frontier),
            "scoreboard": {
                g.entity_name(e): dict(sorted(s.items())) for e, s in sorted(
                    self.scoreboard.items(), key=lambda kv: g.entity_name(kv[0])
                )
            },
            "hops": self.hop,
            "interrupted": self.interrupted,
        }


def gather_candidates(
    g: KnowledgeGraph,
    entity: int,
    cap: int,
    diagnostics: list[Diagnostic] | None = None,
    hop: int | None = None,
) -> list[str]:
    """Relation names incident to ``entity``, deduplicated, capped at ``cap``."""
    names: list[str] = []
    for rel in g.relations_of(entity):
        if not names or names[-1] != rel.name:
            names.append(rel.name)
    if len(names) > cap:
        if diagnostics is not None:
            diagnostics.append(
                Diagnostic(
                    "candidates_truncated",
                    f"{len(names)} candidate relations, kept the first {cap}",
                    hop,
                    g.entity_name(entity),
                )
            )
        names = names[:cap]
    return names


def match_relations(response: str, candidates: Sequence[str], k: int) -> list[str]:
    """First ``k`` distinct candidates named in ``response``, in response order.

    Matching is per line (also split on ';' and ','), case-insensitive and
    whitespace-trimmed.
    """
    lookup = {c.strip().lower(): c for c in candidates}
    chosen: list[str] = []
    for line in response.replace(";", "\n").replace(",", "\n").splitlines():
        key = line.strip()
        for prefix in ("- ", "* "):
            if key.startswith(prefix):
                key = key[len(prefix):]
        key = key.strip().strip("`'\".").strip().lower()
        name = lookup.get(key)
        if name is not None and name not in chosen:
            chosen.append(name)
            if len(chosen) == k:
                break
    return chosen


def selection_request(
    gateway: LLMGateway,
    bundle: QuestionBundle,
    source: int,
    text: str,
    entity_name: str,
    candidates: Sequence[str],
    k: int,
    hop: int,
    examples: Sequence[SelectionExample] = (),
) -> CompletionRequest:
    """The request one bundle member casts for one entity."""
    prompt = selection_prompt(text, entity_name, candidates, k, examples)
    tags = {"task": TASK_SELECT, "question_id": bundle.question.id, "hop": hop, "member": source}
    return gateway.request(prompt, tags)


def cast_ballots(
    gateway: LLMGateway,
    bundle: QuestionBundle,
    entity: int,
    entity_name: str,
    candidates: Sequence[str],
    k: int,
    *,
    hop: int = 1,
    examples: Sequence[SelectionExample] = (),
    executor: Executor | None = None,
    diagnostics: list[Diagnostic] | None = None,
) -> list[Ballot]:
    """One ballot per bundle member. Gateway errors propagate."""
    if not candidates:
        raise ValueError("cast_ballots needs at least one candidate")

    def ask(member: tuple[int, str]) -> Ballot:
        source, text = member
        req = selection_request(gateway, bundle, source, text, entity_name, candidates, k, hop, examples)
        chosen = match_relations(gateway.complete(req).text, candidates, k)
        if not chosen and diagnostics is not None:
            diagnostics.append(
                Diagnostic("empty_ballot", f"member {source} named no candidate", hop, entity_name)
            )
        return Ballot(source, entity, tuple(chosen))

    members = bundle.members()
    if executor is None:
        return [ask(m) for m in members]
    return list(executor.map(ask, members))


def tally_votes(ballots: Iterable[Ballot]) -> dict[str, int]:
    """Weighted vote count: 2 per original-question pick, 1 per variant pick."""
    ordered = sorted(ballots, key=lambda b: (b.source, b.chosen))
    if len({b.entity for b in ordered}) > 1:
        raise ValueError("ballots for more than one entity")
    scores: dict[str, int] = {}
    for b in ordered:
        for name in b.chosen:
            scores[name] = scores.get(name, 0) + b.weight
    return dict(sorted(scores.items()))


def select_top_m(scores: Mapping[str, int], m: int) -> list[str]:
    ranked = sorted((kv for kv in scores.items() if kv[1] > 0), key=lambda kv: (-kv[1], kv[0]))
    return [name for name, _ in ranked[:m]]


def retrieve(
    g: KnowledgeGraph,
    gateway: LLMGateway,
    bundle: QuestionBundle,
    cfg: RetrievalConfig = RetrievalConfig(),
    *,
    examples: Sequence[SelectionExample] = (),
    executor: Executor | None = None,
    shuffle: random.Random | None = None,
) -> RetrievalState:
    """Run up to ``bundle.hops`` rounds of select, vote, expand.

    Frontier entities are processed in name order; pass ``shuffle`` to
    permute both the frontier and the ballot order (the result must not
    change). A backend failure stops the search and marks the state
    interrupted instead of raising.
    """
    if not 1 <= bundle.hops <= cfg.max_hops:
        raise SetupError(f"hop count {bundle.hops} outside 1..{cfg.max_hops}")
    state = RetrievalState()
    for name in bundle.question.topic_entities:
        eid = g.entities.get(name)
        if eid is None:
            raise SetupError(f"topic entity {name!r} is not in the graph")
        state.frontier.add(eid)
    if not state.frontier:
        raise SetupError(f"question {bundle.question.id} has no topic entity")

    qid = bundle.question.id
    for hop in range(1, bundle.hops + 1):
        if not state.frontier:
            state.diagnostics.append(
                Diagnostic("early_termination", f"frontier empty before hop {hop}", hop)
            )
            break
        order = sorted(state.frontier, key=g.entity_name)
        if shuffle is not None:
            shuffle.shuffle(order)
        reached: set[int] = set()
        try:
            for entity in order:
                reached |= _expand_entity(
                    g, gateway, bundle, cfg, state, entity, hop, examples, executor, shuffle, qid
                )
        except BackendError as exc:
            state.interrupted = True
            state.failure = f"{type(exc).__name__}: {exc}"
            state.failure_hop = hop
            state.diagnostics.append(Diagnostic("interrupted", state.failure, hop))
            logger.warning("question %s interrupted at hop %d: %s", qid, hop, exc)
            break
        state.hop = hop
        state.visited |= state.frontier
        state.frontier = reached - state.visited
    if not state.rk:
        state.diagnostics.append(Diagnostic("empty_retrieval", "no triples were retrieved"))
    return state


def _expand_entity(g, gateway, bundle, cfg, state, entity, hop, examples, executor, shuffle, qid):
    name = g.entity_name(entity)
    candidates = gather_candidates(g, entity, cfg.candidate_cap, state.diagnostics, hop)
    record = {"question_id": qid, "hop": hop, "entity": name, "candidates": candidates}
    if not candidates:
        state.trace.append({**record, "ballots": [], "scores": {}, "selected": [], "triples_added": []})
        return set()
    ballots = cast_ballots(
        gateway, bundle, entity, name, candidates, cfg.k,
        hop=hop, examples=examples, executor=executor, diagnostics=state.diagnostics,
    )
    if shuffle is not None:
        shuffle.shuffle(ballots)
    scores = tally_votes(ballots)
    state.scoreboard[entity] = scores
    selected = select_top_m(scores, cfg.m)
    reached: set[int] = set()
    added = []
    for rel_name in selected:
        for t in g.expand(entity, g.relation_id(rel_name)):
            reached.add(t.tail if t.head == entity else t.head)
            if t not in state.rk:
                # same-hop duplicates from both endpoints: prefer the head as anchor
                anchor = t.head if t.head in state.frontier else entity
                state.rk[t] = Retrieved(hop, anchor)
                added.append(list(g.names(t)))
    state.trace.append(
        {
            **record,
            "ballots": [{"source": b.source, "chosen": list(b.chosen)} for b in sorted(ballots, key=lambda b: b.source)],
            "scores": scores,
            "selected": selected,
            "triples_added": sorted(added),
        }
    )
    return reached
