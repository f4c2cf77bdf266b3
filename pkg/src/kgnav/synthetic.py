"""Random graphs with questions whose gold relation paths exist by construction."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from kgnav.backends import write_gold_relations
from kgnav.kg import KnowledgeGraph
from kgnav.question import Question


def walk(triples: Iterable[tuple[str, str, str]], start: Iterable[str], path: Sequence[str]) -> set[str]:
    """Entities reached by following ``path`` in either direction, never revisiting.

    Mirrors the retrieval frontier rule: after each step the current
    frontier joins the visited set and only unvisited endpoints go on.
    """
    by_rel: dict[str, list[tuple[str, str]]] = {}
    for h, r, t in triples:
        by_rel.setdefault(r, []).append((h, t))
    frontier = set(start)
    visited: set[str] = set()
    for rel in path:
        visited |= frontier
        nxt = set()
        for h, t in by_rel.get(rel, ()):
            if h in frontier and t not in visited:
                nxt.add(t)
            if t in frontier and h not in visited:
                nxt.add(h)
        frontier = nxt
    return frontier


@dataclass
class SyntheticDataset:
    triples: list[tuple[str, str, str]]
    questions: list[Question]
    gold_relations: dict[str, list[str]] = field(default_factory=dict)

    def graph(self) -> KnowledgeGraph:
        return KnowledgeGraph(self.triples)

    def write(self, directory: str | Path, stem: str = "synthetic") -> dict[str, Path]:
        """Write ``kb.txt``, one MetaQA QA file per hop count and the oracle sidecar.

        Question ids in the sidecar match the ids :func:`load_metaqa_qa`
        assigns to the written files.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"kb": directory / "kb.txt", "sidecar": directory / "gold_paths.jsonl"}
        paths["kb"].write_text("".join(f"{h}|{r}|{t}\n" for h, r, t in self.triples), encoding="utf-8")
        gold: dict[str, list[str]] = {}
        by_hops: dict[int, list[Question]] = {}
        for q in self.questions:
            by_hops.setdefault(q.hops or 0, []).append(q)
        for hops, qs in sorted(by_hops.items()):
            qa = directory / f"{stem}_{hops}hop.txt"
            paths[f"qa{hops}"] = qa
            lines = []
            for lineno, q in enumerate(qs, start=1):
                raw = q.text
                for ent in q.topic_entities:
                    raw = raw.replace(ent, f"[{ent}]", 1)
                lines.append(f"{raw}\t{'|'.join(q.answers or [])}\n")
                gold[f"{qa.name}:{lineno}"] = self.gold_relations[q.id]
            qa.write_text("".join(lines), encoding="utf-8")
        write_gold_relations(paths["sidecar"], gold)
        return paths


def make_synthetic(
    seed: int = 0,
    n_entities: int | None = None,
    n_relations: int | None = None,
    per_hop: int = 20,
    hops: Sequence[int] = (1, 2, 3),
    degree: float = 2.5,
) -> SyntheticDataset:
    """Random graph (50-200 entities, 5-15 relations by default) plus questions.

    Each question starts at a random entity and follows a random walk of
    ``h`` edges; its gold answers are :func:`walk` over that relation path,
    which is non-empty by construction.
    """
    rng = random.Random(seed)
    n_entities = n_entities or rng.randint(50, 200)
    n_relations = n_relations or rng.randint(5, 15)
    entities = [f"ent{i:03d}" for i in range(n_entities)]
    relations = [f"rel{i:02d}" for i in range(n_relations)]
    triples: set[tuple[str, str, str]] = set()
    target = int(degree * n_entities)
    while len(triples) < target:
        h, t = rng.sample(entities, 2)
        triples.add((h, rng.choice(relations), t))
    ordered = sorted(triples)

    incident: dict[str, list[tuple[str, str]]] = {}
    for h, r, t in ordered:
        incident.setdefault(h, []).append((r, t))
        incident.setdefault(t, []).append((r, h))

    questions: list[Question] = []
    gold: dict[str, list[str]] = {}
    for h_q in hops:
        made = 0
        attempts = 0
        while made < per_hop:
            attempts += 1
            if attempts > 1000 * per_hop:
                raise RuntimeError(f"could not build {per_hop} {h_q}-hop questions")
            start = rng.choice(entities)
            node, path, seen = start, [], {start}
            for _ in range(h_q):
                options = [(r, x) for r, x in incident.get(node, ()) if x not in seen]
                if not options:
                    break
                r, node = rng.choice(options)
                seen.add(node)
                path.append(r)
            if len(path) != h_q:
                continue
            answers = walk(ordered, [start], path)
            if not answers:
                continue
            qid = f"synthetic-{h_q}hop:{made + 1}"
            text = f"starting from {start}, which entities follow {' then '.join(path)}?"
            questions.append(Question(qid, text, [start], sorted(answers), h_q))
            gold[qid] = path
            made += 1
    return SyntheticDataset(ordered, questions, gold)


# MetaQA-style 1-hop templates: (relation, asks for the tail?, phrasing)
MOVIE_TEMPLATES: tuple[tuple[str, bool, str], ...] = (
    ("directed_by", True, "who directed {e}"),
    ("directed_by", False, "what films did {e} direct"),
    ("written_by", True, "who wrote {e}"),
    ("written_by", True, "who is the writer of {e}"),
    ("written_by", False, "what movies did {e} write"),
    ("starred_actors", True, "who acted in {e}"),
    ("starred_actors", True, "who starred in {e}"),
    ("starred_actors", False, "what films did {e} appear in"),
    ("release_year", True, "when was {e} released"),
    ("release_year", False, "which movies were released in {e}"),
    ("in_language", True, "what language is {e} in"),
    ("has_genre", True, "what genre is {e}"),
    ("has_genre", True, "what type of film is {e}"),
    ("has_tags", True, "what words describe {e}"),
    ("has_imdb_rating", True, "how is {e} rated"),
)

_GENRES = ("Drama", "Comedy", "Thriller", "Western", "Horror", "Romance", "Documentary", "Animation")
_LANGUAGES = ("English", "French", "German", "Spanish", "Italian", "Japanese", "Hindi")
_TAGS = ("noir", "space travel", "heist", "coming of age", "courtroom", "road trip", "satire")
_RATINGS = ("bad", "average", "good", "famous")


def make_movie_sample(seed: int = 0, n_movies: int = 120, n_questions: int = 100) -> SyntheticDataset:
    """Movie-domain graph with MetaQA relation names and 1-hop questions.

    A stand-in for the public MetaQA sample: questions are phrased in
    natural language rather than naming relations, so lexical matching is
    not trivially perfect.
    """
    rng = random.Random(seed)
    movies = [f"Title {i:04d}" for i in range(n_movies)]
    people = [f"Person {i:04d}" for i in range(n_movies * 2)]
    years = [str(y) for y in range(1950, 2020)]
    triples: set[tuple[str, str, str]] = set()
    for mv in movies:
        triples.add((mv, "directed_by", rng.choice(people)))
        for p in rng.sample(people, rng.randint(1, 2)):
            triples.add((mv, "written_by", p))
        for p in rng.sample(people, rng.randint(2, 4)):
            triples.add((mv, "starred_actors", p))
        triples.add((mv, "release_year", rng.choice(years)))
        triples.add((mv, "in_language", rng.choice(_LANGUAGES)))
        triples.add((mv, "has_genre", rng.choice(_GENRES)))
        if rng.random() < 0.5:
            triples.add((mv, "has_tags", rng.choice(_TAGS)))
        if rng.random() < 0.5:
            triples.add((mv, "has_imdb_rating", rng.choice(_RATINGS)))
    ordered = sorted(triples)

    by_head: dict[tuple[str, str], list[str]] = {}
    by_tail: dict[tuple[str, str], list[str]] = {}
    for h, r, t in ordered:
        by_head.setdefault((h, r), []).append(t)
        by_tail.setdefault((t, r), []).append(h)

    questions: list[Question] = []
    gold: dict[str, list[str]] = {}
    while len(questions) < n_questions:
        rel, forward, phrasing = rng.choice(MOVIE_TEMPLATES)
        pool = sorted({h for h, r in by_head if r == rel} if forward else {t for t, r in by_tail if r == rel})
        if not pool:
            continue
        ent = rng.choice(pool)
        answers = by_head[(ent, rel)] if forward else by_tail[(ent, rel)]
        qid = f"movies-1hop:{len(questions) + 1}"
        questions.append(Question(qid, phrasing.format(e=ent), [ent], sorted(answers), 1))
        gold[qid] = [rel]
    return SyntheticDataset(ordered, questions, gold)
