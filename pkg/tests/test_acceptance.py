"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run alone with ``pytest -m acceptance -s``. MetaQA-dependent checks look
for the public dataset under ``$KGNAV_METAQA_DIR`` (the directory holding
``kb.txt`` and ``1-hop/vanilla/qa_test.txt``).
"""

import json
import os
import random
import time
import warnings
from collections import Counter
from contextlib import contextmanager
from pathlib import Path

import pytest

from kgnav.backends import LexicalBackend, OracleBackend
from kgnav.cli import main
from kgnav.condense import VerbalizationTemplate, aggregate, build_answer_prompt, flatten, verbalize
from kgnav.evaluation import load_metaqa_qa, run_eval
from kgnav.gateway import LLMGateway
from kgnav.kg import load_metaqa_kb
from kgnav.pipeline import PipelineConfig, answer_question, answer_request, condense
from kgnav.question import OracleHopPredictor, Question, QuestionBundle
from kgnav.retrieval import Ballot, RetrievalConfig, retrieve, select_top_m, tally_votes
from kgnav.synthetic import make_movie_sample, make_synthetic

from conftest import ACCEPTANCE, CASE_VARIANTS, HashBackend, random_graph, retrieval_invariants

pytestmark = pytest.mark.acceptance

METAQA_DIR = os.environ.get("KGNAV_METAQA_DIR")


@contextmanager
def criterion(num, limit, label):
    """Record pass/fail for criterion ``num`` and enforce its time limit."""
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert limit is None or elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
    except BaseException as exc:
        ACCEPTANCE[num] = ("FAIL", f"{label}: {exc}")
        print(f"criterion {num}: FAIL {label}: {exc}")
        raise
    ACCEPTANCE[num] = ("PASS", f"{label} ({elapsed:.2f}s)")
    print(f"criterion {num}: PASS {label} ({elapsed:.2f}s)")


def test_1_golden_case_study(case_graph, case_gateway, case_question):
    with criterion(1, 1.0, "golden case study"):
        cfg = PipelineConfig(
            retrieval=RetrievalConfig(k=1, m=1),
            n_variants=2,
            template=VerbalizationTemplate(overrides={"starred_actors": "The actors starred in {head} are: {tail}"}),
        )
        bundle = QuestionBundle(case_question, list(CASE_VARIANTS), 2)
        state = retrieve(case_graph, case_gateway, bundle, cfg.retrieval)
        mandel = case_graph.entity_id("Babaloo Mandel")
        assert state.scoreboard[mandel] == {"written_by": 3, "created_by": 1}
        hop1 = sorted(case_graph.names(t) for t, r in state.rk.items() if r.hop == 1)
        assert hop1 == [("Parenthood", "written_by", "Babaloo Mandel"), ("Splash", "written_by", "Babaloo Mandel")]
        hanks = (case_graph.entity_id("Splash"), case_graph.relation_id("starred_actors"), case_graph.entity_id("Tom Hanks"))
        assert [r.hop for t, r in state.rk.items() if tuple(t) == hanks] == [2]
        _, knowledge = condense(case_graph, state, cfg.template)
        assert "The actors starred in Splash are: Dary Hannah and Tom Hanks" in knowledge

        prompt = build_answer_prompt(case_question.text, knowledge, budget=cfg.budget)
        case_gateway.backend.add(answer_request(case_gateway, case_question, prompt), "Tom Hanks, Dary Hannah")
        res = answer_question(case_graph, case_gateway, case_question, OracleHopPredictor(), cfg)
        assert res.first_answer == "Tom Hanks"


def test_2_oracle_end_to_end():
    with criterion(2, 10.0, "oracle mode end to end, hops 1-3"):
        per_hop: dict[int, list[bool]] = {}
        for seed in range(3):
            ds = make_synthetic(seed, per_hop=20)
            g = ds.graph()
            assert 50 <= g.n_entities <= 200 and 5 <= g.n_relations <= 15
            gw = LLMGateway(OracleBackend(ds.gold_relations))
            report, _ = run_eval(ds.questions, g, gw, OracleHopPredictor(), PipelineConfig(budget=1_000_000))
            for rec in report.records:
                per_hop.setdefault(rec["gold_hops"], []).append(rec["hit"])
        assert sorted(per_hop) == [1, 2, 3]
        for h, hits in per_hop.items():
            assert len(hits) >= 20
            assert sum(hits) / len(hits) == 1.0, f"{h}-hop Hits@1 = {sum(hits) / len(hits)}"


def brute_recount(ballots):
    scores = Counter()
    for b in ballots:
        w = 2 if b.source == 0 else 1
        for rel in b.chosen:
            scores[rel] += w
    return {r: s for r, s in scores.items() if s}


def exhaustive_top(scores, m):
    # a relation is kept iff fewer than m others beat it
    def beats(a, b):
        return scores[a] > scores[b] or (scores[a] == scores[b] and a < b)

    keep = [r for r in scores if scores[r] > 0 and sum(beats(o, r) for o in scores if o != r) < m]
    return sorted(keep, key=lambda r: sum(beats(o, r) for o in scores if o != r))


def test_3_voting_oracle():
    with criterion(3, 5.0, "1000 ballot sets vs brute-force recount"):
        rng = random.Random(3)
        for _ in range(1000):
            pool = [f"r{i}" for i in range(rng.randint(1, 8))]
            k = rng.randint(1, len(pool))
            n_variants = rng.randint(0, 5)
            ballots = [
                Ballot(s, 0, tuple(rng.sample(pool, rng.randint(0, k)))) for s in range(n_variants + 1)
            ]
            rng.shuffle(ballots)
            scores = tally_votes(ballots)
            assert scores == brute_recount(ballots)
            m = rng.randint(1, len(pool))
            assert select_top_m(scores, m) == exhaustive_top(scores, m)


def test_4_aggregation_round_trip():
    with criterion(4, 5.0, "1000 aggregation round trips"):
        rng = random.Random(4)
        names = [f"e{i}" for i in range(8)]
        rels = ["r0", "r1", "r2"]
        for _ in range(1000):
            triples = {(rng.choice(names), rng.choice(rels), rng.choice(names)) for _ in range(rng.randint(0, 20))}
            items = [(h, r, t, rng.choice([None, h, t])) for h, r, t in sorted(triples)]
            facts = aggregate(items)
            assert Counter(t[:3] for t in flatten(facts)) == Counter(triples)
            assert aggregate(flatten(facts)) == facts
            for f in facts:
                verbalize(f)


def test_5_retrieval_fuzz():
    with criterion(5, 30.0, "500 retrieval fuzz instances"):
        rng = random.Random(5)
        gw = LLMGateway(HashBackend())
        for i in range(500):
            g = random_graph(rng, n_entities=rng.randint(5, 20), n_relations=rng.randint(1, 5), n_triples=rng.randint(0, 40))
            start = g.entity_name(rng.randrange(g.n_entities))
            q = Question(f"fuzz:{i}", f"about {start}", [start])
            bundle = QuestionBundle(q, [f"variant {j}" for j in range(rng.randint(0, 2))], rng.randint(1, 3))
            cfg = RetrievalConfig(k=rng.randint(1, 2), m=rng.randint(1, 2))
            state = retrieval_invariants(g, gw, bundle, cfg, seed=i)
            again = retrieve(g, gw, bundle, cfg, shuffle=random.Random(i + 1))
            assert json.dumps(again.canonical(g)) == json.dumps(state.canonical(g))


def test_6_metaqa_scale():
    kb = Path(METAQA_DIR) / "kb.txt" if METAQA_DIR else None
    if kb is None or not kb.exists():
        ACCEPTANCE[6] = ("SKIP", "MetaQA kb.txt not found; set KGNAV_METAQA_DIR")
        warnings.warn("MetaQA kb.txt not found; criterion 6 skipped")
        pytest.skip("MetaQA kb.txt not available")
    with criterion(6, 5.0, "MetaQA kb load"):
        g = load_metaqa_kb(kb)
        # exact counts from the file itself, compared against the published rounding
        lines = {line.rstrip("\r\n") for line in kb.read_text(encoding="utf-8").splitlines() if line.strip()}
        assert len(g) == len(lines)
        assert g.n_relations == 9
        assert 42_000 <= g.n_entities <= 44_000
        assert 133_000 <= len(g) <= 136_000
        print(f"MetaQA kb: {g.n_entities} entities, {g.n_relations} relations, {len(g)} triples")


def _lexical_sample(tmp_path):
    """(kb path, qa path, label): the real 1-hop sample when present, else synthetic."""
    if METAQA_DIR and (Path(METAQA_DIR) / "1-hop/vanilla/qa_test.txt").exists():
        src = Path(METAQA_DIR) / "1-hop/vanilla/qa_test.txt"
        qa = tmp_path / "metaqa_1hop_sample.txt"
        qa.write_text("".join(src.read_text(encoding="utf-8").splitlines(keepends=True)[:100]), encoding="utf-8")
        return Path(METAQA_DIR) / "kb.txt", qa, "MetaQA 1-hop, first 100"
    paths = make_movie_sample(7).write(tmp_path / "syn", stem="movies")
    return paths["kb"], paths["qa1"], "synthetic movie-domain 1-hop stand-in, MetaQA not found"


def test_7_lexical_tracked_metric(tmp_path):
    with criterion(7, None, "lexical backend tracked metric"):
        kb, qa, label = _lexical_sample(tmp_path)
        g = load_metaqa_kb(kb)
        questions = load_metaqa_qa(qa, hops=1)[:100]
        runs = []
        for _ in range(2):
            report, _ = run_eval(questions, g, LLMGateway(LexicalBackend()), OracleHopPredictor(), dataset=qa.name)
            runs.append(report.to_json())
        assert runs[0] == runs[1]
        report = json.loads(runs[0])
        line = f"tracked Hits@1 (mock-lexical, {label}, n={report['question_count']}): {report['hits_at_1']:.4f}"
        print(line)
    ACCEPTANCE[7] = ("PASS", line + "; deterministic across reruns")


def test_8_cli_determinism(tmp_path):
    with criterion(8, None, "kgnav eval byte-identical across runs and workers"):
        ds = make_synthetic(8, per_hop=10)
        paths = ds.write(tmp_path / "data")
        configs = {
            "lexical": "[llm]\nbackend = mock-lexical\n",
            "oracle": "[llm]\nbackend = mock-oracle\noracle_sidecar = gold_paths.jsonl\n\n[retrieval]\nhop_predictor = oracle\n",
        }
        for name, text in configs.items():
            cfg = tmp_path / "data" / f"{name}.ini"
            cfg.write_text(text)
            outputs = []
            for run, workers in enumerate((1, 1, 8)):
                report = tmp_path / f"{name}-{run}.json"
                trace = tmp_path / f"{name}-{run}.jsonl"
                argv = ["eval", "--kb", str(paths["kb"]), "--qa", str(paths["qa2"]), "--config", str(cfg),
                        "--workers", str(workers), "--report", str(report), "--trace", str(trace)]
                assert main(argv) == 0
                outputs.append((report.read_bytes(), trace.read_bytes()))
            assert outputs[0] == outputs[1] == outputs[2], f"{name} reports differ"
