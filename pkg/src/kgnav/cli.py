"""``kgnav`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from kgnav.config import build_gateway, build_pipeline_config, build_predictor, load_config
from kgnav.errors import BackendError, ConfigError, DataError, KGNavError, ParseError
from kgnav.evaluation import infer_hops, load_metaqa_qa, run_eval
from kgnav.gateway import ResponseCache
from kgnav.kg import load_metaqa_kb
from kgnav.pipeline import answer_question
from kgnav.question import Question, parse_topic_entities

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_kb(path: str):
    try:
        return load_metaqa_kb(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None


def cmd_stats(args) -> int:
    t0 = time.perf_counter()
    g = _load_kb(args.kb)
    elapsed = time.perf_counter() - t0
    print(f"entities\t{g.n_entities}")
    print(f"relations\t{g.n_relations}")
    print(f"triples\t{len(g)}")
    print(f"load_seconds\t{elapsed:.2f}", file=sys.stderr)
    return EXIT_OK


def cmd_ask(args) -> int:
    settings = load_config(args.config)
    g = _load_kb(args.kb)
    text, marked = parse_topic_entities(args.question)
    entities = list(dict.fromkeys((args.entity or []) + marked))
    if not entities:
        raise ConfigError("give at least one --entity or mark it as [entity] in the question")
    hops = None if args.hops in (None, "auto") else args.hops
    if hops is not None and not hops.isdigit():
        raise ConfigError(f"--hops must be a number or 'auto', not {args.hops!r}")
    predictor = build_predictor(settings, "heuristic" if hops is None else f"fixed:{hops}")
    gateway = build_gateway(settings)
    config = build_pipeline_config(settings)
    q = Question("cli:1", text, entities)
    result = answer_question(g, gateway, q, predictor, config)
    if result.failure_stage == "setup":
        raise DataError(result.failure or "setup failed")
    if result.record is None:
        raise BackendError(result.failure or "no answer was produced")
    print(", ".join(result.record.display_answers) if result.record.display_answers else "(no answer)")
    if args.trace:
        payload = {
            "hops": result.bundle.hops if result.bundle else None,
            "variants": result.bundle.variants if result.bundle else [],
            "knowledge": result.knowledge,
            "trace": result.state.trace if result.state else [],
            "diagnostics": [d.to_dict() for d in result.state.diagnostics] if result.state else [],
            "raw_completion": result.record.raw,
        }
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_eval(args) -> int:
    settings = load_config(args.config)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    hops = args.hops or settings.hops or infer_hops(args.qa)
    questions = load_metaqa_qa(args.qa, hops)
    g = _load_kb(args.kb)
    gateway = build_gateway(settings)
    predictor = build_predictor(settings)
    config = build_pipeline_config(settings)
    report, _ = run_eval(
        questions, g, gateway, predictor, config,
        workers=args.workers, dataset=Path(args.qa).name, trace_path=args.trace,
    )
    text = report.to_json()
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(
        f"{report.dataset}: Hits@1 = {report.hits_at_1:.4f} ({report.hits}/{report.question_count}); "
        f"errors {report.error_histogram}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_cache(args) -> int:
    path = Path(args.path)
    if args.action == "clear":
        ResponseCache(path).clear()
        print(f"cleared {path}")
        return EXIT_OK
    if not path.exists():
        raise DataError(f"{path} does not exist")
    cache = ResponseCache(path)
    by_backend: dict[str, int] = {}
    for rec in cache.records():
        by_backend[rec.backend] = by_backend.get(rec.backend, 0) + 1
    print(f"entries\t{len(cache)}")
    for name, n in sorted(by_backend.items()):
        print(f"backend:{name}\t{n}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgnav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="load a kb file and print its size")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("ask", help="answer one question")
    p.add_argument("--kb", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--entity", action="append", help="topic entity (repeatable)")
    p.add_argument("--hops", default="auto", help="hop count or 'auto'")
    p.add_argument("--config")
    p.add_argument("--trace", action="store_true", help="print the retrieval trace as JSON")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="evaluate a MetaQA-format QA file")
    p.add_argument("--kb", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--hops", type=int, help="hop label for every question (oracle predictor)")
    p.add_argument("--trace", help="write per-hop JSON Lines trace here")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cache", help="inspect or clear a response cache file")
    p.add_argument("action", choices=["show", "clear"])
    p.add_argument("--path", required=True)
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"kgnav: parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KGNavError as exc:
        print(f"kgnav: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
