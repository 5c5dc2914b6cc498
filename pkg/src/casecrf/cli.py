"""Command-line entry points, one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .cluster import load_partition
from .corpus import load_corpus
from .evalharness import format_report_table
from .pipeline import RunConfig
from .simgraph import load_graph


def _add_config_arg(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON file")


def _load_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig.from_file(args.config)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = pipeline.run_pipeline(config)
    print(f"pipeline artifacts written to {out}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_config(args)
    corpus = pipeline.stage_ingest(config)
    print(f"ingested {len(corpus)} documents -> {config.out() / 'corpus.jsonl'}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    config = _load_config(args)
    corpus = load_corpus(config.out() / "corpus.jsonl")
    results = pipeline.stage_diagnose(config, corpus)
    found = sum(1 for r in results.values() if r.diagnosis is not None)
    print(f"diagnosed {found}/{len(results)} documents -> {config.out() / 'diagnoses.jsonl'}")
    return 0


def cmd_graph(args: argparse.Namespace) -> int:
    config = _load_config(args)
    corpus = load_corpus(config.out() / "corpus.jsonl")
    diagnoses = pipeline.load_diagnoses(config.out() / "diagnoses.jsonl")
    graph = pipeline.stage_graph(config, corpus, diagnoses)
    print(f"graph with {len(graph.nodes)} nodes / {len(graph.edges)} edges -> "
          f"{config.out() / 'graph.tsv'}")
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    config = _load_config(args)
    graph = load_graph(config.out() / "graph.tsv")
    partition = pipeline.stage_cluster(config, graph)
    print(f"{partition.group_count()} groups, {len(partition.unassigned())} unassigned -> "
          f"{config.out() / 'partition.tsv'}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    corpus = load_corpus(config.out() / "corpus.jsonl")
    diagnoses = pipeline.load_diagnoses(config.out() / "diagnoses.jsonl")
    partition, _ = load_partition(config.out() / "partition.tsv")
    templates, filled = pipeline.stage_generate(config, corpus, diagnoses, partition)
    if config.bootstrap_review:
        pipeline.stage_bootstrap_review(config, templates, filled)
    pipeline.write_manifest(config)
    n_items = sum(len(t.items) for t in templates.values())
    print(f"{len(templates)} templates ({n_items} items), {len(filled)} filled CRFs -> "
          f"{config.out()}")
    return 0


def cmd_revise_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .revise import SessionStore, create_app

    sessions_root = Path(args.sessions)
    stores = {
        p.name: SessionStore(p)
        for p in sorted(sessions_root.iterdir())
        if (p / "session.json").exists()
    }
    if not stores:
        print(f"no sessions under {sessions_root}", file=sys.stderr)
        return 1
    app = create_app(stores)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    preds = pipeline.run_baseline(args.gold_dir, args.out,
                                  attach_units=not args.bare_numbers)
    print(f"{len(preds)} baseline predictions -> {args.out}")
    return 0


def cmd_prompts(args: argparse.Namespace) -> int:
    rows = pipeline.build_prompts(args.gold_dir, language=args.language)
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"{len(rows)} prompts -> {args.out}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    mode = "simplified_history" if args.mode == "simplified" else "strict_history"
    report = pipeline.run_eval(
        args.gold_dir, args.predictions, mode=mode, language=args.language,
        out_prefix=args.out, split=args.split,
        case_sensitive=not args.case_insensitive,
    )
    print(format_report_table(report), end="")
    if args.out:
        print(f"report written to {args.out}.json / {args.out}.tsv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casecrf",
                                     description="annotated clinical cases -> filled CRFs")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, help_text in (
        ("run", cmd_run, "run the full pipeline"),
        ("ingest", cmd_ingest, "load, validate, and persist the corpus"),
        ("diagnose", cmd_diagnose, "extract a diagnosis per document"),
        ("graph", cmd_graph, "build the weighted similarity graph"),
        ("cluster", cmd_cluster, "seeded Louvain over the graph"),
        ("generate", cmd_generate, "emit CRF templates and gold fillings"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_arg(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("revise", help="data-revision service")
    revise_sub = p.add_subparsers(dest="revise_command", required=True)
    serve = revise_sub.add_parser("serve", help="serve review sessions over HTTP")
    serve.add_argument("--sessions", required=True, help="directory of session dirs")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)
    serve.set_defaults(handler=cmd_revise_serve)

    p = sub.add_parser("baseline", help="pattern-matching baseline predictions")
    p.add_argument("--gold-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bare-numbers", action="store_true",
                   help="truncate exam values at the bare number (no unit characters)")
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("prompts", help="evaluation prompts for external models")
    p.add_argument("--gold-dir", required=True)
    p.add_argument("--language", choices=("en", "it"), default="en")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_prompts)

    p = sub.add_parser("score", help="score a predictions file against gold")
    p.add_argument("--gold-dir", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--mode", choices=("strict", "simplified"), default="strict")
    p.add_argument("--language", choices=("en", "it"), default="en")
    p.add_argument("--split", choices=("train", "test"), default=None,
                   help="score only documents of this split")
    p.add_argument("--case-insensitive", action="store_true")
    p.add_argument("--out", default=None, help="report path prefix (.json/.tsv)")
    p.set_defaults(handler=cmd_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
