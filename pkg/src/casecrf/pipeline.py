"""End-to-end orchestration and persisted-artifact plumbing.

Every stage reads the previous stage's on-disk artifacts and writes its own
into the run directory, so expensive backend calls are made once and each
stage is re-runnable.  All artifacts are byte-deterministic for a given
config and inputs, and the manifest records the run hash plus a sha256 per
file so artifacts from different runs can never be mixed silently.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import cluster as cluster_mod
from . import crfgen, diagnosis, evalharness, simgraph
from .clients import RequestCache, StubEmbedder, StubTranslator
from .corpus import Corpus, Split, load_corpus, load_split_manifest, apply_split_manifest, save_corpus, SpanCategory
from .crfgen import CrfTemplate, FilledCrf, NOT_AVAILABLE
from .diagnosis import DiagnosisResult
from .revise import SessionStore, StubSuggester, propose_merges

MANIFEST_NAME = "manifest.json"


class PipelineError(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {message}")


class EmptyCorpus(PipelineError):
    def __init__(self):
        super().__init__("ingest", "corpus contains no documents")


@dataclass
class RunConfig:
    corpus_path: str
    corpus_format: str = "native_json"
    language: str = "en"
    synonym_table_path: str | None = None
    split_manifest_path: str | None = None
    output_dir: str = "out"
    cache_dir: str | None = None

    # backends: "stub" or an endpoint URL (credentials come from env only)
    selector: str = "stub"
    selector_model: str = ""
    embedder: str = "stub"
    embedder_model: str = ""
    translator: str = "stub"
    suggester: str = "stub"
    suggester_model: str = ""
    shots_path: str | None = None  # worked selection examples, JSON list

    weight_formula: str = "GENERAL"
    edge_floor: float = 0.0
    augment_k: int = 5

    d_seed_threshold: float = 0.8
    resolution: float = 1.0
    rng_seed: int = 0
    min_group_size: int = 2

    bootstrap_review: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**obj)

    def out(self) -> Path:
        return Path(self.output_dir)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def run_hash_for(config: RunConfig) -> str:
    """Hash of the config plus every referenced input file's content.

    Artifact locations (output/cache directories) are excluded: two runs
    with the same inputs and knobs are the same run wherever they land.
    """
    fields = {k: v for k, v in asdict(config).items()
              if k not in ("output_dir", "cache_dir")}
    payload = {"config": fields}
    for key in ("corpus_path", "synonym_table_path", "split_manifest_path", "shots_path"):
        value = getattr(config, key)
        if value is None:
            continue
        path = Path(value)
        if path.is_dir():
            payload[key] = sorted(f"{p.name}:{_sha256_file(p)}" for p in path.glob("*") if p.is_file())
        elif path.exists():
            payload[key] = _sha256_file(path)
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class _StageGuard:
    """Removes a stage's partial outputs when the stage raises."""

    def __init__(self, stage: str):
        self.stage = stage
        self.created: list[Path] = []

    def track(self, path: Path) -> Path:
        self.created.append(path)
        return path

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            return False
        for path in self.created:
            if path.exists():
                path.unlink()
        if isinstance(exc, PipelineError):
            return False
        raise PipelineError(self.stage, str(exc)) from exc


# ---------------------------------------------------------------------------
# backend construction


def _api_key() -> str | None:
    return os.environ.get("CASECRF_API_KEY")


def build_selector(config: RunConfig) -> diagnosis.SelectorClient:
    if config.selector == "stub":
        return diagnosis.DeterministicSelector()
    cache = RequestCache(config.cache_dir or Path(config.output_dir) / ".cache")
    return diagnosis.HttpSelector(config.selector, config.selector_model,
                                  api_key=_api_key(), cache=cache)


def build_embedder(config: RunConfig):
    if config.embedder == "stub":
        return StubEmbedder(seed=config.rng_seed)
    from .clients import HttpEmbeddingClient

    cache = RequestCache(config.cache_dir or Path(config.output_dir) / ".cache")
    return HttpEmbeddingClient(config.embedder, config.embedder_model,
                               api_key=_api_key(), cache=cache)


def build_translator(config: RunConfig):
    if config.translator == "stub":
        return StubTranslator()
    from .clients import HttpTranslatorClient

    cache = RequestCache(config.cache_dir or Path(config.output_dir) / ".cache")
    return HttpTranslatorClient(config.translator, cache=cache)


def build_suggester(config: RunConfig):
    if config.suggester == "stub":
        return StubSuggester()
    from .revise import HttpSuggester

    cache = RequestCache(config.cache_dir or Path(config.output_dir) / ".cache")
    return HttpSuggester(config.suggester, config.suggester_model,
                         api_key=_api_key(), cache=cache)


def _synonym_table(config: RunConfig) -> simgraph.SynonymTable:
    if config.synonym_table_path:
        return simgraph.SynonymTable.from_file(config.synonym_table_path)
    return simgraph.SynonymTable()


# ---------------------------------------------------------------------------
# stages


def stage_ingest(config: RunConfig) -> Corpus:
    corpus = load_corpus(config.corpus_path, format=config.corpus_format,
                         language=config.language)
    if len(corpus) == 0:
        raise EmptyCorpus()
    if config.split_manifest_path:
        manifest = load_split_manifest(config.split_manifest_path)
        apply_split_manifest(corpus, manifest)
    out = config.out()
    out.mkdir(parents=True, exist_ok=True)
    with _StageGuard("ingest") as guard:
        save_corpus(corpus, guard.track(out / "corpus.jsonl"))
        stats = corpus_stats(corpus)
        (guard.track(out / "corpus_stats.json")).write_text(
            json.dumps(stats, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )
    return corpus


def corpus_stats(corpus: Corpus) -> dict:
    per_category = {c.value: 0 for c in SpanCategory}
    splits = {s.value: 0 for s in Split}
    relations = 0
    for doc in corpus:
        splits[doc.split.value] += 1
        relations += len(doc.relations)
        for span in doc.spans:
            per_category[span.category.value] += 1
    return {
        "documents": len(corpus),
        "languages": sorted({d.language for d in corpus}),
        "relations": relations,
        "spans": per_category,
        "splits": splits,
    }


def _write_jsonl(path: Path, rows: list[dict], run_hash: str | None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if run_hash is not None:
            fh.write(json.dumps({"run_hash": run_hash}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if set(obj) == {"run_hash"}:
            continue
        rows.append(obj)
    return rows


def load_shots(path: str | Path) -> tuple[diagnosis.Shot, ...]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return tuple(
        diagnosis.Shot(note=row["note"], candidates=tuple(row["candidates"]),
                       motivation=row["motivation"], diagnosis=row["diagnosis"])
        for row in rows
    )


def stage_diagnose(config: RunConfig, corpus: Corpus) -> dict[str, DiagnosisResult]:
    selector = build_selector(config)
    shots = load_shots(config.shots_path) if config.shots_path else ()
    shortlist_config = diagnosis.ShortlistConfig()
    shortlists = {doc.id: diagnosis.build_shortlist(doc, shortlist_config) for doc in corpus}
    results = diagnosis.select_all(corpus, shortlists, selector, shots=shots,
                                   fallback_on_error=config.selector != "stub")
    with _StageGuard("diagnose") as guard:
        _write_jsonl(
            guard.track(config.out() / "diagnoses.jsonl"),
            [results[doc_id].to_json() for doc_id in sorted(results)],
            run_hash_for(config),
        )
    return results


def load_diagnoses(path: str | Path) -> dict[str, DiagnosisResult]:
    return {
        row["doc_id"]: DiagnosisResult.from_json(row) for row in _read_jsonl(Path(path))
    }


def stage_graph(config: RunConfig, corpus: Corpus,
                diagnoses: dict[str, DiagnosisResult]) -> simgraph.SimilarityGraph:
    graph_config = simgraph.GraphConfig(
        formula=simgraph.WeightFormula(config.weight_formula),
        augment_k=config.augment_k,
        edge_floor=config.edge_floor,
    )
    graph = simgraph.build_graph(
        corpus, diagnoses, _synonym_table(config), build_embedder(config),
        translator=build_translator(config), config=graph_config,
    )
    with _StageGuard("graph") as guard:
        simgraph.save_graph(graph, guard.track(config.out() / "graph.tsv"))
    return graph


def stage_cluster(config: RunConfig, graph: simgraph.SimilarityGraph) -> cluster_mod.Partition:
    cc = cluster_mod.ClusterConfig(
        d_seed_threshold=config.d_seed_threshold,
        resolution=config.resolution,
        rng_seed=config.rng_seed,
        min_group_size=config.min_group_size,
    )
    seed = cluster_mod.seed_components(graph, cc.d_seed_threshold)
    partition = cluster_mod.louvain(graph, seed, cc)
    with _StageGuard("cluster") as guard:
        cluster_mod.save_partition(
            partition,
            guard.track(config.out() / "partition.tsv"),
            metadata={
                "run_hash": run_hash_for(config),
                "d_seed_threshold": cc.d_seed_threshold,
                "resolution": cc.resolution,
                "rng_seed": cc.rng_seed,
                "min_group_size": cc.min_group_size,
            },
        )
    return partition


def stage_generate(config: RunConfig, corpus: Corpus,
                   diagnoses: dict[str, DiagnosisResult],
                   partition: cluster_mod.Partition) -> tuple[dict[int, CrfTemplate], list[FilledCrf]]:
    templates, filled = crfgen.generate_group_artifacts(
        corpus, partition.assignment, diagnoses
    )
    splits = {doc.id: doc.split for doc in corpus}
    templates, filled = crfgen.apply_history_split_filter(templates, filled, splits)
    run_hash = run_hash_for(config)
    out = config.out()
    with _StageGuard("generate") as guard:
        _write_jsonl(
            guard.track(out / "templates.jsonl"),
            [crfgen.template_to_json(templates[g]) for g in sorted(templates)],
            run_hash,
        )
        _write_jsonl(
            guard.track(out / "filled.jsonl"),
            [crfgen.filled_to_json(f) for f in sorted(filled, key=lambda f: f.doc_id)],
            run_hash,
        )
        inventory = [*crfgen.history_answer_inventory(), NOT_AVAILABLE]
        (guard.track(out / "history_answers.txt")).write_text(
            "\n".join(inventory) + "\n", encoding="utf-8"
        )
    return templates, filled


def stage_bootstrap_review(config: RunConfig, templates: dict[int, CrfTemplate],
                           filled: list[FilledCrf]) -> None:
    suggester = build_suggester(config)
    sessions_dir = config.out() / "sessions"
    for gid in sorted(templates):
        template = templates[gid]
        proposals = propose_merges(template, suggester)
        store = SessionStore(sessions_dir / f"group{gid}")
        group_filled = [f for f in filled if f.group_id == gid]
        store.create(f"group{gid}", template, group_filled, proposals)


def load_templates_and_filled(directory: str | Path) -> tuple[dict[int, CrfTemplate], list[FilledCrf]]:
    directory = Path(directory)
    templates = {}
    for row in _read_jsonl(directory / "templates.jsonl"):
        template = crfgen.template_from_json(row)
        templates[template.group_id] = template
    filled = [crfgen.filled_from_json(row) for row in _read_jsonl(directory / "filled.jsonl")]
    return templates, filled


def assignment_from_filled(filled: list[FilledCrf]) -> dict[str, int | None]:
    return {f.doc_id: f.group_id for f in filled}


def write_manifest(config: RunConfig) -> Path:
    out = config.out()
    files = {
        p.name: _sha256_file(p)
        for p in sorted(out.glob("*"))
        if p.is_file() and p.name != MANIFEST_NAME
    }
    manifest = {
        "run_hash": run_hash_for(config),
        "config": asdict(config),
        "files": files,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def verify_manifest(directory: str | Path) -> dict:
    """Check that every artifact still matches the manifest's hashes."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    mismatched = []
    for name, expected in manifest["files"].items():
        path = directory / name
        if not path.exists() or _sha256_file(path) != expected:
            mismatched.append(name)
    if mismatched:
        raise PipelineError(
            "score", f"artifacts do not match the run manifest (mixed runs?): {mismatched}"
        )
    return manifest


def run_pipeline(config: RunConfig) -> Path:
    """load -> diagnose -> graph -> cluster -> generate -> emit manifest.

    The history split filter runs inside generate (after normalization; the
    batch run has no human decisions yet).  With ``bootstrap_review`` set, a
    review session directory is created per group for the revision service.
    """
    corpus = stage_ingest(config)
    diagnoses = stage_diagnose(config, corpus)
    graph = stage_graph(config, corpus, diagnoses)
    partition = stage_cluster(config, graph)
    templates, filled = stage_generate(config, corpus, diagnoses, partition)
    if config.bootstrap_review:
        stage_bootstrap_review(config, templates, filled)
    write_manifest(config)
    return config.out()


# ---------------------------------------------------------------------------
# evaluation entry points over persisted gold artifacts


def run_baseline(gold_dir: str | Path, out_path: str | Path | None = None,
                 attach_units: bool = True) -> evalharness.PredictionSet:
    """Fill every gold template with the pattern-matching baseline."""
    gold_dir = Path(gold_dir)
    corpus = load_corpus(gold_dir / "corpus.jsonl")
    templates, filled = load_templates_and_filled(gold_dir)
    assignment = assignment_from_filled(filled)
    preds = evalharness.baseline_fill_all(corpus.documents, templates, assignment,
                                          attach_units=attach_units)
    if out_path is not None:
        run_hash = None
        manifest_path = gold_dir / MANIFEST_NAME
        if manifest_path.exists():
            run_hash = json.loads(manifest_path.read_text(encoding="utf-8"))["run_hash"]
        evalharness.save_predictions(preds, out_path, run_hash=run_hash)
    return preds


def run_eval(gold_dir: str | Path, predictions_path: str | Path,
             mode: str = "strict_history", language: str = "en",
             out_prefix: str | Path | None = None,
             split: str | None = None,
             case_sensitive: bool = True) -> evalharness.ScoreReport:
    """Score a predictions file against a gold artifact directory.

    The gold directory's manifest is verified first so artifacts from mixed
    runs are rejected; predictions carrying a different run hash are too.
    With ``split`` set, only gold documents of that split are scored.
    """
    gold_dir = Path(gold_dir)
    run_hash = None
    if (gold_dir / MANIFEST_NAME).exists():
        manifest = verify_manifest(gold_dir)
        run_hash = manifest["run_hash"]
    templates, filled = load_templates_and_filled(gold_dir)
    if split is not None:
        corpus = load_corpus(gold_dir / "corpus.jsonl")
        keep = {doc.id for doc in corpus if doc.split.value == split}
        filled = [f for f in filled if f.doc_id in keep]
    preds = evalharness.load_predictions(predictions_path, expected_hash=run_hash)
    report = evalharness.score(filled, templates, preds, mode=mode,
                               case_sensitive=case_sensitive)
    report.config_hash = run_hash
    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        payload = evalharness.report_to_json(report)
        payload["language"] = language
        out_prefix.with_suffix(".json").write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )
        out_prefix.with_suffix(".tsv").write_text(
            evalharness.format_report_table(report), encoding="utf-8"
        )
    return report


def build_prompts(gold_dir: str | Path, language: str = "en") -> list[dict]:
    """Evaluation prompts for every (document, item) pair in the gold set."""
    gold_dir = Path(gold_dir)
    corpus = load_corpus(gold_dir / "corpus.jsonl")
    templates, filled = load_templates_and_filled(gold_dir)
    assignment = assignment_from_filled(filled)
    rows = []
    for doc in corpus:
        group = assignment.get(doc.id)
        if group is None or group not in templates:
            continue
        for item in templates[group].items:
            rows.append({
                "doc_id": doc.id,
                "item_id": item.id,
                "task": item.section.value,
                "language": language,
                "prompt": evalharness.build_eval_prompt(item.section, doc, item, language),
            })
    return rows
