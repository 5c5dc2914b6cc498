"""The slot-filling task end to end: pipeline, baseline, strict scoring.

Runs the full pipeline on the toy corpus (stub backends, so fully offline
and byte-reproducible), fills the generated CRFs with the pattern-matching
baseline, and scores them under both history modes.  This is exactly what
``casecrf run`` / ``casecrf baseline`` / ``casecrf score`` do.
"""

import tempfile
from pathlib import Path

from casecrf.crfgen import Section
from casecrf.evalharness import format_report_table
from casecrf.pipeline import (
    RunConfig,
    build_prompts,
    run_baseline,
    run_eval,
    run_pipeline,
)

with tempfile.TemporaryDirectory() as tmp:
    config = RunConfig(
        corpus_path="data/toy/corpus.jsonl",
        synonym_table_path="data/toy/synonyms.tsv",
        output_dir=str(Path(tmp) / "gold"),
        min_group_size=1,
        rng_seed=7,
    )
    gold_dir = run_pipeline(config)
    print(f"pipeline artifacts: {sorted(p.name for p in gold_dir.glob('*'))}")

    preds_path = Path(tmp) / "baseline.jsonl"
    preds = run_baseline(gold_dir, preds_path)
    print(f"\nbaseline produced {len(preds)} predictions")

    for mode in ("strict_history", "simplified_history"):
        report = run_eval(gold_dir, preds_path, mode=mode)
        print(f"\n{format_report_table(report)}")

    # prompts an external model would receive for the same task
    rows = build_prompts(gold_dir, language="en")
    exams_row = next(r for r in rows if r["task"] == Section.EXAMS.value)
    print("--- one exams prompt ---")
    print(exams_row["prompt"])
