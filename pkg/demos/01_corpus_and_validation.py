"""Loading, validating, and round-tripping an annotated corpus.

The interchange format is line-delimited JSON, one document per line, with
standoff spans indexed into the note text by Unicode scalar offsets.  Run
from the repository root:

    python demos/01_corpus_and_validation.py
"""

from dataclasses import replace

from casecrf.corpus import (
    AnnotationSpan,
    SpanCategory,
    load_corpus,
    validate_document,
)

corpus = load_corpus("data/toy/corpus.jsonl")
print(f"loaded {len(corpus)} documents: {corpus.ids()}")

doc = corpus.by_id("docA")
print(f"\n--- {doc.id} ({doc.language}, split={doc.split.value}) ---")
print(doc.text)
for span in doc.spans:
    attrs = ""
    if span.category is SpanCategory.CLINICAL_ENTITY:
        attrs = (f"  [{span.attributes.polarity.value}/"
                 f"{span.attributes.contextual_modality.value}/"
                 f"{span.attributes.permanence.value}]")
    print(f"  {span.id}: {span.category.value:16s} [{span.start:3d},{span.end:3d}) "
          f"{span.surface!r}{attrs}")
for rel in doc.relations:
    print(f"  {rel.id}: {rel.source} --{rel.type.value}--> {rel.target}")

# a loaded corpus is always valid; break an invariant to see the checker work
broken = replace(
    doc,
    spans=doc.spans + (AnnotationSpan("bad", SpanCategory.RML, 0, 5, "wrong"),),
)
print("\nviolations after corrupting a span surface:")
for violation in validate_document(broken):
    print(f"  {violation}")
