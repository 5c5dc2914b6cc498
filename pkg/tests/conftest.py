"""Shared fixtures: hand-built documents with offsets derived, not guessed."""

from __future__ import annotations

import pytest

from casecrf.corpus import (
    AnnotationSpan,
    AttributeSet,
    Corpus,
    Document,
    Modality,
    Permanence,
    Polarity,
    Relation,
    RelationType,
    SpanCategory,
    Split,
)


def locate(text: str, surface: str, occurrence: int = 1) -> tuple[int, int]:
    """Offsets of the nth occurrence of a surface; raises if absent."""
    start = -1
    for _ in range(occurrence):
        start = text.index(surface, start + 1)
    return start, start + len(surface)


def make_span(text: str, sid: str, category: SpanCategory, surface: str,
              attrs: AttributeSet | None = None, occurrence: int = 1) -> AnnotationSpan:
    start, end = locate(text, surface, occurrence)
    return AnnotationSpan(id=sid, category=category, start=start, end=end,
                          surface=surface, attributes=attrs or AttributeSet())


def doc_a() -> Document:
    text = "Final diagnosis was sepsis. History of diabetes mellitus. Haemoglobin was 38g/dl."
    spans = (
        make_span(text, "a1", SpanCategory.CLINICAL_ENTITY, "sepsis",
                  AttributeSet(Polarity.POSITIVE, Modality.ACTUAL, Permanence.MISSING)),
        make_span(text, "a2", SpanCategory.CLINICAL_ENTITY, "diabetes mellitus",
                  AttributeSet(Polarity.POSITIVE, Modality.MISSING, Permanence.PERMANENT)),
        make_span(text, "a3", SpanCategory.EVENT, "Haemoglobin"),
        make_span(text, "a4", SpanCategory.RML, "38g/dl"),
    )
    relations = (Relation("ar1", RelationType.PERTAINS_TO, "a4", "a3"),)
    return Document(id="docA", language="en", text=text, spans=spans,
                    relations=relations, split=Split.TRAIN)


def doc_b() -> Document:
    text = ("The diagnosis is sepsis. No history of diabetes mellitus. "
            "Hypotension was noted. Haemoglobin was 40g/dl. Creatinine was 1.2mg/dl.")
    spans = (
        make_span(text, "b1", SpanCategory.CLINICAL_ENTITY, "sepsis",
                  AttributeSet(Polarity.POSITIVE, Modality.ACTUAL, Permanence.MISSING)),
        make_span(text, "b2", SpanCategory.CLINICAL_ENTITY, "diabetes mellitus",
                  AttributeSet(Polarity.NEGATIVE, Modality.MISSING, Permanence.MISSING)),
        make_span(text, "b3", SpanCategory.CLINICAL_ENTITY, "Hypotension",
                  AttributeSet(Polarity.POSITIVE, Modality.ACTUAL, Permanence.MISSING)),
        make_span(text, "b4", SpanCategory.EVENT, "Haemoglobin"),
        make_span(text, "b5", SpanCategory.RML, "40g/dl"),
        make_span(text, "b6", SpanCategory.EVENT, "Creatinine"),
        make_span(text, "b7", SpanCategory.RML, "1.2mg/dl"),
    )
    relations = (
        Relation("br1", RelationType.PERTAINS_TO, "b5", "b4"),
        Relation("br2", RelationType.PERTAINS_TO, "b7", "b6"),
    )
    return Document(id="docB", language="en", text=text, spans=spans,
                    relations=relations, split=Split.TEST)


def doc_c() -> Document:
    text = "Patient presented with ankle fracture after a fall. X-ray confirmed the fracture."
    spans = (
        make_span(text, "c1", SpanCategory.CLINICAL_ENTITY, "ankle fracture",
                  AttributeSet(Polarity.POSITIVE, Modality.ACTUAL, Permanence.FINITE)),
    )
    return Document(id="docC", language="en", text=text, spans=spans, split=Split.TRAIN)


@pytest.fixture
def toy_corpus() -> Corpus:
    return Corpus([doc_a(), doc_b(), doc_c()])


TOY_SYNONYMS = {
    "sepsis": ["septicemia", "blood infection"],
    "diabetes mellitus": ["diabetes", "high blood sugar"],
    "JMML": ["juvenile myeloid leukemia", "juvenile myelomonocytic leukemia"],
    "febbre": ["fever"],
    "ankle fracture": ["broken ankle"],
}


@pytest.fixture
def toy_synonyms_file(tmp_path):
    path = tmp_path / "synonyms.tsv"
    lines = ["\t".join([term, *related]) for term, related in TOY_SYNONYMS.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
