"""Normalized data model for annotated clinical corpora, plus loaders.

The native interchange format is line-delimited JSON, one document object
per line (schema in docs/formats.md).  All character offsets are Unicode
scalar-value indices, which is what Python string indexing gives you, so
multilingual offsets stay unambiguous.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path


class SpanCategory(Enum):
    CLINICAL_ENTITY = "CLINICAL_ENTITY"
    BODY_PART = "BODY_PART"
    RML = "RML"
    EVENT = "EVENT"


class Polarity(Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    MISSING = "MISSING"


class Modality(Enum):
    ACTUAL = "ACTUAL"
    HYPOTHETICAL = "HYPOTHETICAL"
    HEDGED = "HEDGED"
    MISSING = "MISSING"


class Permanence(Enum):
    PERMANENT = "PERMANENT"
    FINITE = "FINITE"
    MISSING = "MISSING"


class Split(Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


class RelationType(Enum):
    PERTAINS_TO = "PERTAINS_TO"


@dataclass(frozen=True)
class AttributeSet:
    """Entity attributes; absent annotation is normalized to MISSING."""

    polarity: Polarity = Polarity.MISSING
    contextual_modality: Modality = Modality.MISSING
    permanence: Permanence = Permanence.MISSING

    def is_missing(self) -> bool:
        return (
            self.polarity is Polarity.MISSING
            and self.contextual_modality is Modality.MISSING
            and self.permanence is Permanence.MISSING
        )


MISSING_ATTRIBUTES = AttributeSet()


@dataclass(frozen=True)
class AnnotationSpan:
    id: str
    category: SpanCategory
    start: int
    end: int
    surface: str
    attributes: AttributeSet = MISSING_ATTRIBUTES


@dataclass(frozen=True)
class Relation:
    id: str
    type: RelationType
    source: str  # span id, must be an RML
    target: str  # span id of an EVENT or CLINICAL_ENTITY


@dataclass(frozen=True)
class Document:
    id: str
    language: str
    text: str
    spans: tuple[AnnotationSpan, ...] = ()
    relations: tuple[Relation, ...] = ()
    split: Split = Split.UNASSIGNED

    def spans_by_id(self) -> dict[str, AnnotationSpan]:
        return {s.id: s for s in self.spans}

    def spans_of(self, category: SpanCategory) -> list[AnnotationSpan]:
        return [s for s in self.spans if s.category is category]


@dataclass
class Corpus:
    """Ordered, immutable-by-convention collection of documents."""

    documents: list[Document] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def by_id(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.id == doc_id:
                return doc
        raise KeyError(doc_id)

    def ids(self) -> list[str]:
        return [d.id for d in self.documents]


@dataclass(frozen=True)
class Violation:
    entity_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.entity_id}: [{self.rule}] {self.message}"


class CorpusError(Exception):
    pass


class ParseError(CorpusError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path or '<input>'}" + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}")


class ValidationError(CorpusError):
    """Raised with the complete list of violations, not just the first."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        lines = "\n".join(f"  - {v}" for v in violations)
        super().__init__(f"{len(violations)} validation violation(s):\n{lines}")


class DuplicateIdError(CorpusError):
    pass


# ---------------------------------------------------------------------------
# validation


def validate_document(doc: Document) -> list[Violation]:
    """Check every Document/AnnotationSpan/Relation invariant.

    Returns an empty list iff the document is well formed; never raises.
    """
    violations: list[Violation] = []
    n = len(doc.text)
    seen_span_ids: set[str] = set()
    for span in doc.spans:
        if span.id in seen_span_ids:
            violations.append(Violation(span.id, "span-id-unique", "duplicate span id"))
        seen_span_ids.add(span.id)
        if not (0 <= span.start < span.end <= n):
            violations.append(
                Violation(
                    span.id,
                    "span-bounds",
                    f"span [{span.start}, {span.end}) outside text of length {n}",
                )
            )
            continue
        actual = doc.text[span.start : span.end]
        if span.surface != actual:
            violations.append(
                Violation(
                    span.id,
                    "surface-mismatch",
                    f"surface {span.surface!r} != text slice {actual!r}",
                )
            )
    by_id = {s.id: s for s in doc.spans}
    seen_rel_ids: set[str] = set()
    for rel in doc.relations:
        if rel.id in seen_rel_ids:
            violations.append(Violation(rel.id, "relation-id-unique", "duplicate relation id"))
        seen_rel_ids.add(rel.id)
        source = by_id.get(rel.source)
        target = by_id.get(rel.target)
        if source is None:
            violations.append(
                Violation(rel.id, "dangling-relation", f"source span {rel.source!r} not found")
            )
        elif source.category is not SpanCategory.RML:
            violations.append(
                Violation(rel.id, "relation-source-category", "PERTAINS_TO source must be RML")
            )
        if target is None:
            violations.append(
                Violation(rel.id, "dangling-relation", f"target span {rel.target!r} not found")
            )
    return violations


def validate_corpus(corpus: Corpus) -> list[Violation]:
    violations: list[Violation] = []
    seen: set[str] = set()
    for doc in corpus:
        if doc.id in seen:
            violations.append(Violation(doc.id, "doc-id-unique", "duplicate document id"))
        seen.add(doc.id)
        violations.extend(validate_document(doc))
    return violations


# ---------------------------------------------------------------------------
# native line-delimited JSON format


def _attrs_to_json(attrs: AttributeSet) -> dict:
    return {
        "polarity": attrs.polarity.value,
        "contextual_modality": attrs.contextual_modality.value,
        "permanence": attrs.permanence.value,
    }


def _attrs_from_json(obj: dict | None) -> AttributeSet:
    if not obj:
        return MISSING_ATTRIBUTES
    return AttributeSet(
        polarity=Polarity(obj.get("polarity", "MISSING")),
        contextual_modality=Modality(obj.get("contextual_modality", "MISSING")),
        permanence=Permanence(obj.get("permanence", "MISSING")),
    )


def document_to_json(doc: Document) -> dict:
    spans = []
    for s in doc.spans:
        entry: dict = {
            "id": s.id,
            "category": s.category.value,
            "start": s.start,
            "end": s.end,
            "surface": s.surface,
        }
        # attributes only carry meaning for clinical entities
        if s.category is SpanCategory.CLINICAL_ENTITY:
            entry["attributes"] = _attrs_to_json(s.attributes)
        spans.append(entry)
    return {
        "id": doc.id,
        "language": doc.language,
        "text": doc.text,
        "spans": spans,
        "relations": [
            {"id": r.id, "type": r.type.value, "source": r.source, "target": r.target}
            for r in doc.relations
        ],
        "split": doc.split.value,
    }


def document_from_json(obj: dict) -> Document:
    spans = []
    for s in obj.get("spans", []):
        category = SpanCategory(s["category"])
        attrs = (
            _attrs_from_json(s.get("attributes"))
            if category is SpanCategory.CLINICAL_ENTITY
            else MISSING_ATTRIBUTES
        )
        spans.append(
            AnnotationSpan(
                id=str(s["id"]),
                category=category,
                start=int(s["start"]),
                end=int(s["end"]),
                surface=s["surface"],
                attributes=attrs,
            )
        )
    relations = [
        Relation(
            id=str(r["id"]),
            type=RelationType(r.get("type", "PERTAINS_TO")),
            source=str(r["source"]),
            target=str(r["target"]),
        )
        for r in obj.get("relations", [])
    ]
    return Document(
        id=str(obj["id"]),
        language=obj["language"],
        text=obj["text"],
        spans=tuple(spans),
        relations=tuple(relations),
        split=Split(obj.get("split", "unassigned")),
    )


def load_corpus(path: str | Path, format: str = "native_json", language: str | None = None) -> Corpus:
    """Load and validate a corpus from disk.

    ``format`` is ``native_json`` (one document object per line) or
    ``e3c_adapter`` (directory of UIMA CAS XMI files, or a single file).
    Raises ParseError on malformed input and ValidationError listing every
    invariant violation; a returned Corpus is always valid.
    """
    path = Path(path)
    if format == "native_json":
        corpus = _load_native(path)
    elif format == "e3c_adapter":
        corpus = load_e3c(path, language=language)
    else:
        raise ValueError(f"unknown corpus format: {format!r}")
    violations = validate_corpus(corpus)
    if violations:
        raise ValidationError(violations)
    return corpus


def _load_native(path: Path) -> Corpus:
    documents = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", str(path), lineno) from exc
            try:
                documents.append(document_from_json(obj))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"bad document object: {exc}", str(path), lineno) from exc
    return Corpus(documents)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(document_to_json(doc), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# split manifest


def load_split_manifest(path: str | Path) -> dict[str, Split]:
    """Parse a two-column ``doc_id<TAB>train|test`` manifest."""
    mapping: dict[str, Split] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'doc_id<TAB>train|test'", str(path), lineno)
            doc_id, split_name = parts[0].strip(), parts[1].strip().lower()
            if doc_id in mapping:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate manifest id {doc_id!r}")
            if split_name not in ("train", "test"):
                raise ParseError(f"unknown split {split_name!r}", str(path), lineno)
            mapping[doc_id] = Split(split_name)
    return mapping


def apply_split_manifest(corpus: Corpus, manifest: dict[str, Split]) -> list[str]:
    """Set Document.split from the manifest; unlisted docs become unassigned.

    Returns warnings for manifest ids absent from the corpus.
    """
    known = set(corpus.ids())
    warnings = [
        f"manifest id {doc_id!r} not present in corpus"
        for doc_id in manifest
        if doc_id not in known
    ]
    corpus.documents = [
        replace(doc, split=manifest.get(doc.id, Split.UNASSIGNED)) for doc in corpus
    ]
    return warnings


# ---------------------------------------------------------------------------
# E3C adapter (UIMA CAS XMI)
#
# Only the five annotation kinds used downstream are mapped; every other
# layer is dropped on ingest.  Matching is namespace-insensitive on type
# local-names so typesystem version drift does not break loading.

_E3C_SPAN_TYPES = {
    "CLINENTITY": SpanCategory.CLINICAL_ENTITY,
    "BODYPART": SpanCategory.BODY_PART,
    "RML": SpanCategory.RML,
    "EVENT": SpanCategory.EVENT,
}

_POLARITY_VALUES = {"POS": Polarity.POSITIVE, "POSITIVE": Polarity.POSITIVE,
                    "NEG": Polarity.NEGATIVE, "NEGATIVE": Polarity.NEGATIVE}
_MODALITY_VALUES = {"ACTUAL": Modality.ACTUAL, "HYPOTHETICAL": Modality.HYPOTHETICAL,
                    "HEDGED": Modality.HEDGED}
_PERMANENCE_VALUES = {"PERMANENT": Permanence.PERMANENT, "FINITE": Permanence.FINITE}


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1].upper()


def _xmi_attr(elem: ET.Element, *names: str) -> str | None:
    lowered = {k.rsplit("}", 1)[-1].lower(): v for k, v in elem.attrib.items()}
    for name in names:
        if name.lower() in lowered:
            return lowered[name.lower()]
    return None


def _parse_xmi_attributes(elem: ET.Element) -> AttributeSet:
    pol = (_xmi_attr(elem, "polarity") or "").upper()
    mod = (_xmi_attr(elem, "contextualModality", "contextualmodality", "modality") or "").upper()
    perm = (_xmi_attr(elem, "permanence") or "").upper()
    # GENERIC modality has no CRF value row; it reads as unannotated
    return AttributeSet(
        polarity=_POLARITY_VALUES.get(pol, Polarity.MISSING),
        contextual_modality=_MODALITY_VALUES.get(mod, Modality.MISSING),
        permanence=_PERMANENCE_VALUES.get(perm, Permanence.MISSING),
    )


def load_e3c_document(path: str | Path, language: str | None = None,
                      inherit_event_attributes: bool = True) -> Document:
    """Convert one E3C XMI file into a normalized Document.

    When a clinical entity carries no attribute annotation of its own but an
    EVENT with identical offsets does, the entity inherits the EVENT's
    attributes (E3C attaches modality/polarity/permanence at the event layer).
    """
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ParseError(f"malformed XMI: {exc}", str(path)) from exc

    text = None
    for elem in root.iter():
        if _local_name(elem.tag) == "SOFA":
            text = _xmi_attr(elem, "sofaString")
            if text is not None:
                break
    if text is None:
        raise ParseError("no Sofa/sofaString element found", str(path))

    spans: list[AnnotationSpan] = []
    relations: list[Relation] = []
    events_by_offsets: dict[tuple[int, int], AttributeSet] = {}
    pending_relations: list[tuple[str, str, str]] = []

    for elem in root.iter():
        name = _local_name(elem.tag)
        if name in _E3C_SPAN_TYPES:
            xmi_id = _xmi_attr(elem, "id")
            begin = _xmi_attr(elem, "begin")
            end = _xmi_attr(elem, "end")
            if xmi_id is None or begin is None or end is None:
                continue
            start_i, end_i = int(begin), int(end)
            attrs = _parse_xmi_attributes(elem)
            category = _E3C_SPAN_TYPES[name]
            if category is SpanCategory.EVENT:
                events_by_offsets[(start_i, end_i)] = attrs
            spans.append(
                AnnotationSpan(
                    id=xmi_id,
                    category=category,
                    start=start_i,
                    end=end_i,
                    surface=text[start_i:end_i],
                    attributes=attrs if category is SpanCategory.CLINICAL_ENTITY else MISSING_ATTRIBUTES,
                )
            )
        elif name.replace("-", "").replace("_", "") == "PERTAINSTO":
            xmi_id = _xmi_attr(elem, "id") or f"r{len(pending_relations)}"
            a = _xmi_attr(elem, "Governor", "source")
            b = _xmi_attr(elem, "Dependent", "target")
            if a is not None and b is not None:
                pending_relations.append((xmi_id, a, b))

    if inherit_event_attributes:
        spans = [
            replace(s, attributes=events_by_offsets.get((s.start, s.end), s.attributes))
            if s.category is SpanCategory.CLINICAL_ENTITY and s.attributes.is_missing()
            else s
            for s in spans
        ]

    # direction conventions vary; the RML endpoint is always the source
    by_id = {s.id: s for s in spans}
    for rel_id, a, b in pending_relations:
        sa, sb = by_id.get(a), by_id.get(b)
        if sb is not None and sb.category is SpanCategory.RML and (
            sa is None or sa.category is not SpanCategory.RML
        ):
            a, b = b, a
        relations.append(Relation(id=rel_id, type=RelationType.PERTAINS_TO, source=a, target=b))

    return Document(
        id=path.stem,
        language=language or "en",
        text=text,
        spans=tuple(spans),
        relations=tuple(relations),
    )


def load_e3c(path: str | Path, language: str | None = None) -> Corpus:
    """Load a directory of E3C XMI files (or a single file), sorted by name."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.xmi"))
        if not files:
            raise ParseError("no .xmi files in directory", str(path))
    else:
        files = [path]
    return Corpus([load_e3c_document(f, language=language) for f in files])


# ---------------------------------------------------------------------------
# shared text helpers

_WS_RE = re.compile(r"\s+")


def normalize_surface(surface: str) -> str:
    """Canonical key for set-based comparisons: lowercase, collapsed spaces."""
    return _WS_RE.sub(" ", surface.strip()).lower()
