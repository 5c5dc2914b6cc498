"""Group-specific CRF templates and per-document gold fillings.

Items come from three sources: exam items from spans that results and
measurements pertain to, history items from clinical entities plus their
polarity/modality/permanence attributes, and diagnosis items from the
extracted diagnoses of a group.  Per-document item sets merge into one
template per group; each document then fills that template, with
"not available" as the single unfilled sentinel.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .corpus import (
    AttributeSet,
    Corpus,
    Document,
    Modality,
    Permanence,
    Polarity,
    RelationType,
    SpanCategory,
    Split,
    normalize_surface,
)
from .diagnosis import DiagnosisResult

NOT_AVAILABLE = "not available"
MULTI_ANSWER_SEPARATOR = "[\\MULTI_ANSWER]"


class Section(Enum):
    DIAGNOSIS = "DIAGNOSIS"
    HISTORY = "HISTORY"
    EXAMS = "EXAMS"


def join_values(values: list[str]) -> str:
    return f" {MULTI_ANSWER_SEPARATOR} ".join(values)


def split_value(value: str) -> list[str]:
    return [part.strip() for part in value.split(MULTI_ANSWER_SEPARATOR)]


def normalize_label(label: str) -> str:
    """Item identity: lowercase, collapsed whitespace, no trailing punctuation."""
    text = normalize_surface(label)
    while text and unicodedata.category(text[-1]).startswith("P"):
        text = text[:-1].rstrip()
    return text


def _item_id(section: Section, canonical_label: str) -> str:
    return f"{section.value.lower()}:{canonical_label}"


@dataclass(frozen=True)
class CrfItem:
    id: str
    section: Section
    label: str
    aliases: frozenset[str]

    @classmethod
    def make(cls, section: Section, label: str, aliases: set[str] | None = None) -> "CrfItem":
        canonical = normalize_label(label)
        alias_set = frozenset({canonical} | {normalize_label(a) for a in (aliases or set())})
        return cls(id=_item_id(section, canonical), section=section, label=canonical,
                   aliases=alias_set)


@dataclass
class CrfTemplate:
    group_id: int
    items: list[CrfItem]
    provenance: dict[str, list[str]] = field(default_factory=dict)

    def item_ids(self) -> set[str]:
        return {item.id for item in self.items}

    def by_id(self, item_id: str) -> CrfItem:
        for item in self.items:
            if item.id == item_id:
                return item
        raise KeyError(item_id)

    def section_items(self, section: Section) -> list[CrfItem]:
        return [i for i in self.items if i.section is section]


@dataclass
class FilledCrf:
    doc_id: str
    group_id: int
    values: dict[str, str]

    def filled_ids(self) -> set[str]:
        return {k for k, v in self.values.items() if v != NOT_AVAILABLE}


# ---------------------------------------------------------------------------
# history value rendering

POLARITY_WORDS = {Polarity.POSITIVE: "yes", Polarity.NEGATIVE: "no"}
MODALITY_WORDS = {
    Modality.ACTUAL: "Certainly",
    Modality.HYPOTHETICAL: "Possibly",
    Modality.HEDGED: "Probably",
    Modality.MISSING: "",
}
PERMANENCE_WORDS = {
    Permanence.PERMANENT: "chronic",
    Permanence.FINITE: "certainly not chronic",
    Permanence.MISSING: "possibly chronic",
}


def render_history_value(attrs: AttributeSet) -> str:
    """Compose "{modality} {polarity}, {permanence}" with empty parts elided
    and the first letter capitalized.  Unannotated polarity reads as present.
    """
    polarity = attrs.polarity if attrs.polarity is not Polarity.MISSING else Polarity.POSITIVE
    head = f"{MODALITY_WORDS[attrs.contextual_modality]} {POLARITY_WORDS[polarity]}".strip()
    value = f"{head}, {PERMANENCE_WORDS[attrs.permanence]}"
    return value[0].upper() + value[1:]


def history_answer_inventory() -> tuple[str, ...]:
    """Every renderable history value, in a fixed enumeration order."""
    values = []
    for polarity in (Polarity.POSITIVE, Polarity.NEGATIVE):
        for modality in Modality:
            for permanence in Permanence:
                values.append(render_history_value(AttributeSet(polarity, modality, permanence)))
    return tuple(dict.fromkeys(values))


# ---------------------------------------------------------------------------
# per-document item generation


def generate_exam_items(doc: Document) -> list[tuple[CrfItem, str]]:
    """One exam item per distinct span that at least one RML pertains to.

    A span measured by several RMLs gets a single item whose gold value
    joins the RML surfaces, in document order, with the multi-answer
    separator.  RMLs with no relation contribute nothing.
    """
    spans = doc.spans_by_id()
    rmls_by_target: dict[str, list] = {}
    for rel in doc.relations:
        if rel.type is not RelationType.PERTAINS_TO:
            continue
        source = spans.get(rel.source)
        target = spans.get(rel.target)
        if source is None or target is None:
            continue
        rmls_by_target.setdefault(target.id, []).append(source)

    out = []
    targets = sorted(rmls_by_target, key=lambda tid: (spans[tid].start, spans[tid].end, tid))
    for target_id in targets:
        target = spans[target_id]
        rmls = sorted(rmls_by_target[target_id], key=lambda s: (s.start, s.end, s.id))
        value = join_values([r.surface for r in rmls])
        item = CrfItem.make(Section.EXAMS, target.surface, aliases={target.surface})
        out.append((item, value))
    return out


def generate_history_items(doc: Document) -> list[tuple[CrfItem, str]]:
    """One history item per distinct normalized clinical-entity surface.

    The first occurrence (document order) supplies the attributes when the
    same surface is annotated more than once.
    """
    out = []
    seen: set[str] = set()
    for span in sorted(doc.spans_of(SpanCategory.CLINICAL_ENTITY), key=lambda s: (s.start, s.end)):
        key = normalize_label(span.surface)
        if not key or key in seen:
            continue
        seen.add(key)
        item = CrfItem.make(Section.HISTORY, span.surface, aliases={span.surface})
        out.append((item, render_history_value(span.attributes)))
    return out


def generate_diagnosis_items(group_docs: list[Document],
                             diagnoses: dict[str, DiagnosisResult]) -> list[CrfItem]:
    """One item per distinct normalized diagnosis across the group."""
    items = []
    seen: set[str] = set()
    for doc in group_docs:
        result = diagnoses.get(doc.id)
        if result is None or result.diagnosis is None:
            continue
        key = normalize_label(result.diagnosis)
        if not key or key in seen:
            continue
        seen.add(key)
        items.append(CrfItem.make(Section.DIAGNOSIS, result.diagnosis, aliases={result.diagnosis}))
    return items


def generate_doc_items(doc: Document, diagnoses: dict[str, DiagnosisResult]) -> list[tuple[CrfItem, str]]:
    """All (item, gold value) pairs one document contributes, every section."""
    out: list[tuple[CrfItem, str]] = []
    result = diagnoses.get(doc.id)
    if result is not None and result.diagnosis is not None:
        item = CrfItem.make(Section.DIAGNOSIS, result.diagnosis, aliases={result.diagnosis})
        out.append((item, "yes"))
    out.extend(generate_history_items(doc))
    out.extend(generate_exam_items(doc))
    return out


# ---------------------------------------------------------------------------
# normalization and merging


def _resolve_canonical(label: str, synonym_map: dict[str, str]) -> str:
    """Follow surface -> canonical mappings to a fixpoint (cycle-safe)."""
    normalized_map = {normalize_label(k): normalize_label(v) for k, v in synonym_map.items()}
    key = normalize_label(label)
    seen = {key}
    while key in normalized_map:
        nxt = normalized_map[key]
        if nxt in seen:
            break
        seen.add(nxt)
        key = nxt
    return key


def normalize_items(items: list[CrfItem], synonym_map: dict[str, str] | None = None) -> list[CrfItem]:
    """Collapse items whose canonical labels collide; aliases accumulate.

    Idempotent: a second application is the identity.
    """
    synonym_map = synonym_map or {}
    merged: dict[tuple[Section, str], set[str]] = {}
    order: list[tuple[Section, str]] = []
    for item in items:
        canonical = _resolve_canonical(item.label, synonym_map)
        key = (item.section, canonical)
        if key not in merged:
            merged[key] = set()
            order.append(key)
        merged[key].update(item.aliases)
        merged[key].add(normalize_label(item.label))
    return [
        CrfItem.make(section, canonical, aliases=merged[(section, canonical)])
        for section, canonical in order
    ]


def merge_group_items(per_doc_items: dict[str, list[tuple[CrfItem, str]]], group_id: int,
                      synonym_map: dict[str, str] | None = None) -> CrfTemplate:
    """Union of per-document items per section, after normalization.

    Provenance records every contributing document for every item.
    """
    all_items: list[CrfItem] = []
    contributors: dict[tuple[Section, str], set[str]] = {}
    for doc_id, pairs in per_doc_items.items():
        for item, _ in pairs:
            all_items.append(item)
            canonical = _resolve_canonical(item.label, synonym_map or {})
            contributors.setdefault((item.section, canonical), set()).add(doc_id)

    normalized = normalize_items(all_items, synonym_map)
    section_rank = {Section.DIAGNOSIS: 0, Section.HISTORY: 1, Section.EXAMS: 2}
    normalized.sort(key=lambda i: section_rank[i.section])
    provenance = {
        item.id: sorted(contributors.get((item.section, item.label), set()))
        for item in normalized
    }
    return CrfTemplate(group_id=group_id, items=normalized, provenance=provenance)


def fill_crf(template: CrfTemplate, doc: Document,
             per_doc_items: list[tuple[CrfItem, str]]) -> FilledCrf:
    """Total value map: the document's gold value where one of the item's
    aliases matches, "not available" everywhere else.
    """
    doc_values: dict[tuple[Section, str], str] = {}
    for item, value in per_doc_items:
        for alias in sorted(item.aliases):
            key = (item.section, alias)
            if key in doc_values and doc_values[key] != value:
                doc_values[key] = join_values([doc_values[key], value])
            else:
                doc_values[key] = value

    values: dict[str, str] = {}
    for item in template.items:
        matched: list[str] = []
        for key, value in doc_values.items():
            if key[0] is item.section and key[1] in item.aliases and value not in matched:
                matched.append(value)
        values[item.id] = join_values(matched) if matched else NOT_AVAILABLE
    return FilledCrf(doc_id=doc.id, group_id=template.group_id, values=values)


def apply_history_split_filter(templates: dict[int, CrfTemplate], filled: list[FilledCrf],
                               splits: dict[str, Split]) -> tuple[dict[int, CrfTemplate], list[FilledCrf]]:
    """Drop history items whose filled occurrences all come from test docs.

    Diagnosis and exam items are never touched.  Returns new objects; the
    inputs stay unchanged.
    """
    to_remove: set[str] = set()
    for template in templates.values():
        for item in template.section_items(Section.HISTORY):
            filler_docs = [
                f.doc_id
                for f in filled
                if f.group_id == template.group_id
                and f.values.get(item.id, NOT_AVAILABLE) != NOT_AVAILABLE
            ]
            if filler_docs and all(splits.get(d) is Split.TEST for d in filler_docs):
                to_remove.add(item.id)

    new_templates = {
        gid: CrfTemplate(
            group_id=t.group_id,
            items=[i for i in t.items if i.id not in to_remove],
            provenance={k: v for k, v in t.provenance.items() if k not in to_remove},
        )
        for gid, t in templates.items()
    }
    new_filled = [
        replace(f, values={k: v for k, v in f.values.items() if k not in to_remove})
        for f in filled
    ]
    return new_templates, new_filled


# ---------------------------------------------------------------------------
# serialization (stable key ordering for byte reproducibility)


def template_to_json(template: CrfTemplate) -> dict:
    return {
        "group_id": template.group_id,
        "items": [
            {
                "id": item.id,
                "section": item.section.value,
                "label": item.label,
                "aliases": sorted(item.aliases),
            }
            for item in template.items
        ],
        "provenance": {k: template.provenance[k] for k in sorted(template.provenance)},
    }


def template_from_json(obj: dict) -> CrfTemplate:
    items = [
        CrfItem(
            id=i["id"],
            section=Section(i["section"]),
            label=i["label"],
            aliases=frozenset(i["aliases"]),
        )
        for i in obj["items"]
    ]
    return CrfTemplate(group_id=obj["group_id"], items=items,
                       provenance={k: list(v) for k, v in obj.get("provenance", {}).items()})


def filled_to_json(filled: FilledCrf) -> dict:
    return {
        "doc_id": filled.doc_id,
        "group_id": filled.group_id,
        "values": {k: filled.values[k] for k in sorted(filled.values)},
    }


def filled_from_json(obj: dict) -> FilledCrf:
    return FilledCrf(doc_id=obj["doc_id"], group_id=obj["group_id"], values=dict(obj["values"]))


def save_templates(templates: dict[int, CrfTemplate], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for gid in sorted(templates):
            fh.write(json.dumps(template_to_json(templates[gid]), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_templates(path: str | Path) -> dict[int, CrfTemplate]:
    templates = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                template = template_from_json(json.loads(line))
                templates[template.group_id] = template
    return templates


def save_filled(filled: list[FilledCrf], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in sorted(filled, key=lambda f: f.doc_id):
            fh.write(json.dumps(filled_to_json(f), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_filled(path: str | Path) -> list[FilledCrf]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(filled_from_json(json.loads(line)))
    return out


def generate_group_artifacts(corpus: Corpus, assignment: dict[str, int | None],
                             diagnoses: dict[str, DiagnosisResult],
                             synonym_map: dict[str, str] | None = None
                             ) -> tuple[dict[int, CrfTemplate], list[FilledCrf]]:
    """Templates and gold fillings for every group in a partition."""
    groups: dict[int, list[Document]] = {}
    for doc in corpus:
        group = assignment.get(doc.id)
        if group is None:
            continue
        groups.setdefault(group, []).append(doc)

    templates: dict[int, CrfTemplate] = {}
    filled: list[FilledCrf] = []
    for gid in sorted(groups):
        docs = groups[gid]
        per_doc = {doc.id: generate_doc_items(doc, diagnoses) for doc in docs}
        template = merge_group_items(per_doc, gid, synonym_map)
        templates[gid] = template
        for doc in docs:
            filled.append(fill_crf(template, doc, per_doc[doc.id]))
    return templates, filled
