"""Term augmentation, pairwise similarity features, and the document graph.

Each unordered document pair gets a feature triple: diagnosis embedding
similarity ``d``, shared clinical-entity ratio ``e``, and (when body parts
are annotated) shared body-part ratio ``b``.  The combined edge weight is
``s = 3*d + e`` in the general formula and ``s = 3*d + (e + b)/2`` in the
variant that also uses body parts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .clients import EmbeddingClient, TranslatorClient, TranslatorUnavailable, cosine_similarity
from .corpus import Corpus, Document, SpanCategory, normalize_surface
from .diagnosis import DiagnosisResult

logger = logging.getLogger(__name__)

AUGMENT_SEPARATOR = "; "


class MissingFeature(Exception):
    pass


class WeightFormula(Enum):
    GENERAL = "GENERAL"
    E3C = "E3C"


@dataclass(frozen=True)
class AugmentedTerm:
    base: str
    related: tuple[str, ...]
    language: str = "en"

    def flattened(self) -> list[str]:
        return [self.base, *self.related]

    def embedding_input(self) -> str:
        return AUGMENT_SEPARATOR.join(self.flattened())


@dataclass(frozen=True)
class PairFeatures:
    d: float
    e: float
    b: float | None = None


@dataclass
class SimilarityGraph:
    nodes: tuple[str, ...]
    edges: dict[tuple[str, str], tuple[PairFeatures, float]]
    weight_formula: WeightFormula

    def weight(self, a: str, b: str) -> float:
        edge = self.edges.get((a, b) if a <= b else (b, a))
        return edge[1] if edge is not None else 0.0

    def neighbors(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {node: {} for node in self.nodes}
        for (a, b), (_, s) in self.edges.items():
            adj[a][b] = s
            adj[b][a] = s
        return adj


class SynonymTable:
    """Local term -> related-concepts table standing in for a terminology DB.

    File format: ``term<TAB>related1<TAB>...<TAB>relatedN``, one term per
    line.  Lookup is case-insensitive exact match after whitespace
    normalization.
    """

    def __init__(self, entries: dict[str, list[str]] | None = None):
        self._entries: dict[str, list[str]] = {}
        for term, related in (entries or {}).items():
            self._entries[normalize_surface(term)] = list(related)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynonymTable":
        table = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = [p for p in line.split("\t") if p.strip()]
                if not parts:
                    continue
                table._entries[normalize_surface(parts[0])] = [p.strip() for p in parts[1:]]
        return table

    def related(self, term: str) -> list[str]:
        return list(self._entries.get(normalize_surface(term), []))

    def __len__(self) -> int:
        return len(self._entries)


def augment_term(term: str, table: SynonymTable, k: int = 5, language: str = "en") -> AugmentedTerm:
    """Append up to ``k`` related concepts from the table, in table order."""
    if k < 0:
        raise ValueError("k must be >= 0")
    related = []
    seen = {normalize_surface(term)}
    for candidate in table.related(term):
        key = normalize_surface(candidate)
        if key in seen:
            continue
        seen.add(key)
        related.append(candidate)
        if len(related) >= k:
            break
    return AugmentedTerm(base=term, related=tuple(related), language=language)


def translate_term(term: str, source_language: str, translator: TranslatorClient,
                   fallback: bool = True) -> str:
    """English rendering of a term; identity for English input."""
    if source_language == "en":
        return term
    try:
        return translator.translate(term, source_language)
    except TranslatorUnavailable:
        if not fallback:
            raise
        logger.warning("translator unavailable for %r (%s); keeping original term",
                       term, source_language)
        return term


def entity_share_ratio(terms_a: set[str], terms_b: set[str]) -> float:
    """|A ∩ B| / min(|A|, |B|); defined as 0 when either side is empty."""
    smaller = min(len(terms_a), len(terms_b))
    if smaller == 0:
        return 0.0
    return len(terms_a & terms_b) / smaller


def diagnosis_similarity(diag_a: AugmentedTerm, diag_b: AugmentedTerm,
                         embedder: EmbeddingClient) -> float:
    vecs = embedder.embed([diag_a.embedding_input(), diag_b.embedding_input()])
    return cosine_similarity(vecs[0], vecs[1])


def pair_similarity(features: PairFeatures, formula: WeightFormula) -> float:
    """Combined edge weight; diagnosis similarity carries triple weight."""
    if formula is WeightFormula.GENERAL:
        return 3.0 * features.d + features.e
    if formula is WeightFormula.E3C:
        if features.b is None:
            raise MissingFeature("E3C formula needs the shared body-part ratio b")
        return 3.0 * features.d + (features.e + features.b) / 2.0
    raise ValueError(f"unknown formula {formula!r}")


# ---------------------------------------------------------------------------
# graph construction


@dataclass
class GraphConfig:
    formula: WeightFormula = WeightFormula.GENERAL
    augment_k: int = 5
    edge_floor: float = 0.0  # edges with s below this are not stored


def _augmented_set(surfaces: list[str], language: str, table: SynonymTable,
                   translator: TranslatorClient | None, k: int) -> set[str]:
    out: set[str] = set()
    seen_bases: set[str] = set()
    for surface in surfaces:
        key = normalize_surface(surface)
        if key in seen_bases:
            continue
        seen_bases.add(key)
        term = surface
        if language != "en" and translator is not None:
            term = translate_term(term, language, translator)
        aug = augment_term(term, table, k=k, language="en")
        out.update(normalize_surface(t) for t in aug.flattened())
    return out


def document_term_sets(doc: Document, table: SynonymTable,
                       translator: TranslatorClient | None = None,
                       k: int = 5) -> tuple[set[str], set[str]]:
    """Flattened augmented term sets for entities and body parts."""
    entity_surfaces = [s.surface for s in doc.spans_of(SpanCategory.CLINICAL_ENTITY)]
    body_surfaces = [s.surface for s in doc.spans_of(SpanCategory.BODY_PART)]
    entities = _augmented_set(entity_surfaces, doc.language, table, translator, k)
    bodies = _augmented_set(body_surfaces, doc.language, table, translator, k)
    return entities, bodies


def augment_diagnosis(doc: Document, result: DiagnosisResult | None, table: SynonymTable,
                      translator: TranslatorClient | None = None, k: int = 5) -> AugmentedTerm | None:
    if result is None or result.diagnosis is None:
        return None
    term = result.diagnosis
    if doc.language != "en" and translator is not None:
        term = translate_term(term, doc.language, translator)
    return augment_term(term, table, k=k, language="en")


def build_graph(corpus: Corpus, diagnoses: dict[str, DiagnosisResult],
                table: SynonymTable, embedder: EmbeddingClient,
                translator: TranslatorClient | None = None,
                config: GraphConfig | None = None) -> SimilarityGraph:
    """Compute features and combined weight for every unordered document pair.

    Pairs where either side lacks a diagnosis keep their entity (and body
    part) ratios but get d = 0.  The body-part ratio is only computed when
    the corpus annotates body parts at all.
    """
    config = config or GraphConfig()
    docs = corpus.documents
    has_body_parts = any(doc.spans_of(SpanCategory.BODY_PART) for doc in docs)

    entity_sets: dict[str, set[str]] = {}
    body_sets: dict[str, set[str]] = {}
    diag_terms: dict[str, AugmentedTerm] = {}
    for doc in docs:
        ents, bodies = document_term_sets(doc, table, translator, k=config.augment_k)
        entity_sets[doc.id] = ents
        body_sets[doc.id] = bodies
        aug = augment_diagnosis(doc, diagnoses.get(doc.id), table, translator, k=config.augment_k)
        if aug is not None:
            diag_terms[doc.id] = aug

    # one batched embedding call over all diagnosis strings, stable order
    embed_ids = [doc.id for doc in docs if doc.id in diag_terms]
    vectors = {}
    if embed_ids:
        embedded = embedder.embed([diag_terms[i].embedding_input() for i in embed_ids])
        vectors = dict(zip(embed_ids, embedded))

    edges: dict[tuple[str, str], tuple[PairFeatures, float]] = {}
    for i, doc_a in enumerate(docs):
        for doc_b in docs[i + 1 :]:
            e = entity_share_ratio(entity_sets[doc_a.id], entity_sets[doc_b.id])
            b = entity_share_ratio(body_sets[doc_a.id], body_sets[doc_b.id]) if has_body_parts else None
            if doc_a.id in vectors and doc_b.id in vectors:
                d = cosine_similarity(vectors[doc_a.id], vectors[doc_b.id])
            else:
                d = 0.0
            features = PairFeatures(d=d, e=e, b=b)
            s = pair_similarity(features, config.formula)
            if s >= config.edge_floor:
                key = (doc_a.id, doc_b.id) if doc_a.id <= doc_b.id else (doc_b.id, doc_a.id)
                edges[key] = (features, s)

    return SimilarityGraph(nodes=tuple(d.id for d in docs), edges=edges,
                           weight_formula=config.formula)


# ---------------------------------------------------------------------------
# edge-list export / reload


def save_graph(graph: SimilarityGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# weight_formula={graph.weight_formula.value}\n")
        fh.write(f"# nodes={','.join(graph.nodes)}\n")
        fh.write("# idA\tidB\td\te\tb\ts\n")
        for (a, b), (feat, s) in graph.edges.items():
            b_field = repr(feat.b) if feat.b is not None else ""
            fh.write(f"{a}\t{b}\t{feat.d!r}\t{feat.e!r}\t{b_field}\t{s!r}\n")


def load_graph(path: str | Path) -> SimilarityGraph:
    formula = WeightFormula.GENERAL
    nodes: tuple[str, ...] = ()
    edges: dict[tuple[str, str], tuple[PairFeatures, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# weight_formula="):
                formula = WeightFormula(line.split("=", 1)[1])
                continue
            if line.startswith("# nodes="):
                listed = line.split("=", 1)[1]
                nodes = tuple(listed.split(",")) if listed else ()
                continue
            if not line or line.startswith("#"):
                continue
            a, b, d, e, b_field, s = line.split("\t")
            feat = PairFeatures(d=float(d), e=float(e), b=float(b_field) if b_field else None)
            edges[(a, b)] = (feat, float(s))
    return SimilarityGraph(nodes=nodes, edges=edges, weight_formula=formula)
