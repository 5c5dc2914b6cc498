"""Pairwise document similarity: term augmentation, features, edge weights.

Each document contributes its augmented clinical-entity term set; each pair
gets the shared-entity ratio e and the diagnosis embedding similarity d,
combined as s = 3*d + e (the body-part variant uses s = 3*d + (e+b)/2).
"""

from casecrf.clients import StubEmbedder
from casecrf.corpus import load_corpus
from casecrf.diagnosis import DeterministicSelector, build_shortlist, select_all
from casecrf.simgraph import SynonymTable, augment_term, build_graph, document_term_sets

corpus = load_corpus("data/toy/corpus.jsonl")
table = SynonymTable.from_file("data/toy/synonyms.tsv")

print("term augmentation (synonym table stands in for a terminology DB):")
for term in ("sepsis", "JMML", "unlisted term"):
    aug = augment_term(term, table)
    print(f"  {term!r} -> {list(aug.related)}")

print("\nper-document augmented entity sets:")
for doc in corpus:
    entities, _ = document_term_sets(doc, table)
    print(f"  {doc.id}: {sorted(entities)}")

shortlists = {d.id: build_shortlist(d) for d in corpus}
diagnoses = select_all(corpus, shortlists, DeterministicSelector())
graph = build_graph(corpus, diagnoses, table, StubEmbedder())

print("\nedges (idA, idB, d, e, s):")
for (a, b), (features, s) in graph.edges.items():
    print(f"  {a} -- {b}: d={features.d:+.3f} e={features.e:.3f} s={s:+.3f}")
