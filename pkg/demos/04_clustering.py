"""Seeded Louvain over the similarity graph.

Seeds come from the connected components of high-d edges (documents whose
diagnoses already embed close), then the standard two-phase Louvain refines
them against the combined weights.  Small leftover groups are UNASSIGNED.
"""

from casecrf.clients import StubEmbedder
from casecrf.cluster import ClusterConfig, LouvainTrace, louvain, modularity, seed_components
from casecrf.corpus import load_corpus
from casecrf.diagnosis import DeterministicSelector, build_shortlist, select_all
from casecrf.simgraph import SynonymTable, build_graph

corpus = load_corpus("data/toy/corpus.jsonl")
table = SynonymTable.from_file("data/toy/synonyms.tsv")
shortlists = {d.id: build_shortlist(d) for d in corpus}
diagnoses = select_all(corpus, shortlists, DeterministicSelector())
graph = build_graph(corpus, diagnoses, table, StubEmbedder())

config = ClusterConfig(d_seed_threshold=0.8, rng_seed=7, min_group_size=1)
seed = seed_components(graph, config.d_seed_threshold)
print("seed groups (connected components of d >= 0.8 edges):")
for group, members in sorted(seed.groups().items()):
    print(f"  seed {group}: {members}")

trace = LouvainTrace()
partition = louvain(graph, seed, config, trace)
print("\nfinal partition:")
for group, members in sorted(partition.groups().items()):
    print(f"  group {group}: {members}")
print(f"  unassigned: {partition.unassigned()}")
print(f"\nmodularity Q = {modularity(graph, partition):.4f}")
print(f"Q per pass: {[round(q, 4) for q in trace.modularity_per_pass]}")
print(f"local moves logged: {len(trace.moves)}")
