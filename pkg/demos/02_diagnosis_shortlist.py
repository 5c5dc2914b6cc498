"""Diagnosis extraction: keyword-pattern shortlist, then a selector pick.

Notes mentioning a "diagnos-" word followed by an annotated clinical entity
get a focused candidate list; everything else falls back to all entities.
The selector here is the offline deterministic stub; swap in an HTTP
chat-completion endpoint via the run config for real runs.
"""

from casecrf.corpus import load_corpus
from casecrf.diagnosis import (
    DeterministicSelector,
    build_selection_prompt,
    build_shortlist,
    select_diagnosis,
)

corpus = load_corpus("data/toy/corpus.jsonl")
selector = DeterministicSelector()

for doc in corpus:
    shortlist = build_shortlist(doc)
    result = select_diagnosis(doc, shortlist, selector)
    print(f"{doc.id}: source={shortlist.source.value:12s} "
          f"candidates={shortlist.surfaces()} -> {result.diagnosis!r}")

# the exact prompt a remote selector would receive (zero-shot here)
doc = corpus.by_id("docC")
print("\n--- selection prompt for docC ---")
print(build_selection_prompt(doc, build_shortlist(doc)))
