"""From grouped documents to CRF templates and gold fillings.

Exam items come from spans that results/measurements pertain to, history
items from clinical entities plus their three attributes, diagnosis items
from the extracted diagnoses.  Per-document sets union into one template
per group; each document then fills it ("not available" when silent).
"""

from casecrf.corpus import load_corpus
from casecrf.crfgen import (
    generate_doc_items,
    generate_group_artifacts,
    history_answer_inventory,
    render_history_value,
)
from casecrf.corpus import AttributeSet, Modality, Permanence, Polarity
from casecrf.diagnosis import DeterministicSelector, build_shortlist, select_all

corpus = load_corpus("data/toy/corpus.jsonl")
shortlists = {d.id: build_shortlist(d) for d in corpus}
diagnoses = select_all(corpus, shortlists, DeterministicSelector())

print("history value rendering ({modality} {polarity}, {permanence}):")
for attrs in (
    AttributeSet(Polarity.POSITIVE, Modality.ACTUAL, Permanence.PERMANENT),
    AttributeSet(Polarity.POSITIVE, Modality.HEDGED, Permanence.FINITE),
    AttributeSet(Polarity.NEGATIVE, Modality.MISSING, Permanence.MISSING),
):
    print(f"  {attrs.polarity.value}/{attrs.contextual_modality.value}/"
          f"{attrs.permanence.value} -> {render_history_value(attrs)!r}")
print(f"full inventory: {len(history_answer_inventory())} renderable values")

doc = corpus.by_id("docA")
print(f"\nitems contributed by {doc.id}:")
for item, value in generate_doc_items(doc, diagnoses):
    print(f"  {item.section.value:9s} {item.label!r} = {value!r}")

assignment = {"docA": 0, "docB": 0, "docC": 1}
templates, filled = generate_group_artifacts(corpus, assignment, diagnoses)
template = templates[0]
print(f"\ngroup 0 template ({len(template.items)} items):")
for item in template.items:
    print(f"  {item.id}  (from {template.provenance[item.id]})")

print("\ngold fillings for group 0:")
for f in filled:
    if f.group_id == 0:
        print(f"  {f.doc_id}: " + ", ".join(
            f"{k}={v!r}" for k, v in sorted(f.values.items())
        ))
