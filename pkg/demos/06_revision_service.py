"""Human-in-the-loop item revision: propose, review, replay.

A suggester proposes merges with justifications; approvals fold the source
item into the target across the template and every filled CRF.  The
decision log is append-only and replaying it reproduces the final state,
so a crashed session never loses work.  The same flow is what the HTTP
service (``casecrf revise serve``) and the browser UI drive.
"""

import tempfile

from casecrf.crfgen import CrfItem, CrfTemplate, FilledCrf, Section
from casecrf.revise import (
    Decision,
    SessionStore,
    StubSuggester,
    apply_decision,
    list_pending,
    propose_merges,
    replay_decision_log,
)

items = [
    CrfItem.make(Section.HISTORY, "leg"),
    CrfItem.make(Section.HISTORY, "lower limb"),
    CrfItem.make(Section.HISTORY, "fever"),
]
template = CrfTemplate(group_id=0, items=items,
                       provenance={i.id: ["d1"] for i in items})
filled = [
    FilledCrf("d1", 0, {"history:leg": "Yes, chronic",
                        "history:lower limb": "not available",
                        "history:fever": "Certainly yes, possibly chronic"}),
    FilledCrf("d2", 0, {"history:leg": "not available",
                        "history:lower limb": "No, possibly chronic",
                        "history:fever": "not available"}),
]

suggester = StubSuggester({"leg": ("lower limb", "a leg is part of the lower limb")})
proposals = propose_merges(template, suggester)
print("proposals:")
for p in proposals:
    print(f"  {p.id}: {p.source_item} -> {p.target_item}  ({p.justification})")

with tempfile.TemporaryDirectory() as tmp:
    store = SessionStore(tmp)
    state = store.create("demo", template, filled, proposals)
    print(f"\npending before review: {[p.id for p in list_pending(state)]}")

    state = apply_decision(state, proposals[0].id, Decision.APPROVED, reviewer="demo-user")
    store.append_decision(state.session.decision_log[-1])
    print(f"pending after approval: {[p.id for p in list_pending(state)]}")
    print(f"template version: {state.session.template_version}")
    print("surviving items:")
    for item in state.template.items:
        print(f"  {item.id}: aliases={sorted(item.aliases)}")
    print("reconciled values for d1:", state.filled[0].values)

    replayed = replay_decision_log(store.initial_state(), store.read_log())
    assert replayed.template == state.template
    print("\nreplaying the decision log reproduces the template: OK")
