"""Semi-automated CRF item revision with human sign-off.

A suggester backend proposes item merges with justifications; a reviewer
approves or rejects each one.  Approvals fold the source item's aliases
into the target, reconcile every document's values, and bump the template
version.  Nothing is ever auto-applied: the decision log is the single
source of truth, and replaying it against the initial state reproduces the
final template exactly.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import pydantic

from .clients import ChatCompletionClient, RequestCache, SuggesterUnavailable, extract_json_object
from .crfgen import (
    NOT_AVAILABLE,
    CrfItem,
    CrfTemplate,
    FilledCrf,
    filled_from_json,
    filled_to_json,
    join_values,
    template_from_json,
    template_to_json,
)

SCHEMA_VERSION = 1


class ProposalStatus(Enum):
    PENDING = "PENDING"
    APPROVED = "APPROVED"
    REJECTED = "REJECTED"
    STALE = "STALE"


class Decision(Enum):
    APPROVED = "APPROVED"
    REJECTED = "REJECTED"


class ProposalNotPending(Exception):
    pass


class StaleProposal(Exception):
    pass


@dataclass(frozen=True)
class MergeProposal:
    id: str
    group_id: int
    source_item: str
    target_item: str
    justification: str
    status: ProposalStatus = ProposalStatus.PENDING


@dataclass(frozen=True)
class DecisionRecord:
    proposal_id: str
    decision: Decision
    timestamp: float
    reviewer: str


@dataclass
class ReviewSession:
    session_id: str
    group_id: int
    template_version: int = 0
    decision_log: list[DecisionRecord] = field(default_factory=list)


@dataclass
class ReviewState:
    """Everything one revision session operates on, as a value."""

    session: ReviewSession
    template: CrfTemplate
    filled: list[FilledCrf]
    proposals: list[MergeProposal]


# ---------------------------------------------------------------------------
# suggester backends


class SuggesterClient:
    """Answers, per item, whether it maps onto some existing item.

    Returns (target item id, justification) or None for "no mapping".
    Transport failures raise SuggesterUnavailable.
    """

    name = "suggester"

    def suggest(self, item: CrfItem, others: list[CrfItem]) -> tuple[str, str] | None:
        raise NotImplementedError


class StubSuggester(SuggesterClient):
    """Fixture-table suggester keyed by item label."""

    name = "stub"

    def __init__(self, mapping: dict[str, tuple[str, str]] | None = None):
        # label -> (target label, justification)
        self.mapping = mapping or {}

    def suggest(self, item: CrfItem, others: list[CrfItem]) -> tuple[str, str] | None:
        hit = self.mapping.get(item.label)
        if hit is None:
            return None
        target_label, justification = hit
        for other in others:
            if other.label == target_label and other.section is item.section:
                return other.id, justification
        # fixture points at a label that is not in the template
        return f"{item.section.value.lower()}:{target_label}", justification


_SUGGEST_SYSTEM_PROMPT = (
    "You are curating a clinical Case Report Form. Given one item and the list of "
    "other items in the same section, decide whether the item is equivalent or "
    "highly related to one of them. Respond with a json object "
    '{"maps_to": "<item id or null>", "justification": "<short reason>"}. '
    'Use null when the item should stay separate.'
)


class HttpSuggester(SuggesterClient):
    def __init__(self, url: str, model: str, api_key: str | None = None,
                 cache: RequestCache | None = None):
        self._chat = ChatCompletionClient(url, model, api_key=api_key, cache=cache)
        self.name = f"http:{model}"

    def suggest(self, item: CrfItem, others: list[CrfItem]) -> tuple[str, str] | None:
        listing = "\n".join(f"- {o.id}: {o.label}" for o in others if o.section is item.section)
        user = f"Item: {item.id}: {item.label}\nOther items:\n{listing}"
        content = self._chat.complete(_SUGGEST_SYSTEM_PROMPT, user, SuggesterUnavailable)
        obj = extract_json_object(content)
        if obj is None or not obj.get("maps_to"):
            return None
        return str(obj["maps_to"]), str(obj.get("justification", ""))


def propose_merges(template: CrfTemplate, suggester: SuggesterClient,
                   warnings: list[str] | None = None) -> list[MergeProposal]:
    """One PENDING proposal per positive suggester answer.

    Suggestions that point at unknown items (or at the item itself) are
    discarded with a warning.
    """
    known = template.item_ids()
    proposals: list[MergeProposal] = []
    counter = 0
    for item in template.items:
        others = [o for o in template.items if o.id != item.id]
        answer = suggester.suggest(item, others)
        if answer is None:
            continue
        target_id, justification = answer
        if target_id not in known or target_id == item.id:
            if warnings is not None:
                warnings.append(
                    f"dropped suggestion {item.id} -> {target_id}: unknown or self target"
                )
            continue
        counter += 1
        proposals.append(
            MergeProposal(
                id=f"p{counter:04d}",
                group_id=template.group_id,
                source_item=item.id,
                target_item=target_id,
                justification=justification,
            )
        )
    return proposals


# ---------------------------------------------------------------------------
# decisions


def _fold_item(template: CrfTemplate, source_id: str, target_id: str) -> CrfTemplate:
    source = template.by_id(source_id)
    target = template.by_id(target_id)
    merged = replace(target, aliases=frozenset(target.aliases | source.aliases))
    items = [merged if i.id == target_id else i for i in template.items if i.id != source_id]
    provenance = dict(template.provenance)
    source_docs = provenance.pop(source_id, [])
    provenance[target_id] = sorted(set(provenance.get(target_id, [])) | set(source_docs))
    return CrfTemplate(group_id=template.group_id, items=items, provenance=provenance)


def _fold_values(filled: list[FilledCrf], source_id: str, target_id: str) -> list[FilledCrf]:
    out = []
    for f in filled:
        values = dict(f.values)
        source_value = values.pop(source_id, NOT_AVAILABLE)
        target_value = values.get(target_id, NOT_AVAILABLE)
        if source_value != NOT_AVAILABLE and target_value != NOT_AVAILABLE:
            # equal values collapse; differing ones both survive the merge
            if source_value != target_value:
                values[target_id] = join_values([target_value, source_value])
        elif source_value != NOT_AVAILABLE:
            values[target_id] = source_value
        out.append(replace(f, values=values))
    return out


def apply_decision(state: ReviewState, proposal_id: str, decision: Decision,
                   reviewer: str, timestamp: float | None = None) -> ReviewState:
    """Apply one reviewer decision, returning the new state.

    Approvals consolidate the source item into the target across the
    template and every filled CRF; proposals that referenced a removed item
    turn STALE.  The decision is appended to the immutable log either way.
    """
    proposal = next((p for p in state.proposals if p.id == proposal_id), None)
    if proposal is None:
        raise KeyError(f"unknown proposal {proposal_id!r}")
    if proposal.status is ProposalStatus.STALE:
        raise StaleProposal(proposal_id)
    if proposal.status is not ProposalStatus.PENDING:
        raise ProposalNotPending(f"{proposal_id} is {proposal.status.value}")
    present = state.template.item_ids()
    if proposal.source_item not in present or proposal.target_item not in present:
        raise StaleProposal(proposal_id)

    record = DecisionRecord(
        proposal_id=proposal_id,
        decision=decision,
        timestamp=time.time() if timestamp is None else timestamp,
        reviewer=reviewer,
    )
    session = replace(
        state.session,
        decision_log=[*state.session.decision_log, record],
        template_version=state.session.template_version + (1 if decision is Decision.APPROVED else 0),
    )

    if decision is Decision.REJECTED:
        proposals = [
            replace(p, status=ProposalStatus.REJECTED) if p.id == proposal_id else p
            for p in state.proposals
        ]
        return ReviewState(session, state.template, state.filled, proposals)

    template = _fold_item(state.template, proposal.source_item, proposal.target_item)
    filled = _fold_values(state.filled, proposal.source_item, proposal.target_item)
    remaining = template.item_ids()
    proposals = []
    for p in state.proposals:
        if p.id == proposal_id:
            proposals.append(replace(p, status=ProposalStatus.APPROVED))
        elif p.status is ProposalStatus.PENDING and (
            p.source_item not in remaining or p.target_item not in remaining
        ):
            proposals.append(replace(p, status=ProposalStatus.STALE))
        else:
            proposals.append(p)
    return ReviewState(session, template, filled, proposals)


def list_pending(state: ReviewState) -> list[MergeProposal]:
    return [p for p in state.proposals if p.status is ProposalStatus.PENDING]


def replay_decision_log(initial: ReviewState, log: list[DecisionRecord]) -> ReviewState:
    """Re-apply a decision log against the initial state."""
    state = initial
    for record in log:
        state = apply_decision(state, record.proposal_id, record.decision,
                               record.reviewer, record.timestamp)
    return state


# ---------------------------------------------------------------------------
# persistence: snapshot + append-only decision log


def _proposal_to_json(p: MergeProposal) -> dict:
    return {
        "id": p.id,
        "group_id": p.group_id,
        "source_item": p.source_item,
        "target_item": p.target_item,
        "justification": p.justification,
        "status": p.status.value,
    }


def _proposal_from_json(obj: dict) -> MergeProposal:
    return MergeProposal(
        id=obj["id"],
        group_id=obj["group_id"],
        source_item=obj["source_item"],
        target_item=obj["target_item"],
        justification=obj.get("justification", ""),
        status=ProposalStatus(obj.get("status", "PENDING")),
    )


class SessionStore:
    """One directory per session: initial snapshot + decisions.jsonl.

    Crashes never lose decisions; the current state is always the snapshot
    with the log replayed over it.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _snapshot_path(self) -> Path:
        return self.directory / "session.json"

    def _log_path(self) -> Path:
        return self.directory / "decisions.jsonl"

    def create(self, session_id: str, template: CrfTemplate, filled: list[FilledCrf],
               proposals: list[MergeProposal]) -> ReviewState:
        self.directory.mkdir(parents=True, exist_ok=True)
        snapshot = {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "group_id": template.group_id,
            "template": template_to_json(template),
            "filled": [filled_to_json(f) for f in filled],
            "proposals": [_proposal_to_json(p) for p in proposals],
        }
        self._snapshot_path().write_text(
            json.dumps(snapshot, ensure_ascii=False, sort_keys=True, indent=1), encoding="utf-8"
        )
        self._log_path().touch()
        return self.load()

    def initial_state(self) -> ReviewState:
        snapshot = json.loads(self._snapshot_path().read_text(encoding="utf-8"))
        return ReviewState(
            session=ReviewSession(snapshot["session_id"], snapshot["group_id"]),
            template=template_from_json(snapshot["template"]),
            filled=[filled_from_json(f) for f in snapshot["filled"]],
            proposals=[_proposal_from_json(p) for p in snapshot["proposals"]],
        )

    def read_log(self) -> list[DecisionRecord]:
        records = []
        if self._log_path().exists():
            for line in self._log_path().read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                records.append(
                    DecisionRecord(obj["proposal_id"], Decision(obj["decision"]),
                                   obj["timestamp"], obj["reviewer"])
                )
        return records

    def load(self) -> ReviewState:
        return replay_decision_log(self.initial_state(), self.read_log())

    def append_decision(self, record: DecisionRecord) -> None:
        with open(self._log_path(), "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "proposal_id": record.proposal_id,
                "decision": record.decision.value,
                "timestamp": record.timestamp,
                "reviewer": record.reviewer,
            }, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# HTTP service consumed by the review UI


def _example_values(filled: list[FilledCrf], item_id: str, limit: int = 5) -> list[dict]:
    out = []
    for f in sorted(filled, key=lambda f: f.doc_id):
        value = f.values.get(item_id, NOT_AVAILABLE)
        if value != NOT_AVAILABLE:
            out.append({"doc_id": f.doc_id, "value": value})
        if len(out) >= limit:
            break
    return out


def proposal_view(state: ReviewState, proposal: MergeProposal) -> dict:
    def item_payload(item_id: str) -> dict:
        item = state.template.by_id(item_id)
        return {
            "item_id": item.id,
            "label": item.label,
            "aliases": sorted(item.aliases),
            "examples": _example_values(state.filled, item.id),
        }

    return {
        "proposal_id": proposal.id,
        "status": proposal.status.value,
        "justification": proposal.justification,
        "source": item_payload(proposal.source_item),
        "target": item_payload(proposal.target_item),
        "template_version": state.session.template_version,
    }


class DecisionBody(pydantic.BaseModel):
    proposal_id: str
    decision: str
    reviewer: str


def create_app(stores: dict[str, SessionStore]):
    """FastAPI app over one or more session stores, keyed by session id."""
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="casecrf review service")
    lock = threading.Lock()
    states: dict[str, ReviewState] = {sid: store.load() for sid, store in stores.items()}

    def get_state(session_id: str) -> ReviewState:
        if session_id not in states:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return states[session_id]

    @app.get("/sessions/{session_id}/pending")
    def pending(session_id: str):
        state = get_state(session_id)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "group_id": state.template.group_id,
            "template_version": state.session.template_version,
            "proposals": [proposal_view(state, p) for p in list_pending(state)],
        }

    @app.post("/sessions/{session_id}/decisions")
    def decide(session_id: str, body: DecisionBody):
        with lock:
            state = get_state(session_id)
            try:
                decision = Decision(body.decision)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"bad decision {body.decision!r}")
            try:
                new_state = apply_decision(state, body.proposal_id, decision, body.reviewer)
            except KeyError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            except StaleProposal as exc:
                raise HTTPException(status_code=409, detail=f"stale proposal: {exc}")
            except ProposalNotPending as exc:
                raise HTTPException(status_code=409, detail=f"not pending: {exc}")
            stores[session_id].append_decision(new_state.session.decision_log[-1])
            states[session_id] = new_state
            return {
                "schema_version": SCHEMA_VERSION,
                "template_version": new_state.session.template_version,
                "pending_count": len(list_pending(new_state)),
            }

    @app.get("/sessions/{session_id}/template")
    def template(session_id: str):
        state = get_state(session_id)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": session_id,
            "template_version": state.session.template_version,
            "template": template_to_json(state.template),
        }

    return app
