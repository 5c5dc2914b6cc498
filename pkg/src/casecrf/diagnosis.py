"""Conclusive-diagnosis extraction: pattern shortlist + pluggable selector.

The shortlist is built from tokens carrying a per-language "diagnos-" style
prefix followed (within a small window) by an annotated clinical entity;
when the pattern never fires, every clinical entity in the note becomes a
candidate.  A selector backend (LLM endpoint or the deterministic stub)
then picks the final diagnosis from the shortlist.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .clients import ChatCompletionClient, RequestCache, SelectorUnavailable, extract_json_object
from .corpus import Corpus, Document, SpanCategory, normalize_surface

NO_DIAGNOSIS = "no diagnosis"

# Appendix-style selector instructions; the selector answer must be a JSON
# object with a motivation and the extracted diagnosis.
SELECTION_SYSTEM_PROMPT = (
    "You are a clinical assistant. "
    "Your job is to extract the conclusive diagnosis from a clinical note written by "
    "an experienced physician. "
    "The diagnosis is a medical condition identified by a health care provider. "
    "To complete the task, you are aided by a list of possible diagnoses. "
    "Here are your guidelines:\n"
    "1. The diagnosis is always contained in the list of potential diagnoses.\n"
    "2. Your goal is to extract only the diagnosis, ignoring everything else.\n"
    "3. Respond with a json containing the extracted diagnosis and a short motivation "
    "{“motivation”: “motivation for the extracted diagnosis”, "
    "“diagnosis”: “extracted diagnosis”}.\n"
    "4. If no diagnosis is reported, respond with “no diagnosis.”\n"
    "\n"
    "CAUTION: Notes may contain diagnoses made in the past with respect to "
    "the current clinical situation. "
    "Only extract diagnoses related to the current situation."
)


class ShortlistSource(Enum):
    PATTERN = "PATTERN"
    ALL_ENTITIES = "ALL_ENTITIES"


@dataclass(frozen=True)
class DiagnosisShortlist:
    doc_id: str
    candidates: tuple[tuple[str, str], ...]  # (span id, surface)
    source: ShortlistSource

    def surfaces(self) -> list[str]:
        return [surface for _, surface in self.candidates]


@dataclass(frozen=True)
class DiagnosisResult:
    doc_id: str
    diagnosis: str | None
    motivation: str
    selector: str

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "diagnosis": self.diagnosis,
            "motivation": self.motivation,
            "selector": self.selector,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiagnosisResult":
        return cls(obj["doc_id"], obj.get("diagnosis"), obj.get("motivation", ""), obj.get("selector", ""))


@dataclass
class ShortlistConfig:
    """Prefix stems per language; the window is counted in word tokens."""

    prefix_stems: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: {"en": ("diagnos",), "it": ("diagnos",)}
    )
    default_stems: tuple[str, ...] = ("diagnos",)
    follow_window: int = 10

    def stems_for(self, language: str) -> tuple[str, ...]:
        return self.prefix_stems.get(language, self.default_stems)


_WORD_RE = re.compile(r"\w+")


def _tokens(text: str) -> list[tuple[int, int, str]]:
    return [(m.start(), m.end(), m.group(0).lower()) for m in _WORD_RE.finditer(text)]


def _first_token_index(starts: list[int], ends: list[int], offset: int) -> int:
    idx = bisect_right(starts, offset) - 1
    if idx >= 0 and ends[idx] > offset:
        return idx
    return idx + 1


def build_shortlist(doc: Document, config: ShortlistConfig | None = None) -> DiagnosisShortlist:
    """Scan for prefix-keyword tokens trailed by a clinical entity.

    Pattern hits win; otherwise every clinical entity is a candidate.
    Candidates are de-duplicated by normalized surface, document order kept.
    """
    config = config or ShortlistConfig()
    stems = config.stems_for(doc.language)
    tokens = _tokens(doc.text)
    starts = [t[0] for t in tokens]
    ends = [t[1] for t in tokens]
    keyword_indexes = [
        i for i, (_, _, word) in enumerate(tokens) if any(word.startswith(s) for s in stems)
    ]

    entities = sorted(doc.spans_of(SpanCategory.CLINICAL_ENTITY), key=lambda s: (s.start, s.end))
    pattern_hits = []
    if keyword_indexes:
        for span in entities:
            ent_token = _first_token_index(starts, ends, span.start)
            if any(1 <= ent_token - k <= config.follow_window for k in keyword_indexes):
                pattern_hits.append(span)

    chosen = pattern_hits if pattern_hits else entities
    source = ShortlistSource.PATTERN if pattern_hits else ShortlistSource.ALL_ENTITIES

    seen: set[str] = set()
    candidates = []
    for span in chosen:
        key = normalize_surface(span.surface)
        if key in seen:
            continue
        seen.add(key)
        candidates.append((span.id, span.surface))
    return DiagnosisShortlist(doc_id=doc.id, candidates=tuple(candidates), source=source)


# ---------------------------------------------------------------------------
# prompt construction


@dataclass(frozen=True)
class Shot:
    """One worked selection example for few-shot prompting."""

    note: str
    candidates: tuple[str, ...]
    motivation: str
    diagnosis: str


NOTE_MARKER = '"clinical note":'
CANDIDATES_MARKER = '"potential diagnosis":'


def _format_block(note: str, candidates: list[str] | tuple[str, ...]) -> str:
    listing = json.dumps(list(candidates), ensure_ascii=False)
    return f"{NOTE_MARKER}{note}\n{CANDIDATES_MARKER}\n{listing}\n"


def build_selection_prompt(doc: Document, shortlist: DiagnosisShortlist,
                           shots: tuple[Shot, ...] = ()) -> str:
    """System prompt, then each worked example, then the target note block."""
    parts = [SELECTION_SYSTEM_PROMPT, "\n"]
    for shot in shots:
        parts.append(_format_block(shot.note, shot.candidates))
        answer = {"motivation": shot.motivation, "diagnosis": shot.diagnosis}
        parts.append(json.dumps(answer, ensure_ascii=False) + "\n")
    parts.append(_format_block(doc.text, shortlist.surfaces()))
    return "".join(parts)


def parse_selection_prompt(prompt: str) -> dict:
    """Split a built prompt back into its sections (round-trip check)."""
    chunks = prompt.split(NOTE_MARKER)
    system = chunks[0].rstrip("\n")
    blocks = []
    for chunk in chunks[1:]:
        note, _, rest = chunk.partition(CANDIDATES_MARKER)
        rest = rest.lstrip("\n")
        lines = rest.split("\n")
        candidates = json.loads(lines[0])
        answer_line = lines[1] if len(lines) > 1 and lines[1].strip() else None
        blocks.append({
            "note": note.rstrip("\n"),
            "candidates": candidates,
            "answer": json.loads(answer_line) if answer_line else None,
        })
    return {"system_prompt": system, "shots": blocks[:-1], "target": blocks[-1]}


# ---------------------------------------------------------------------------
# selector backends


@dataclass(frozen=True)
class SelectionRequest:
    system_prompt: str
    shots: tuple[Shot, ...]
    note: str
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class SelectionResponse:
    motivation: str
    diagnosis: str


class SelectorClient:
    """Returns a SelectionResponse, or None when the backend answer does not
    parse into the required {motivation, diagnosis} object (the caller owns
    the retry/fallback policy).  Transport failures raise SelectorUnavailable.
    """

    name = "selector"

    def select(self, request: SelectionRequest) -> SelectionResponse | None:
        raise NotImplementedError


class DeterministicSelector(SelectorClient):
    """Offline stub: picks the first shortlist candidate."""

    name = "stub-first-candidate"

    def select(self, request: SelectionRequest) -> SelectionResponse | None:
        if not request.candidates:
            return SelectionResponse("empty shortlist", NO_DIAGNOSIS)
        return SelectionResponse("first shortlist candidate", request.candidates[0])


class HttpSelector(SelectorClient):
    def __init__(self, url: str, model: str, api_key: str | None = None,
                 cache: RequestCache | None = None):
        self._chat = ChatCompletionClient(url, model, api_key=api_key, cache=cache)
        self.name = f"http:{model}"

    def select(self, request: SelectionRequest) -> SelectionResponse | None:
        user_prompt = ""
        for shot in request.shots:
            user_prompt += _format_block(shot.note, shot.candidates)
            user_prompt += json.dumps(
                {"motivation": shot.motivation, "diagnosis": shot.diagnosis}, ensure_ascii=False
            ) + "\n"
        user_prompt += _format_block(request.note, request.candidates)
        content = self._chat.complete(request.system_prompt, user_prompt, SelectorUnavailable)
        if NO_DIAGNOSIS in content.lower() and "{" not in content:
            return SelectionResponse("", NO_DIAGNOSIS)
        obj = extract_json_object(content)
        if obj is None or "diagnosis" not in obj:
            return None
        return SelectionResponse(str(obj.get("motivation", "")), str(obj["diagnosis"]).strip())


# ---------------------------------------------------------------------------
# selection


def _fallback_result(doc: Document, shortlist: DiagnosisShortlist, reason: str) -> DiagnosisResult:
    if shortlist.source is ShortlistSource.PATTERN and shortlist.candidates:
        return DiagnosisResult(doc.id, shortlist.candidates[0][1], reason, "fallback-pattern-first")
    return DiagnosisResult(doc.id, None, reason, "fallback-none")


def select_diagnosis(doc: Document, shortlist: DiagnosisShortlist, selector: SelectorClient,
                     shots: tuple[Shot, ...] = (), fallback_on_error: bool = False) -> DiagnosisResult:
    """Pick a diagnosis from the shortlist via the selector backend.

    The selector answer must be one of the shortlist surfaces verbatim or
    "no diagnosis"; anything else is rejected, retried once, and then the
    deterministic rule applies (first pattern candidate, else none).
    """
    if shortlist.doc_id != doc.id:
        raise ValueError(f"shortlist for {shortlist.doc_id!r} does not belong to doc {doc.id!r}")
    if not shortlist.candidates:
        return DiagnosisResult(doc.id, None, "empty shortlist", selector.name)

    request = SelectionRequest(
        system_prompt=SELECTION_SYSTEM_PROMPT,
        shots=shots,
        note=doc.text,
        candidates=tuple(shortlist.surfaces()),
    )
    surfaces = set(shortlist.surfaces())
    for _ in range(2):  # first try + one retry
        try:
            response = selector.select(request)
        except SelectorUnavailable:
            if fallback_on_error:
                return _fallback_result(doc, shortlist, "selector unavailable")
            raise
        if response is None:
            continue
        answer = response.diagnosis.strip()
        if answer.lower().rstrip(".") == NO_DIAGNOSIS:
            return DiagnosisResult(doc.id, None, response.motivation, selector.name)
        if answer in surfaces:
            return DiagnosisResult(doc.id, answer, response.motivation, selector.name)
    return _fallback_result(doc, shortlist, "selector answer not in shortlist")


def select_all(corpus: Corpus, shortlists: dict[str, DiagnosisShortlist],
               selector: SelectorClient, shots: tuple[Shot, ...] = (),
               fallback_on_error: bool = False, max_in_flight: int = 4) -> dict[str, DiagnosisResult]:
    """Run selection over a corpus; results merge deterministically by doc id."""

    def run(doc: Document) -> DiagnosisResult:
        return select_diagnosis(doc, shortlists[doc.id], selector, shots, fallback_on_error)

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(run, corpus.documents))
    return {r.doc_id: r for r in sorted(results, key=lambda r: r.doc_id)}
