import pytest

from casecrf.clients import SelectorUnavailable
from casecrf.corpus import Document, SpanCategory
from casecrf.diagnosis import (
    NO_DIAGNOSIS,
    SELECTION_SYSTEM_PROMPT,
    DeterministicSelector,
    DiagnosisResult,
    SelectionResponse,
    SelectorClient,
    Shot,
    ShortlistConfig,
    ShortlistSource,
    build_selection_prompt,
    build_shortlist,
    parse_selection_prompt,
    select_all,
    select_diagnosis,
)

from .conftest import doc_a, doc_c, make_span


def entity_doc(text: str, surfaces: list[str]) -> Document:
    spans = tuple(
        make_span(text, f"e{i}", SpanCategory.CLINICAL_ENTITY, surface)
        for i, surface in enumerate(surfaces)
    )
    return Document(id="d", language="en", text=text, spans=spans)


def test_prefix_rule_hand_application():
    doc = entity_doc("final diagnosis was metastasis", ["metastasis"])
    shortlist = build_shortlist(doc)
    assert shortlist.source is ShortlistSource.PATTERN
    assert shortlist.surfaces() == ["metastasis"]


def test_no_keyword_falls_back_to_all_entities():
    doc = entity_doc("the patient reported nausea and later sepsis", ["nausea", "sepsis"])
    shortlist = build_shortlist(doc)
    assert shortlist.source is ShortlistSource.ALL_ENTITIES
    assert shortlist.surfaces() == ["nausea", "sepsis"]


def test_zero_entities_give_empty_candidates():
    doc = Document(id="d", language="en", text="diagnosis pending", spans=())
    shortlist = build_shortlist(doc)
    assert shortlist.candidates == ()


def test_entity_outside_window_is_not_a_pattern_hit():
    filler = " ".join(["word"] * 15)
    text = f"diagnosis {filler} sepsis"
    doc = entity_doc(text, ["sepsis"])
    shortlist = build_shortlist(doc, ShortlistConfig(follow_window=10))
    assert shortlist.source is ShortlistSource.ALL_ENTITIES
    wide = build_shortlist(doc, ShortlistConfig(follow_window=20))
    assert wide.source is ShortlistSource.PATTERN


def test_keyword_prefix_matches_inflected_forms():
    doc = entity_doc("the patient was diagnosed with sepsis", ["sepsis"])
    assert build_shortlist(doc).source is ShortlistSource.PATTERN


def test_candidates_deduplicated_by_normalized_surface():
    text = "diagnosis: sepsis, then Sepsis again"
    doc = Document(
        id="d", language="en", text=text,
        spans=(
            make_span(text, "e0", SpanCategory.CLINICAL_ENTITY, "sepsis"),
            make_span(text, "e1", SpanCategory.CLINICAL_ENTITY, "Sepsis"),
        ),
    )
    assert build_shortlist(doc).surfaces() == ["sepsis"]


def test_pattern_precedence_excludes_other_entities():
    # "nausea" sits before the keyword, so only "sepsis" can be a pattern hit
    text = "nausea was reported; diagnosis of sepsis was made"
    doc = entity_doc(text, ["nausea", "sepsis"])
    shortlist = build_shortlist(doc)
    assert shortlist.source is ShortlistSource.PATTERN
    assert shortlist.surfaces() == ["sepsis"]


# ---------------------------------------------------------------------------
# selection


def test_empty_shortlist_yields_no_diagnosis():
    doc = Document(id="d", language="en", text="nothing here", spans=())
    shortlist = build_shortlist(doc)
    result = select_diagnosis(doc, shortlist, DeterministicSelector())
    assert result.diagnosis is None


def test_single_candidate_with_deterministic_selector():
    doc = entity_doc("final diagnosis was metastasis", ["metastasis"])
    shortlist = build_shortlist(doc)
    result = select_diagnosis(doc, shortlist, DeterministicSelector())
    assert result.diagnosis == "metastasis"


class OffListSelector(SelectorClient):
    name = "off-list"

    def __init__(self):
        self.calls = 0

    def select(self, request):
        self.calls += 1
        return SelectionResponse("made up", "sarcoidosis")


def test_out_of_shortlist_answer_retried_then_pattern_fallback():
    doc = entity_doc("final diagnosis was metastasis", ["metastasis"])
    shortlist = build_shortlist(doc)
    selector = OffListSelector()
    result = select_diagnosis(doc, shortlist, selector)
    assert selector.calls == 2
    assert result.diagnosis == "metastasis"
    assert result.selector == "fallback-pattern-first"


def test_out_of_shortlist_answer_without_pattern_falls_back_to_none():
    doc = entity_doc("patient has nausea", ["nausea"])
    shortlist = build_shortlist(doc)
    assert shortlist.source is ShortlistSource.ALL_ENTITIES
    result = select_diagnosis(doc, shortlist, OffListSelector())
    assert result.diagnosis is None


class BrokenSelector(SelectorClient):
    name = "broken"

    def select(self, request):
        raise SelectorUnavailable("backend down")


def test_selector_unavailable_raises_without_fallback():
    doc = entity_doc("final diagnosis was metastasis", ["metastasis"])
    shortlist = build_shortlist(doc)
    with pytest.raises(SelectorUnavailable):
        select_diagnosis(doc, shortlist, BrokenSelector())


def test_selector_unavailable_with_fallback_configured():
    doc = entity_doc("final diagnosis was metastasis", ["metastasis"])
    shortlist = build_shortlist(doc)
    result = select_diagnosis(doc, shortlist, BrokenSelector(), fallback_on_error=True)
    assert result.diagnosis == "metastasis"


def test_no_diagnosis_answer_accepted_verbatim():
    class Refuser(SelectorClient):
        name = "refuser"

        def select(self, request):
            return SelectionResponse("nothing conclusive", NO_DIAGNOSIS)

    doc = entity_doc("final diagnosis was metastasis", ["metastasis"])
    result = select_diagnosis(doc, build_shortlist(doc), Refuser())
    assert result.diagnosis is None
    assert result.motivation == "nothing conclusive"


def test_containment_and_determinism_over_toy_corpus(toy_corpus):
    shortlists = {d.id: build_shortlist(d) for d in toy_corpus}
    selector = DeterministicSelector()
    first = select_all(toy_corpus, shortlists, selector)
    second = select_all(toy_corpus, shortlists, selector)
    assert first == second
    for doc_id, result in first.items():
        if result.diagnosis is not None:
            assert result.diagnosis in shortlists[doc_id].surfaces()


# ---------------------------------------------------------------------------
# prompt construction


def _shots(n: int) -> tuple[Shot, ...]:
    return tuple(
        Shot(note=f"note {i}", candidates=(f"cand{i}a", f"cand{i}b"),
             motivation=f"reason {i}", diagnosis=f"cand{i}a")
        for i in range(n)
    )


def test_zero_shot_prompt_is_system_plus_target_block():
    doc = Document(id="d", language="en", text="", spans=())
    prompt = build_selection_prompt(doc, build_shortlist(doc))
    assert prompt.startswith(SELECTION_SYSTEM_PROMPT)
    parsed = parse_selection_prompt(prompt)
    assert parsed["system_prompt"] == SELECTION_SYSTEM_PROMPT
    assert parsed["shots"] == []
    assert parsed["target"]["candidates"] == []


def test_four_shot_prompt_has_four_example_blocks():
    doc = doc_a()
    prompt = build_selection_prompt(doc, build_shortlist(doc), shots=_shots(4))
    parsed = parse_selection_prompt(prompt)
    assert len(parsed["shots"]) == 4
    for i, block in enumerate(parsed["shots"]):
        assert block["answer"] == {"motivation": f"reason {i}", "diagnosis": f"cand{i}a"}
    assert parsed["target"]["note"] == doc.text


def test_candidates_appear_verbatim():
    doc = doc_c()
    shortlist = build_shortlist(doc)
    prompt = build_selection_prompt(doc, shortlist)
    for surface in shortlist.surfaces():
        assert surface in prompt
    assert '"potential diagnosis":' in prompt


def test_system_prompt_key_clauses_present():
    assert "always contained in" in SELECTION_SYSTEM_PROMPT
    assert "no diagnosis" in SELECTION_SYSTEM_PROMPT
    assert "CAUTION" in SELECTION_SYSTEM_PROMPT


def test_result_serialization_round_trip():
    result = DiagnosisResult("docA", "sepsis", "clear statement", "stub")
    assert DiagnosisResult.from_json(result.to_json()) == result
