import pytest

from casecrf.corpus import (
    AttributeSet,
    Document,
    Modality,
    Permanence,
    Polarity,
    Relation,
    RelationType,
    SpanCategory,
)
from casecrf.crfgen import (
    NOT_AVAILABLE,
    CrfItem,
    Section,
    apply_history_split_filter,
    fill_crf,
    filled_from_json,
    filled_to_json,
    generate_diagnosis_items,
    generate_doc_items,
    generate_exam_items,
    generate_group_artifacts,
    generate_history_items,
    history_answer_inventory,
    join_values,
    merge_group_items,
    normalize_items,
    normalize_label,
    render_history_value,
    split_value,
    template_from_json,
    template_to_json,
)
from casecrf.diagnosis import DiagnosisResult

from .conftest import doc_a, doc_b, doc_c, make_span

POS, NEG = Polarity.POSITIVE, Polarity.NEGATIVE
ACT, HYP, HED, MMOD = Modality.ACTUAL, Modality.HYPOTHETICAL, Modality.HEDGED, Modality.MISSING
PERM, FIN, MPERM = Permanence.PERMANENT, Permanence.FINITE, Permanence.MISSING

# every cell composition, hand-derived from the attribute/value word tables
EXPECTED_RENDERINGS = {
    (POS, ACT, PERM): "Certainly yes, chronic",
    (POS, ACT, FIN): "Certainly yes, certainly not chronic",
    (POS, ACT, MPERM): "Certainly yes, possibly chronic",
    (POS, HYP, PERM): "Possibly yes, chronic",
    (POS, HYP, FIN): "Possibly yes, certainly not chronic",
    (POS, HYP, MPERM): "Possibly yes, possibly chronic",
    (POS, HED, PERM): "Probably yes, chronic",
    (POS, HED, FIN): "Probably yes, certainly not chronic",
    (POS, HED, MPERM): "Probably yes, possibly chronic",
    (POS, MMOD, PERM): "Yes, chronic",
    (POS, MMOD, FIN): "Yes, certainly not chronic",
    (POS, MMOD, MPERM): "Yes, possibly chronic",
    (NEG, ACT, PERM): "Certainly no, chronic",
    (NEG, ACT, FIN): "Certainly no, certainly not chronic",
    (NEG, ACT, MPERM): "Certainly no, possibly chronic",
    (NEG, HYP, PERM): "Possibly no, chronic",
    (NEG, HYP, FIN): "Possibly no, certainly not chronic",
    (NEG, HYP, MPERM): "Possibly no, possibly chronic",
    (NEG, HED, PERM): "Probably no, chronic",
    (NEG, HED, FIN): "Probably no, certainly not chronic",
    (NEG, HED, MPERM): "Probably no, possibly chronic",
    (NEG, MMOD, PERM): "No, chronic",
    (NEG, MMOD, FIN): "No, certainly not chronic",
    (NEG, MMOD, MPERM): "No, possibly chronic",
}


@pytest.mark.parametrize("combo,expected", sorted(EXPECTED_RENDERINGS.items(), key=str))
def test_render_history_value_every_cell(combo, expected):
    polarity, modality, permanence = combo
    assert render_history_value(AttributeSet(polarity, modality, permanence)) == expected


def test_render_spec_worked_examples():
    assert render_history_value(AttributeSet(POS, HED, FIN)) == "Probably yes, certainly not chronic"
    assert render_history_value(AttributeSet(NEG, MMOD, FIN)) == "No, certainly not chronic"
    assert render_history_value(AttributeSet(POS, MMOD, MPERM)) == "Yes, possibly chronic"
    assert render_history_value(AttributeSet(NEG, ACT, PERM)) == "Certainly no, chronic"
    assert render_history_value(AttributeSet(POS, ACT, PERM)) == "Certainly yes, chronic"


def test_unannotated_polarity_reads_as_positive():
    assert render_history_value(AttributeSet()) == "Yes, possibly chronic"


def test_inventory_has_24_distinct_values():
    inventory = history_answer_inventory()
    assert len(inventory) == 24
    assert set(inventory) == set(EXPECTED_RENDERINGS.values())


def test_join_and_split_round_trip():
    value = join_values(["10", "12"])
    assert value == "10 [\\MULTI_ANSWER] 12"
    assert split_value(value) == ["10", "12"]


def test_normalize_label():
    assert normalize_label("  Lower   Limb. ") == "lower limb"
    assert normalize_label("haemoglobin") == "haemoglobin"


# ---------------------------------------------------------------------------
# exam items


def test_single_rml_pertaining_to_event():
    items = generate_exam_items(doc_a())
    assert [(item.label, value) for item, value in items] == [("haemoglobin", "38g/dl")]


def test_rml_without_relation_is_ignored():
    text = "Weight 70kg noted."
    doc = Document(
        id="d", language="en", text=text,
        spans=(make_span(text, "s1", SpanCategory.RML, "70kg"),),
    )
    assert generate_exam_items(doc) == []


def test_target_with_two_rmls_joins_in_document_order():
    text = "Glucose was 10 then later 12."
    doc = Document(
        id="d", language="en", text=text,
        spans=(
            make_span(text, "ev", SpanCategory.EVENT, "Glucose"),
            make_span(text, "r1", SpanCategory.RML, "10"),
            make_span(text, "r2", SpanCategory.RML, "12"),
        ),
        relations=(
            Relation("x2", RelationType.PERTAINS_TO, "r2", "ev"),
            Relation("x1", RelationType.PERTAINS_TO, "r1", "ev"),
        ),
    )
    items = generate_exam_items(doc)
    assert len(items) == 1
    assert items[0][1] == "10 [\\MULTI_ANSWER] 12"


def test_one_rml_pertaining_to_two_targets_yields_two_items():
    text = "Blood pressure and heart rate were 120."
    doc = Document(
        id="d", language="en", text=text,
        spans=(
            make_span(text, "e1", SpanCategory.EVENT, "Blood pressure"),
            make_span(text, "e2", SpanCategory.EVENT, "heart rate"),
            make_span(text, "r1", SpanCategory.RML, "120"),
        ),
        relations=(
            Relation("p1", RelationType.PERTAINS_TO, "r1", "e1"),
            Relation("p2", RelationType.PERTAINS_TO, "r1", "e2"),
        ),
    )
    items = generate_exam_items(doc)
    assert [(i.label, v) for i, v in items] == [("blood pressure", "120"), ("heart rate", "120")]


# ---------------------------------------------------------------------------
# history items


def test_history_items_from_entities():
    items = generate_history_items(doc_a())
    as_dict = {item.label: value for item, value in items}
    assert as_dict == {
        "sepsis": "Certainly yes, possibly chronic",
        "diabetes mellitus": "Yes, chronic",
    }


def test_history_empty_without_entities():
    doc = Document(id="d", language="en", text="no annotations", spans=())
    assert generate_history_items(doc) == []


def test_history_duplicate_surfaces_first_occurrence_wins():
    text = "fever now; fever before"
    doc = Document(
        id="d", language="en", text=text,
        spans=(
            make_span(text, "s1", SpanCategory.CLINICAL_ENTITY, "fever",
                      AttributeSet(POS, ACT, MPERM), occurrence=1),
            make_span(text, "s2", SpanCategory.CLINICAL_ENTITY, "fever",
                      AttributeSet(NEG, MMOD, FIN), occurrence=2),
        ),
    )
    items = generate_history_items(doc)
    assert [(i.label, v) for i, v in items] == [("fever", "Certainly yes, possibly chronic")]


# ---------------------------------------------------------------------------
# diagnosis items


def _diag(doc_id, value):
    return DiagnosisResult(doc_id, value, "", "stub")


def test_diagnosis_items_set_semantics():
    docs = [doc_a(), doc_b(), doc_c()]
    diagnoses = {"docA": _diag("docA", "sepsis"), "docB": _diag("docB", "sepsis"),
                 "docC": _diag("docC", "JMML")}
    items = generate_diagnosis_items(docs, diagnoses)
    assert [i.label for i in items] == ["sepsis", "jmml"]


def test_diagnosis_items_empty_when_no_diagnoses():
    docs = [doc_c()]
    assert generate_diagnosis_items(docs, {"docC": _diag("docC", None)}) == []


def test_diagnosis_fill_yes_only_for_own_diagnosis():
    docs = [doc_a(), doc_b()]
    diagnoses = {"docA": _diag("docA", "sepsis"), "docB": _diag("docB", "pneumonia")}
    per_doc = {d.id: generate_doc_items(d, diagnoses) for d in docs}
    template = merge_group_items(per_doc, group_id=0)
    filled_a = fill_crf(template, docs[0], per_doc["docA"])
    assert filled_a.values["diagnosis:sepsis"] == "yes"
    assert filled_a.values["diagnosis:pneumonia"] == NOT_AVAILABLE


# ---------------------------------------------------------------------------
# merging and normalization


def _items(section, *labels):
    return [CrfItem.make(section, label) for label in labels]


def test_merge_single_document_is_identity():
    per_doc = {"docA": generate_doc_items(doc_a(), {"docA": _diag("docA", "sepsis")})}
    template = merge_group_items(per_doc, group_id=0)
    labels = {(i.section, i.label) for i in template.items}
    assert labels == {
        (Section.DIAGNOSIS, "sepsis"),
        (Section.HISTORY, "sepsis"),
        (Section.HISTORY, "diabetes mellitus"),
        (Section.EXAMS, "haemoglobin"),
    }


def test_merge_disjoint_item_sets_union():
    per_doc = {
        "d1": [(item, "v") for item in _items(Section.HISTORY, "a", "b", "c")],
        "d2": [(item, "v") for item in _items(Section.HISTORY, "d", "e", "f", "g")],
    }
    template = merge_group_items(per_doc, group_id=1)
    assert len(template.items) == 7


def test_merge_shared_item_records_both_docs_in_provenance():
    per_doc = {
        "d1": [(CrfItem.make(Section.EXAMS, "haemoglobin"), "38g/dl")],
        "d2": [(CrfItem.make(Section.EXAMS, "Haemoglobin"), "40g/dl")],
    }
    template = merge_group_items(per_doc, group_id=0)
    assert len(template.items) == 1
    assert template.provenance[template.items[0].id] == ["d1", "d2"]


def test_normalize_items_collapses_mapped_labels():
    items = _items(Section.HISTORY, "leg", "lower limb")
    merged = normalize_items(items, {"leg": "lower limb"})
    assert len(merged) == 1
    assert merged[0].label == "lower limb"
    assert merged[0].aliases == frozenset({"leg", "lower limb"})


def test_normalize_items_empty_map_only_case_folds():
    items = [CrfItem.make(Section.HISTORY, "Fever"), CrfItem.make(Section.HISTORY, "fever  ")]
    merged = normalize_items(items)
    assert len(merged) == 1
    assert merged[0].label == "fever"


def test_normalize_three_way_transitive_collapse():
    items = _items(Section.HISTORY, "leg", "lower extremity", "lower limb")
    merged = normalize_items(items, {"leg": "lower extremity", "lower extremity": "lower limb"})
    assert len(merged) == 1
    assert merged[0].aliases == frozenset({"leg", "lower extremity", "lower limb"})


def test_normalize_items_is_idempotent():
    items = _items(Section.HISTORY, "leg", "lower limb", "fever")
    synonym_map = {"leg": "lower limb"}
    once = normalize_items(items, synonym_map)
    twice = normalize_items(once, synonym_map)
    assert once == twice


def test_sections_do_not_collide():
    items = [CrfItem.make(Section.HISTORY, "fever"), CrfItem.make(Section.EXAMS, "fever")]
    assert len(normalize_items(items)) == 2


# ---------------------------------------------------------------------------
# filling


def test_fill_is_total_with_not_available_default():
    per_doc = {
        "d1": [(item, "v1") for item in _items(Section.HISTORY, *[f"i{k}" for k in range(5)])],
        "d2": [(item, "v2") for item in _items(Section.HISTORY, *[f"j{k}" for k in range(45)])],
    }
    template = merge_group_items(per_doc, group_id=0)
    doc = Document(id="d1", language="en", text="", spans=())
    filled = fill_crf(template, doc, per_doc["d1"])
    assert set(filled.values) == template.item_ids()
    unfilled = [v for v in filled.values.values() if v == NOT_AVAILABLE]
    assert len(unfilled) == 45


def test_fill_matches_by_alias():
    item = CrfItem.make(Section.HISTORY, "lower limb", aliases={"leg"})
    template = merge_group_items({"d1": [(item, "Yes, chronic")]}, group_id=0)
    doc = Document(id="d2", language="en", text="", spans=())
    per_doc = [(CrfItem.make(Section.HISTORY, "leg"), "No, possibly chronic")]
    filled = fill_crf(template, doc, per_doc)
    assert filled.values[template.items[0].id] == "No, possibly chronic"


# ---------------------------------------------------------------------------
# split filter


def _mini_group():
    docs = [doc_a(), doc_b()]  # A train, B test
    diagnoses = {"docA": _diag("docA", "sepsis"), "docB": _diag("docB", "sepsis")}
    per_doc = {d.id: generate_doc_items(d, diagnoses) for d in docs}
    template = merge_group_items(per_doc, group_id=0)
    filled = [fill_crf(template, d, per_doc[d.id]) for d in docs]
    return docs, {0: template}, filled


def test_history_item_filled_only_by_test_doc_is_removed():
    docs, templates, filled = _mini_group()
    splits = {d.id: d.split for d in docs}
    assert any(i.label == "hypotension" for i in templates[0].items)
    new_templates, new_filled = apply_history_split_filter(templates, filled, splits)
    assert all(i.label != "hypotension" for i in new_templates[0].items)
    assert all("history:hypotension" not in f.values for f in new_filled)


def test_history_item_filled_in_both_splits_is_kept():
    docs, templates, filled = _mini_group()
    splits = {d.id: d.split for d in docs}
    new_templates, _ = apply_history_split_filter(templates, filled, splits)
    labels = {i.label for i in new_templates[0].section_items(Section.HISTORY)}
    assert {"sepsis", "diabetes mellitus"} <= labels


def test_filter_never_touches_diagnosis_or_exam_items():
    docs, templates, filled = _mini_group()
    # creatinine is measured only in docB (test split) but exams are exempt
    splits = {d.id: d.split for d in docs}
    new_templates, _ = apply_history_split_filter(templates, filled, splits)
    exam_labels = {i.label for i in new_templates[0].section_items(Section.EXAMS)}
    assert "creatinine" in exam_labels
    diag_labels = {i.label for i in new_templates[0].section_items(Section.DIAGNOSIS)}
    assert "sepsis" in diag_labels


# ---------------------------------------------------------------------------
# serialization and end-to-end generation


def test_template_and_filled_round_trip():
    _, templates, filled = _mini_group()
    template = templates[0]
    assert template_from_json(template_to_json(template)) == template
    assert filled_from_json(filled_to_json(filled[0])) == filled[0]


def test_generate_group_artifacts_totality(toy_corpus):
    diagnoses = {
        "docA": _diag("docA", "sepsis"),
        "docB": _diag("docB", "sepsis"),
        "docC": _diag("docC", "ankle fracture"),
    }
    assignment = {"docA": 0, "docB": 0, "docC": 1}
    templates, filled = generate_group_artifacts(toy_corpus, assignment, diagnoses)
    assert set(templates) == {0, 1}
    assert {f.doc_id for f in filled} == {"docA", "docB", "docC"}
    for f in filled:
        assert set(f.values) == templates[f.group_id].item_ids()
    inventory = set(history_answer_inventory())
    for f in filled:
        for item in templates[f.group_id].section_items(Section.HISTORY):
            value = f.values[item.id]
            assert value == NOT_AVAILABLE or value in inventory
