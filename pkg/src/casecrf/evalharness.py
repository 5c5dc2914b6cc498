"""Slot-filling evaluation: baseline filler, strict metrics, eval prompts.

Matching is strict after light normalization (surrounding whitespace and
trailing punctuation dropped; anything starting with "not available"
canonicalizes to the bare sentinel).  Positivity is task-specific:
diagnosis items are positive only on "yes", history and exam items are
positive whenever a value is present.  Answers that violate a task's
closed answer space always count as false positives.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import Document
from .crfgen import (
    MULTI_ANSWER_SEPARATOR,
    NOT_AVAILABLE,
    CrfItem,
    CrfTemplate,
    FilledCrf,
    Section,
    history_answer_inventory,
    split_value,
)


class PredictionSource(Enum):
    BASELINE = "BASELINE"
    EXTERNAL = "EXTERNAL"


class OutcomeKind(Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"
    TN = "TN"


class UnknownTask(Exception):
    pass


class DuplicatePrediction(Exception):
    pass


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    item_id: str
    raw_answer: str
    source: PredictionSource = PredictionSource.EXTERNAL


class PredictionSet:
    """Predictions keyed by (doc id, item id); duplicates are rejected."""

    def __init__(self):
        self._by_key: dict[tuple[str, str], Prediction] = {}

    def add(self, prediction: Prediction) -> None:
        key = (prediction.doc_id, prediction.item_id)
        if key in self._by_key:
            raise DuplicatePrediction(f"duplicate prediction for {key}")
        self._by_key[key] = prediction

    def get(self, doc_id: str, item_id: str) -> Prediction | None:
        return self._by_key.get((doc_id, item_id))

    def __len__(self) -> int:
        return len(self._by_key)

    def __iter__(self):
        return iter(self._by_key.values())


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    reason: str


@dataclass
class TaskScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    pairs: int


@dataclass
class ScoreReport:
    tasks: dict[Section, TaskScore]
    pooled_micro_f1: float
    mean_task_f1: float
    item_weighted_f1: float
    mode: str
    warnings: list[str] = field(default_factory=list)
    config_hash: str | None = None


# ---------------------------------------------------------------------------
# normalization


def normalize_answer(raw: str) -> str:
    """Strip surrounding whitespace and trailing punctuation; collapse any
    answer that starts with "not available" to the bare sentinel."""
    text = raw.strip()
    if text.lower().startswith(NOT_AVAILABLE):
        return NOT_AVAILABLE
    while text and unicodedata.category(text[-1]).startswith("P"):
        text = text[:-1].rstrip()
    return text


def _is_positive(value: str, task: Section) -> bool:
    if task is Section.DIAGNOSIS:
        return value.lower() == "yes"
    if task in (Section.HISTORY, Section.EXAMS):
        return value != NOT_AVAILABLE
    raise UnknownTask(str(task))


def _elements(value: str, case_sensitive: bool) -> frozenset[str]:
    parts = split_value(value) if MULTI_ANSWER_SEPARATOR in value else [value]
    if not case_sensitive:
        parts = [p.lower() for p in parts]
    return frozenset(parts)


def default_answer_space(task: Section, simplified: bool = False) -> frozenset[str] | None:
    """Closed answer spaces used for format-violation detection."""
    if task is Section.DIAGNOSIS:
        return frozenset({"yes", "no", NOT_AVAILABLE})
    if task is Section.HISTORY:
        if simplified:
            return frozenset({"yes", "no", NOT_AVAILABLE})
        return frozenset(history_answer_inventory()) | {NOT_AVAILABLE}
    if task is Section.EXAMS:
        return None  # free-form results, nothing to violate
    raise UnknownTask(str(task))


def pair_confusion(gold: str, pred: str, task: Section,
                   answer_space: frozenset[str] | None = None,
                   case_sensitive: bool = True) -> dict[OutcomeKind, int]:
    """Confusion-count contribution of one normalized (gold, pred) pair.

    A positive-gold mismatch contributes both the FP for the wrong answer
    and the FN for the missed gold, which is why this returns counts rather
    than a single kind.
    """
    counts = {kind: 0 for kind in OutcomeKind}
    gold_pos = _is_positive(gold, task)
    pred_pos = _is_positive(pred, task)

    if answer_space is not None:
        space = answer_space if case_sensitive else frozenset(v.lower() for v in answer_space)
        check = pred if case_sensitive else pred.lower()
        if check not in space:
            counts[OutcomeKind.FP] += 1
            if gold_pos:
                counts[OutcomeKind.FN] += 1
            return counts

    if not gold_pos and not pred_pos:
        counts[OutcomeKind.TN] += 1
    elif gold_pos and not pred_pos:
        counts[OutcomeKind.FN] += 1
    elif not gold_pos and pred_pos:
        counts[OutcomeKind.FP] += 1
    else:
        gold_parts = _elements(gold, case_sensitive)
        pred_parts = _elements(pred, case_sensitive)
        if gold_parts == pred_parts:
            counts[OutcomeKind.TP] += 1
        elif pred_parts > gold_parts:
            counts[OutcomeKind.FP] += 1
        elif pred_parts < gold_parts:
            counts[OutcomeKind.FN] += 1
        else:
            counts[OutcomeKind.FP] += 1
            counts[OutcomeKind.FN] += 1
    return counts


def classify_outcome(gold: str, pred: str, task: Section,
                     answer_space: frozenset[str] | None = None,
                     case_sensitive: bool = True) -> Outcome:
    """Single primary outcome for a pair (the FP side wins on a mismatch)."""
    counts = pair_confusion(gold, pred, task, answer_space, case_sensitive)
    if counts[OutcomeKind.TP]:
        return Outcome(OutcomeKind.TP, "exact match")
    if counts[OutcomeKind.FP] and counts[OutcomeKind.FN]:
        return Outcome(OutcomeKind.FP, "positive answer does not match positive gold")
    if counts[OutcomeKind.FP]:
        return Outcome(OutcomeKind.FP, "spurious or over-predicted answer")
    if counts[OutcomeKind.FN]:
        return Outcome(OutcomeKind.FN, "gold value missed or under-predicted")
    return Outcome(OutcomeKind.TN, "both sides unfilled")


# ---------------------------------------------------------------------------
# history simplification (positive values group as "yes", negative as "no")

_WORD_RE = re.compile(r"\w+")


def simplify_history_value(value: str) -> str:
    if value == NOT_AVAILABLE:
        return value
    tokens = {t.lower() for t in _WORD_RE.findall(value)}
    if "yes" in tokens:
        return "yes"
    if "no" in tokens:
        return "no"
    return value


# ---------------------------------------------------------------------------
# scoring


def _rates(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    recall = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def score(gold: list[FilledCrf], templates: dict[int, CrfTemplate], preds: PredictionSet,
          mode: str = "strict_history",
          history_answer_space: frozenset[str] | None = None,
          case_sensitive: bool = True) -> ScoreReport:
    """Task-level precision/recall/F1 plus three aggregates.

    Every gold (doc, item) pair is scored once; a missing prediction counts
    as "not available" and is logged.  ``mode`` is ``strict_history`` or
    ``simplified_history``; simplification only ever touches history pairs.
    """
    if mode not in ("strict_history", "simplified_history"):
        raise ValueError(f"unknown mode {mode!r}")
    simplified = mode == "simplified_history"

    warnings: list[str] = []
    tallies = {task: {kind: 0 for kind in OutcomeKind} for task in Section}
    pair_counts = {task: 0 for task in Section}

    spaces = {
        Section.DIAGNOSIS: default_answer_space(Section.DIAGNOSIS),
        Section.HISTORY: history_answer_space
        if history_answer_space is not None and not simplified
        else default_answer_space(Section.HISTORY, simplified=simplified),
        Section.EXAMS: None,
    }

    missing = 0
    for filled in sorted(gold, key=lambda f: f.doc_id):
        template = templates.get(filled.group_id)
        if template is None:
            raise KeyError(f"no template for group {filled.group_id}")
        sections = {item.id: item.section for item in template.items}
        for item_id in sorted(filled.values):
            task = sections.get(item_id)
            if task is None:
                warnings.append(f"gold value for unknown item {item_id!r} skipped")
                continue
            gold_value = normalize_answer(filled.values[item_id])
            prediction = preds.get(filled.doc_id, item_id)
            if prediction is None:
                missing += 1
                pred_value = NOT_AVAILABLE
            else:
                pred_value = normalize_answer(prediction.raw_answer)
            if simplified and task is Section.HISTORY:
                gold_value = simplify_history_value(gold_value)
                pred_value = simplify_history_value(pred_value)
            contribution = pair_confusion(gold_value, pred_value, task,
                                          spaces[task], case_sensitive)
            pair_counts[task] += 1
            for kind, n in contribution.items():
                tallies[task][kind] += n
    if missing:
        warnings.append(f"{missing} gold pair(s) had no prediction; scored as {NOT_AVAILABLE!r}")

    tasks: dict[Section, TaskScore] = {}
    for task in Section:
        t = tallies[task]
        precision, recall, f1 = _rates(t[OutcomeKind.TP], t[OutcomeKind.FP], t[OutcomeKind.FN])
        tasks[task] = TaskScore(precision, recall, f1,
                                t[OutcomeKind.TP], t[OutcomeKind.FP],
                                t[OutcomeKind.FN], t[OutcomeKind.TN],
                                pair_counts[task])

    pooled_tp = sum(tallies[t][OutcomeKind.TP] for t in Section)
    pooled_fp = sum(tallies[t][OutcomeKind.FP] for t in Section)
    pooled_fn = sum(tallies[t][OutcomeKind.FN] for t in Section)
    _, _, pooled_micro_f1 = _rates(pooled_tp, pooled_fp, pooled_fn)

    scored_tasks = [t for t in Section if pair_counts[t] > 0]
    mean_task_f1 = (
        sum(tasks[t].f1 for t in scored_tasks) / len(scored_tasks) if scored_tasks else 0.0
    )
    total_pairs = sum(pair_counts[t] for t in scored_tasks)
    item_weighted_f1 = (
        sum(tasks[t].f1 * pair_counts[t] for t in scored_tasks) / total_pairs
        if total_pairs
        else 0.0
    )

    return ScoreReport(tasks=tasks, pooled_micro_f1=pooled_micro_f1,
                       mean_task_f1=mean_task_f1, item_weighted_f1=item_weighted_f1,
                       mode=mode, warnings=warnings)


# ---------------------------------------------------------------------------
# baseline filler


_NUMBER_WITH_UNITS_RE = re.compile(r"\d+(?:[.,]\d+)?\S*")
_NUMBER_BARE_RE = re.compile(r"\d+(?:[.,]\d+)?")


def _first_mention(haystack: str, needles: list[str]) -> tuple[int, int] | None:
    best: tuple[int, int] | None = None
    for needle in needles:
        if not needle:
            continue
        pos = haystack.find(needle)
        if pos >= 0 and (best is None or pos < best[0]):
            best = (pos, pos + len(needle))
    return best


def baseline_fill(doc: Document, template: CrfTemplate,
                  attach_units: bool = True) -> list[Prediction]:
    """Pattern-matching baseline over one document.

    Diagnosis and history items answer "yes" when the item (or an alias)
    occurs in the note, case-insensitively.  Exam items answer with the
    first numeric token after the first mention, extended through attached
    unit characters unless ``attach_units`` is off.
    """
    lowered = doc.text.lower()
    number_re = _NUMBER_WITH_UNITS_RE if attach_units else _NUMBER_BARE_RE
    predictions = []
    for item in template.items:
        needles = sorted(alias.lower() for alias in item.aliases | {item.label})
        mention = _first_mention(lowered, needles)
        if mention is None:
            answer = NOT_AVAILABLE
        elif item.section in (Section.DIAGNOSIS, Section.HISTORY):
            answer = "yes"
        else:
            match = number_re.search(doc.text, mention[1])
            answer = match.group(0) if match else NOT_AVAILABLE
        predictions.append(
            Prediction(doc_id=doc.id, item_id=item.id,
                       raw_answer=normalize_answer(answer),
                       source=PredictionSource.BASELINE)
        )
    return predictions


def baseline_fill_all(docs: list[Document], templates: dict[int, CrfTemplate],
                      assignment: dict[str, int | None],
                      attach_units: bool = True) -> PredictionSet:
    preds = PredictionSet()
    for doc in docs:
        group = assignment.get(doc.id)
        if group is None or group not in templates:
            continue
        for p in baseline_fill(doc, templates[group], attach_units=attach_units):
            preds.add(p)
    return preds


# ---------------------------------------------------------------------------
# prompt construction for external models


class MissingTemplate(Exception):
    pass


_SYSTEM_PROMPTS = {
    "en": (
        'You are an expert clinical doctor. You have to answer a question on '
        '"{task_description}" about a patient. To do it, you are given the patient '
        "clinical history."
    ),
    "it": (
        'Sei un medico clinico esperto. Devi rispondere a una domanda su '
        '"{task_description}" riguardo a un paziente. Per farlo, ti viene fornita la '
        "storia clinica del paziente."
    ),
}

_TASK_DESCRIPTIONS = {
    "en": {
        Section.DIAGNOSIS: "determine if an item is the final diagnosis for the patient",
        Section.HISTORY: "determine whether the patient experienced a history item",
        Section.EXAMS: "extract the results related to an exam item",
    },
    "it": {
        Section.DIAGNOSIS: "stabilire se una voce corrisponde alla diagnosi finale del paziente",
        Section.HISTORY: "stabilire se il paziente ha avuto una voce della sua storia clinica",
        Section.EXAMS: "estrarre i risultati relativi a una voce degli esami",
    },
}

_HISTORY_GUIDELINES = {
    "en": (
        "The answer is composed by three components: polarity, contextual modality, "
        "and permanence. You must combine these three components together to answer "
        "the question.\n"
        "- contextual modality can be: a)'Certainly' if the answer is certain, "
        "b)'Possibly' if the answer is hypothetical, c)'Probably' if the answer is "
        "probable.\n"
        "- polarity can be: a)'yes' if the answer is affirmative, b)'no' if the "
        "answer is negative.\n"
        "- permanence can be: a)'chronic' if the object of the question is certainly "
        "permanent forever, b)'certainly not chronic' if the object of the question "
        "is temporary or transitory, c)'possibly chronic' otherwise.\n"
        "\n"
        'These three components must be combined in order: "contextual modality '
        'polarity, permanence". For example, if the question is "Does the patient '
        'have a history of diabetes?", the answer could be: "Certainly yes, chronic", '
        'or "Probably no, possibly chronic".\n'
        "\n"
        "If the information is not contained in the clinical history, answer with "
        "'not_available'.\n"
        "Do not add any preamble to the answer."
    ),
    "it": (
        "La risposta è composta da tre componenti: polarità, modalità contestuale e "
        "permanenza. Devi combinare insieme queste tre componenti per rispondere alla "
        "domanda.\n"
        "- la modalità contestuale può essere: a)'Certainly' se la risposta è certa, "
        "b)'Possibly' se la risposta è ipotetica, c)'Probably' se la risposta è "
        "probabile.\n"
        "- la polarità può essere: a)'yes' se la risposta è affermativa, b)'no' se la "
        "risposta è negativa.\n"
        "- la permanenza può essere: a)'chronic' se l'oggetto della domanda è "
        "certamente permanente per sempre, b)'certainly not chronic' se l'oggetto "
        "della domanda è temporaneo o transitorio, c)'possibly chronic' altrimenti.\n"
        "\n"
        'Queste tre componenti devono essere combinate nell\'ordine: "modalità '
        'contestuale polarità, permanenza". Per esempio, se la domanda è "Il paziente '
        'ha una storia di diabete?", la risposta potrebbe essere: "Certainly yes, '
        'chronic", oppure "Probably no, possibly chronic".\n'
        "\n"
        "Se l'informazione non è contenuta nella storia clinica, rispondi con "
        "'not_available'.\n"
        "Non aggiungere alcun preambolo alla risposta."
    ),
}

_EXAMS_GUIDELINES = {
    "en": (
        "The answer can assume three different formats.\n"
        "-if the test/exam has been performed only once, answer with the results of "
        "the test/exam.\n"
        "-if the test/exam has been performed more than once, report all the results "
        f"separated by the special token  {MULTI_ANSWER_SEPARATOR}  (for example "
        f'"RESULT_1 {MULTI_ANSWER_SEPARATOR} RESULT_2").\n'
        "-if the information is not contained in the clinical history, answer with "
        "'not_available'"
    ),
    "it": (
        "La risposta può assumere tre formati diversi.\n"
        "-se il test/esame è stato eseguito una sola volta, rispondi con i risultati "
        "del test/esame.\n"
        "-se il test/esame è stato eseguito più di una volta, riporta tutti i "
        f"risultati separati dal token speciale  {MULTI_ANSWER_SEPARATOR}  (per "
        f'esempio "RESULT_1 {MULTI_ANSWER_SEPARATOR} RESULT_2").\n'
        "-se l'informazione non è contenuta nella storia clinica, rispondi con "
        "'not_available'"
    ),
}

_DIAGNOSIS_GUIDELINES = {
    "en": (
        "Answer 'Yes' if the patient's definitive diagnosis is the one indicated. If "
        "the information is not contained in the clinical history, answer with "
        "'not_available'."
    ),
    "it": (
        "Rispondi 'Yes' se la diagnosi definitiva del paziente è quella indicata. Se "
        "l'informazione non è contenuta nella storia clinica, rispondi con "
        "'not_available'."
    ),
}

_QUESTIONS = {
    "en": {
        Section.DIAGNOSIS: "Is the definitive diagnosis {item}?",
        Section.HISTORY: "Does the patient have a history of {item}?",
        Section.EXAMS: "What are the results and measures of {item}?",
    },
    "it": {
        Section.DIAGNOSIS: "La diagnosi definitiva è {item}?",
        Section.HISTORY: "Il paziente ha una storia di {item}?",
        Section.EXAMS: "Quali sono i risultati e le misure di {item}?",
    },
}

_GUIDELINES = {
    Section.DIAGNOSIS: _DIAGNOSIS_GUIDELINES,
    Section.HISTORY: _HISTORY_GUIDELINES,
    Section.EXAMS: _EXAMS_GUIDELINES,
}


def build_eval_prompt(task: Section, doc: Document, item: CrfItem, language: str = "en") -> str:
    """{system prompt} {answering guidelines} {clinical case} {question}."""
    if language not in _SYSTEM_PROMPTS:
        raise MissingTemplate(f"no prompt templates for language {language!r}")
    if task not in _GUIDELINES:
        raise UnknownTask(str(task))
    system = _SYSTEM_PROMPTS[language].format(
        task_description=_TASK_DESCRIPTIONS[language][task]
    )
    guidelines = _GUIDELINES[task][language]
    question = _QUESTIONS[language][task].format(item=item.label)
    return f"{system}\n\n{guidelines}\n\n{doc.text}\n\n{question}"


# ---------------------------------------------------------------------------
# predictions file IO


def load_predictions(path: str | Path, source: PredictionSource = PredictionSource.EXTERNAL,
                     expected_hash: str | None = None) -> PredictionSet:
    """Line-delimited {doc_id, item_id, answer}; answers stored normalized."""
    preds = PredictionSet()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from exc
            if "run_hash" in obj and "doc_id" not in obj:
                if expected_hash is not None and obj["run_hash"] != expected_hash:
                    raise ValueError(
                        f"{path}: predictions were produced by run {obj['run_hash']}, "
                        f"expected {expected_hash}"
                    )
                continue
            try:
                preds.add(
                    Prediction(
                        doc_id=str(obj["doc_id"]),
                        item_id=str(obj["item_id"]),
                        raw_answer=normalize_answer(str(obj["answer"])),
                        source=source,
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from exc
    return preds


def save_predictions(preds: PredictionSet, path: str | Path, run_hash: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if run_hash is not None:
            fh.write(json.dumps({"run_hash": run_hash}, sort_keys=True) + "\n")
        for p in sorted(preds, key=lambda p: (p.doc_id, p.item_id)):
            fh.write(json.dumps(
                {"doc_id": p.doc_id, "item_id": p.item_id, "answer": p.raw_answer},
                ensure_ascii=False, sort_keys=True,
            ))
            fh.write("\n")


# ---------------------------------------------------------------------------
# report output


def report_to_json(report: ScoreReport) -> dict:
    return {
        "mode": report.mode,
        "config_hash": report.config_hash,
        "tasks": {
            task.value: {
                "precision": round(s.precision, 1),
                "recall": round(s.recall, 1),
                "f1": round(s.f1, 1),
                "tp": s.tp, "fp": s.fp, "fn": s.fn, "tn": s.tn,
                "pairs": s.pairs,
            }
            for task, s in report.tasks.items()
        },
        "aggregates": {
            "pooled_micro_f1": round(report.pooled_micro_f1, 1),
            "mean_task_f1": round(report.mean_task_f1, 1),
            "item_weighted_f1": round(report.item_weighted_f1, 1),
        },
        "warnings": report.warnings,
    }


def format_report_table(report: ScoreReport) -> str:
    """Flat task x metric table, diffable against published result tables."""
    lines = [f"# mode={report.mode}"]
    if report.config_hash:
        lines.append(f"# config_hash={report.config_hash}")
    lines.append("task\tprecision\trecall\tf1\ttp\tfp\tfn\ttn\tpairs")
    for task in (Section.DIAGNOSIS, Section.HISTORY, Section.EXAMS):
        s = report.tasks[task]
        lines.append(
            f"{task.value.title()}\t{s.precision:.1f}\t{s.recall:.1f}\t{s.f1:.1f}"
            f"\t{s.tp}\t{s.fp}\t{s.fn}\t{s.tn}\t{s.pairs}"
        )
    lines.append(f"MeanTaskF1\t\t\t{report.mean_task_f1:.1f}")
    lines.append(f"PooledMicroF1\t\t\t{report.pooled_micro_f1:.1f}")
    lines.append(f"ItemWeightedF1\t\t\t{report.item_weighted_f1:.1f}")
    return "\n".join(lines) + "\n"
