"""Aggregate judged items into accuracy tables and precision/recall scores.

Counts are carried as exact ``(correct, total)`` integer pairs and ratios
as :class:`fractions.Fraction`; floats appear only at render time. Failed
items (``predicted`` absent) count as wrong everywhere, so denominators
always equal the number of attempted items.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, DataFormatError
from .labels import (
    INVALID,
    SCENARIO_LABELS,
    Consistency,
    Label,
    RefChoice,
    Scenario,
    SetTag,
    Strategy,
)

ROWS = ("SET_G", "SET_N", "OVERALL")
COLS = ("REF_G", "REF_N", "OVERALL")


class Comparison(Enum):
    """How predictions are matched against gold labels.

    Binary comparison collapses the correctness split of GENDERED so that
    source-aware judgments can be scored against target-only gold labels.
    """

    TARGET_ONLY_BINARY = "TARGET_ONLY_BINARY"
    SOURCE_TARGET_TERNARY = "SOURCE_TARGET_TERNARY"


@dataclass(frozen=True)
class EvalRecord:
    """One judged item: gold label, predicted label, and provenance.

    ``spans_verbatim`` is a soft diagnostic for phrase-annotating
    strategies: False when some phrase span is not a verbatim substring
    of the judged sentence (models may normalize); such verdicts stay
    usable but are flagged in reports.
    """

    entry_id: str
    language: str
    set_tag: SetTag
    ref: Optional[RefChoice]
    scenario: Scenario
    strategy: Strategy
    model_id: str
    gold: Label
    predicted: Optional[Label]  # None encodes a failed item (INVALID)
    consistency: Consistency
    spans_verbatim: Optional[bool] = None


def validate_record(record: EvalRecord) -> None:
    """Check an EvalRecord's own invariants (used on reload)."""
    if record.scenario is not record.strategy.scenario:
        raise DataFormatError(
            f"record {record.entry_id}: scenario {record.scenario.value} does not "
            f"match strategy {record.strategy.value}"
        )
    gold_space = (
        SCENARIO_LABELS[Scenario.TARGET_ONLY] if record.ref is None else SCENARIO_LABELS[record.scenario]
    )
    if record.gold not in gold_space:
        raise DataFormatError(f"record {record.entry_id}: gold {record.gold.wire!r} out of label space")
    if record.predicted is not None and record.predicted not in SCENARIO_LABELS[record.scenario]:
        raise DataFormatError(
            f"record {record.entry_id}: predicted {record.predicted.wire!r} out of label space"
        )
    if not record.strategy.wants_phrases and record.consistency is not Consistency.NOT_APPLICABLE:
        raise DataFormatError(
            f"record {record.entry_id}: consistency must be NOT_APPLICABLE for {record.strategy.value}"
        )


def record_to_json(record: EvalRecord) -> dict:
    return {
        "entry_id": record.entry_id,
        "language": record.language,
        "set_tag": record.set_tag.name,
        "ref": record.ref.value if record.ref else None,
        "scenario": record.scenario.value,
        "strategy": record.strategy.value,
        "model_id": record.model_id,
        "gold": record.gold.wire,
        "predicted": record.predicted.wire if record.predicted else INVALID,
        "consistency": record.consistency.value,
        "spans_verbatim": record.spans_verbatim,
    }


def record_from_json(obj: dict) -> EvalRecord:
    try:
        record = EvalRecord(
            entry_id=obj["entry_id"],
            language=obj["language"],
            set_tag=SetTag[obj["set_tag"]],
            ref=RefChoice(obj["ref"]) if obj["ref"] is not None else None,
            scenario=Scenario(obj["scenario"]),
            strategy=Strategy(obj["strategy"]),
            model_id=obj["model_id"],
            gold=Label.from_wire(obj["gold"]),
            predicted=None if obj["predicted"] == INVALID else Label.from_wire(obj["predicted"]),
            consistency=Consistency(obj["consistency"]),
            spans_verbatim=obj.get("spans_verbatim"),
        )
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"corrupt record: {exc} in {obj!r}") from None
    validate_record(record)
    return record


def collapse_for_target_only(label: Label) -> Label:
    """Fold the correctness split: any gendered label counts as GENDERED."""
    if label in (Label.GENDERED, Label.CORRECTLY_GENDERED, Label.WRONGLY_GENDERED):
        return Label.GENDERED
    return Label.NEUTRAL


def is_correct(record: EvalRecord, comparison: Comparison) -> bool:
    """Whether the prediction matches gold under the comparison; failures never do."""
    if record.predicted is None:
        return False
    if comparison is Comparison.TARGET_ONLY_BINARY:
        return collapse_for_target_only(record.predicted) == collapse_for_target_only(record.gold)
    return record.predicted == record.gold


@dataclass(frozen=True)
class MetricsTable:
    """Per-cell (correct, total) counts for the Set-G/Set-N x REF-G/REF-N grid.

    OVERALL cells pool counts (micro aggregation), so the overall accuracy
    is exactly total-correct over total-judged.
    """

    cells: dict[tuple[str, str], tuple[int, int]]

    def counts(self, row: str, col: str) -> tuple[int, int]:
        return self.cells[(row, col)]

    def accuracy(self, row: str, col: str) -> Optional[Fraction]:
        correct, total = self.cells[(row, col)]
        if total == 0:
            return None
        return Fraction(correct, total)


def _require_homogeneous(records: Sequence[EvalRecord]) -> None:
    keys = {(r.model_id, r.strategy, r.language) for r in records}
    if len(keys) > 1:
        raise ConfigError(f"records mix (model, strategy, language) combinations: {sorted(map(str, keys))}")


def accuracy_table(records: Sequence[EvalRecord], comparison: Comparison) -> MetricsTable:
    """Count correct matches per (set, reference) cell with micro-pooled margins."""
    if not records:
        raise ConfigError("cannot build an accuracy table from zero records")
    _require_homogeneous(records)
    if any(r.ref is None for r in records):
        raise ConfigError("accuracy tables need records with a reference choice")
    cells = {(row, col): [0, 0] for row in ROWS for col in COLS}
    for record in records:
        row = record.set_tag.name
        col = record.ref.value  # type: ignore[union-attr]
        hit = 1 if is_correct(record, comparison) else 0
        for key in ((row, col), (row, "OVERALL"), ("OVERALL", col), ("OVERALL", "OVERALL")):
            cells[key][0] += hit
            cells[key][1] += 1
    return MetricsTable(cells={k: (c, t) for k, (c, t) in cells.items()})


@dataclass(frozen=True)
class PRF:
    """Precision/recall/F1 with their confusion counts, exact."""

    precision: Fraction
    recall: Fraction
    f1: Fraction
    tp: int
    fp: int
    fn: int
    tn: int
    positive_class: Label
    degenerate: tuple[str, ...]


def precision_recall(records: Sequence[EvalRecord], positive: Label = Label.NEUTRAL) -> PRF:
    """Precision and recall of the positive class under binary comparison.

    Predictions are collapsed to the binary space first; failed items
    count as non-positive predictions. Empty denominators yield 0 and are
    flagged in ``degenerate``.
    """
    tp = fp = fn = tn = 0
    for record in records:
        gold_pos = collapse_for_target_only(record.gold) == positive
        pred_pos = record.predicted is not None and collapse_for_target_only(record.predicted) == positive
        if gold_pos and pred_pos:
            tp += 1
        elif gold_pos:
            fn += 1
        elif pred_pos:
            fp += 1
        else:
            tn += 1
    degenerate = []
    if tp + fp == 0:
        precision = Fraction(0)
        degenerate.append("precision")
    else:
        precision = Fraction(tp, tp + fp)
    if tp + fn == 0:
        recall = Fraction(0)
        degenerate.append("recall")
    else:
        recall = Fraction(tp, tp + fn)
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = Fraction(0)
    return PRF(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        positive_class=positive,
        degenerate=tuple(degenerate),
    )


def consistency_rate(records: Iterable[EvalRecord]) -> Fraction:
    """Share of phrase-annotating records whose label matches their phrases."""
    applicable = consistent = 0
    for record in records:
        if record.consistency is Consistency.NOT_APPLICABLE:
            continue
        applicable += 1
        if record.consistency is Consistency.CONSISTENT:
            consistent += 1
    if applicable == 0:
        raise ConfigError("no records with applicable consistency information")
    return Fraction(consistent, applicable)
