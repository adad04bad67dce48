"""Detection metrics, Likert score aggregation, and inter-rater agreement.

Percentages use half-up rounding (2 decimals for metrics, 1 for shares),
isolated in round_half_up so the presentation rule lives in one place.
Zero-denominator metrics report 0 with an ``undefined`` flag instead of
raising, so comparison tables can render degenerate rows.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from scforge.patterns import VulnType


class EvalError(Exception):
    pass


class EmptyInput(EvalError):
    pass


class EmptyMatrix(EvalError):
    pass


class NoLabelFound(EvalError):
    pass


class ScoreOutOfRange(EvalError):
    pass


class MissingSecondRating(EvalError):
    def __init__(self, item_id: str):
        super().__init__(f"overlapped item {item_id} has fewer than two ratings")
        self.item_id = item_id


def round_half_up(value: float, decimals: int) -> float:
    """Round half away from zero; the single rounding rule for reporting."""
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class EvalRecord:
    unit_id: str
    vuln_type: VulnType
    gold: int
    predicted: int
    explanation: str = ""
    system_id: str = ""

    def __post_init__(self):
        if self.gold not in (0, 1) or self.predicted not in (0, 1):
            raise ValueError("gold and predicted must be 0 or 1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "undefined": list(self.undefined),
        }


_LABEL_RE = re.compile(r"\blabel\b\s*[:=]\s*\**\s*(vulnerable|safe|1|0)\b", re.IGNORECASE)
_KEYWORD_RE = re.compile(r"\b(VULNERABLE|SAFE)\b")


def parse_prediction(raw: str) -> int:
    """Binary label from model output, truncated at the first repeated paragraph.

    Paragraphs are blank-line separated; the first paragraph byte-identical to
    an earlier one (and everything after it) is dropped before label search.
    """
    paragraphs = re.split(r"\n\s*\n", raw)
    seen: set[str] = set()
    retained: list[str] = []
    for para in paragraphs:
        if not para.strip():
            continue
        if para in seen:
            break
        seen.add(para)
        retained.append(para)
    text = "\n\n".join(retained)

    label_m = _LABEL_RE.search(text)
    if label_m:
        return 1 if label_m.group(1).lower() in ("vulnerable", "1") else 0
    keyword_m = _KEYWORD_RE.search(text)
    if keyword_m:
        return 1 if keyword_m.group(1) == "VULNERABLE" else 0
    raise NoLabelFound("no label block or VULNERABLE/SAFE keyword in retained output")


def confusion(records: Sequence[EvalRecord]) -> ConfusionMatrix:
    if not records:
        raise EmptyInput("no evaluation records")
    tp = sum(1 for r in records if r.gold == 1 and r.predicted == 1)
    fp = sum(1 for r in records if r.gold == 0 and r.predicted == 1)
    fn = sum(1 for r in records if r.gold == 1 and r.predicted == 0)
    tn = sum(1 for r in records if r.gold == 0 and r.predicted == 0)
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy/precision/recall/F1 as percentages rounded to 2 decimals."""
    if cm.total < 1:
        raise EmptyMatrix("cannot compute metrics of an empty matrix")
    undefined: list[str] = []

    accuracy = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp > 0:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if cm.tp + cm.fn > 0:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.append("f1")
    return Metrics(
        accuracy=round_half_up(accuracy * 100, 2),
        precision=round_half_up(precision * 100, 2),
        recall=round_half_up(recall * 100, 2),
        f1=round_half_up(f1 * 100, 2),
        undefined=tuple(undefined),
    )


def f1_from_percentages(precision_pct: float, recall_pct: float) -> float:
    """Harmonic mean of already-percent P and R, rounded like metrics()."""
    if precision_pct + recall_pct == 0:
        return 0.0
    return round_half_up(2 * precision_pct * recall_pct / (precision_pct + recall_pct), 2)


def metrics_table(
    records: Sequence[EvalRecord],
) -> tuple[dict, str]:
    """Systems x vulnerability-types comparison; JSON plus an aligned text table."""
    groups: dict[tuple[str, VulnType], list[EvalRecord]] = {}
    for record in records:
        groups.setdefault((record.system_id, record.vuln_type), []).append(record)
    if not groups:
        raise EmptyInput("no records to tabulate")

    systems = sorted({sys_id for sys_id, _ in groups})
    types = [vt for vt in VulnType if any((s, vt) in groups for s in systems)]
    table: dict[str, dict[str, dict]] = {}
    for sys_id in systems:
        table[sys_id] = {}
        for vt in types:
            if (sys_id, vt) in groups:
                table[sys_id][vt.value] = metrics(confusion(groups[(sys_id, vt)])).to_dict()

    header = ["system"]
    for vt in types:
        header.extend(f"{vt.code}-{m}" for m in ("A", "P", "R", "F1"))
    rows = [header]
    for sys_id in systems:
        row = [sys_id]
        for vt in types:
            cell = table[sys_id].get(vt.value)
            if cell is None:
                row.extend(["--"] * 4)
            else:
                row.extend(
                    f"{cell[name]:.2f}" for name in ("accuracy", "precision", "recall", "f1")
                )
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    text = "\n".join("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows)
    return {"systems": table, "types": [vt.value for vt in types]}, text


DIMENSIONS = ("correctness", "completeness", "conciseness")
LIKERT_SCORES = (1, 2, 3, 4)


@dataclass(frozen=True)
class LikertDistribution:
    dimension: str
    counts: Mapping[int, int]
    system_id: str = ""
    evaluator: str = ""

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def likert_distribution(
    ratings: Sequence[tuple[str, int]],
    dimension: str = "correctness",
    system_id: str = "",
    evaluator: str = "",
) -> tuple[LikertDistribution, dict[int, float]]:
    """Counts per Likert score plus percentage shares (1 decimal)."""
    if not ratings:
        raise EmptyInput("no ratings")
    counts = {score: 0 for score in LIKERT_SCORES}
    for item_id, score in ratings:
        if score not in counts:
            raise ScoreOutOfRange(f"item {item_id}: score {score} not in 1..4")
        counts[score] += 1
    dist = LikertDistribution(dimension=dimension, counts=counts, system_id=system_id, evaluator=evaluator)
    shares = {score: round_half_up(100.0 * counts[score] / dist.total, 1) for score in LIKERT_SCORES}
    return dist, shares


def shares_from_counts(counts: Sequence[int]) -> list[float]:
    """Percentage shares of a 4-score count vector, 1 decimal each."""
    total = sum(counts)
    if total < 1:
        raise EmptyInput("count vector sums to zero")
    return [round_half_up(100.0 * c / total, 1) for c in counts]


# A rating for agreement purposes: (item_id, rater_id, {dimension: score}).
RatingTriple = tuple[str, str, Mapping[str, int]]


@dataclass
class AgreementReport:
    items: dict[str, dict] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)
    exact_agreement: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "items": self.items,
            "flagged": list(self.flagged),
            "exact_agreement": dict(self.exact_agreement),
            "warnings": list(self.warnings),
        }


def agreement_report(
    overlapped_items: Iterable[str],
    ratings: Sequence[RatingTriple],
    allow_partial: bool = False,
) -> AgreementReport:
    """Per-dimension score differences on double-rated items.

    An item needs consensus when any dimension differs by more than one point.
    With allow_partial, items missing their second rating become warnings
    instead of errors.
    """
    by_item: dict[str, list[RatingTriple]] = {}
    for triple in ratings:
        by_item.setdefault(triple[0], []).append(triple)

    report = AgreementReport()
    agree_counts = {dim: 0 for dim in DIMENSIONS}
    compared = 0
    for item_id in sorted(set(overlapped_items)):
        got = sorted(by_item.get(item_id, []), key=lambda t: t[1])
        if len(got) < 2:
            if allow_partial:
                report.warnings.append(f"overlapped item {item_id} is missing a second rating")
                continue
            raise MissingSecondRating(item_id)
        if len(got) > 2:
            raise ValueError(f"overlapped item {item_id} has more than two ratings")
        (_, _, scores_a), (_, _, scores_b) = got
        diffs = {dim: abs(scores_a[dim] - scores_b[dim]) for dim in DIMENSIONS}
        needs_consensus = any(diff > 1 for diff in diffs.values())
        report.items[item_id] = {"differences": diffs, "needs_consensus": needs_consensus}
        if needs_consensus:
            report.flagged.append(item_id)
        compared += 1
        for dim in DIMENSIONS:
            if diffs[dim] == 0:
                agree_counts[dim] += 1
    if compared:
        report.exact_agreement = {
            dim: round_half_up(100.0 * agree_counts[dim] / compared, 1) for dim in DIMENSIONS
        }
    return report
