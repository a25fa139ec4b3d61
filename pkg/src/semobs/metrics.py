"""Confusion matrices, effectiveness scores and latency statistics.

All ratios are exact :class:`~fractions.Fraction` values; ``None`` stands for
an undefined 0/0 ratio. Rounding happens only when a report is rendered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from semobs import kernels
from semobs.errors import EmptyLog, MissingGroundTruth

GT_CODES = {"Normal": 0, "Anomaly": 1}
DECISION_CODES = {"Normal": 0, "Anomaly": 1, "Unknown": 2, "Unparseable": 3, "TimedOut": 4}
SCORE_NAMES = ("precision", "recall", "f1", "accuracy", "balanced_accuracy", "specificity")
FINGERPRINT_KEYS = ("prompt_hash", "backend_id", "profile", "n_min", "deadline_s")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    unknowns: int = 0
    unparseables: int = 0
    timeouts: int = 0

    def __post_init__(self):
        if min(self.as_tuple()) < 0:
            raise ValueError("counts must be nonnegative")

    def as_tuple(self) -> tuple[int, ...]:
        return (self.tp, self.tn, self.fp, self.fn, self.unknowns, self.unparseables, self.timeouts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    @property
    def scored(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return dict(zip(("tp", "tn", "fp", "fn", "unknowns", "unparseables", "timeouts"), self.as_tuple()))


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


@dataclass(frozen=True)
class Scores:
    precision: Fraction | None
    recall: Fraction | None
    f1: Fraction | None
    accuracy: Fraction | None
    balanced_accuracy: Fraction | None
    specificity: Fraction | None


def compute_scores(m: ConfusionMatrix) -> Scores:
    recall = _ratio(m.tp, m.tp + m.fn)
    specificity = _ratio(m.tn, m.tn + m.fp)
    balanced = None if recall is None or specificity is None else (recall + specificity) / 2
    return Scores(
        precision=_ratio(m.tp, m.tp + m.fp),
        recall=recall,
        f1=_ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn),
        accuracy=_ratio(m.tp + m.tn, m.scored),
        balanced_accuracy=balanced,
        specificity=specificity,
    )


def score_log(records: Iterable[Mapping]) -> ConfusionMatrix:
    """Count a prediction log into a confusion matrix.

    Unknown, Unparseable and TimedOut decisions never count as positives:
    on anomalous ground truth they are false negatives, on normal ground
    truth true negatives; either way their side counter is bumped.
    """
    gt_codes = []
    dec_codes = []
    for rec in records:
        gt = rec.get("gt")
        if gt not in GT_CODES:
            raise MissingGroundTruth(dict(rec))
        decision = rec.get("decision")
        if decision not in DECISION_CODES:
            raise ValueError(f"unknown decision class {decision!r}")
        gt_codes.append(GT_CODES[gt])
        dec_codes.append(DECISION_CODES[decision])
    if not gt_codes:
        return ConfusionMatrix()
    counts = kernels.confusion_counts(
        np.array(gt_codes, dtype=np.int8), np.array(dec_codes, dtype=np.int8)
    )
    return ConfusionMatrix(*(int(c) for c in counts))


def nearest_rank(sorted_values, pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100 * n))
    return float(sorted_values[rank - 1])


def latency_stats(records: Iterable[Mapping], deadline_s: float = 1.0) -> dict:
    """Mean / nearest-rank p50, p95 / max of ``total_s`` plus violation count.

    A record counts as a violation if its total exceeds ``deadline_s`` or the
    watchdog flagged it (abandoned wall-clock calls).
    """
    totals = []
    violations = 0
    for rec in records:
        total = float(rec["total_s"])
        totals.append(total)
        if total > deadline_s or rec.get("deadline_violated") is True:
            violations += 1
    if not totals:
        raise EmptyLog("no records with total_s")
    ordered = sorted(totals)
    return {
        "mean_s": math.fsum(totals) / len(totals),
        "p50_s": nearest_rank(ordered, 50),
        "p95_s": nearest_rank(ordered, 95),
        "max_s": ordered[-1],
        "violations": violations,
        "deadline_s": float(deadline_s),
    }


@dataclass(frozen=True)
class MetricsReport:
    matrix: ConfusionMatrix
    scores: Scores
    latency: dict | None
    fingerprint: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.to_dict(),
            "scores": {k: _num(getattr(self.scores, k)) for k in SCORE_NAMES},
            "exact": {k: _exact(getattr(self.scores, k)) for k in SCORE_NAMES},
            "latency": self.latency,
            "fingerprint": dict(self.fingerprint),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricsReport":
        matrix = ConfusionMatrix(**data["matrix"])
        return cls(
            matrix=matrix,
            scores=compute_scores(matrix),
            latency=data.get("latency"),
            fingerprint=dict(data.get("fingerprint") or {}),
            meta=dict(data.get("meta") or {}),
        )


def _num(v: Fraction | None):
    return None if v is None else float(v)


def _exact(v: Fraction | None):
    return None if v is None else f"{v.numerator}/{v.denominator}"


def fingerprint_of(records: list[Mapping]) -> dict:
    """Config fingerprint shared by all records; differing values become ``"mixed"``."""
    out = {}
    for key in FINGERPRINT_KEYS:
        values = {json.dumps(r.get(key)) for r in records if key in r}
        if not values:
            out[key] = None
        elif len(values) == 1:
            out[key] = json.loads(values.pop())
        else:
            out[key] = "mixed"
    return out


def build_report(
    records: Iterable[Mapping],
    deadline_s: float | None = None,
    meta: Mapping | None = None,
) -> MetricsReport:
    records = list(records)
    if not records:
        raise EmptyLog("prediction log is empty")
    fp = fingerprint_of(records)
    if deadline_s is None:
        deadline_s = fp["deadline_s"] if isinstance(fp.get("deadline_s"), (int, float)) else 1.0
    matrix = score_log(records)
    latency = latency_stats(records, deadline_s) if all("total_s" in r for r in records) else None
    return MetricsReport(matrix, compute_scores(matrix), latency, fp, dict(meta or {}))


def merge_reports(shards: Iterable[MetricsReport]) -> ConfusionMatrix:
    total = ConfusionMatrix()
    for shard in shards:
        total = total + shard.matrix
    return total


def _pct(v: Fraction | None) -> str:
    return "n/a" if v is None else f"{float(v) * 100:.1f}%"


def emit_report(report: MetricsReport, format: str = "json", name: str | None = None) -> bytes:
    """Serialise a report as JSON or as a markdown table row set."""
    if format == "json":
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode()
    if format not in ("markdown", "markdown_table"):
        raise ValueError(f"unknown report format {format!r}")
    m, s = report.matrix, report.scores
    label = name or report.fingerprint.get("profile") or "run"
    lat = "n/a" if not report.latency else f"{report.latency['mean_s']:.3f}"
    header = (
        "| Configuration | TP | TN | FP | FN | Precision | Recall | F1 | Acc. "
        "| Bal. Acc. | Latency (s) |"
    )
    rule = "|" + "---|" * 11
    row = (
        f"| {label} | {m.tp} | {m.tn} | {m.fp} | {m.fn} | {_pct(s.precision)} "
        f"| {_pct(s.recall)} | {_pct(s.f1)} | {_pct(s.accuracy)} "
        f"| {_pct(s.balanced_accuracy)} | {lat} |"
    )
    side = f"\nUnknown: {m.unknowns}  Unparseable: {m.unparseables}  TimedOut: {m.timeouts}\n"
    return ("\n".join([header, rule, row]) + "\n" + side).encode()
