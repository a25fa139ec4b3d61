"""HARA safety goals and the CI gate that checks a metrics report against them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from semobs.backend import load_profile
from semobs.errors import FingerprintMismatch, InvalidConfig
from semobs.metrics import MetricsReport
from semobs.orchestrator import ObserverConfig
from semobs.prompting import build_prompt

KINDS = ("precision_min", "recall_min", "latency_max", "prohibit")
ASILS = ("A", "B", "C", "D")
LATENCY_NOTE = "latency goal checked as p95 total_s <= threshold and zero deadline violations"


@dataclass(frozen=True)
class SafetyGoal:
    id: str
    hazardous_event: str
    asil: str
    kind: str
    threshold: float | None = None
    prohibited: Mapping | None = None  # {"quant": ..., "modality": ...}
    mitigation: str = ""

    def __post_init__(self):
        if self.asil not in ASILS:
            raise InvalidConfig(f"goal {self.id}: bad ASIL {self.asil!r}")
        if self.kind not in KINDS:
            raise InvalidConfig(f"goal {self.id}: unknown kind {self.kind!r}")
        if self.kind in ("precision_min", "recall_min"):
            if self.threshold is None or not 0 <= self.threshold <= 1:
                raise InvalidConfig(f"goal {self.id}: threshold must be in [0, 1]")
        elif self.kind == "latency_max":
            if self.threshold is None or self.threshold <= 0:
                raise InvalidConfig(f"goal {self.id}: latency threshold must be positive")
        elif not self.prohibited or not {"quant", "modality"} <= set(self.prohibited):
            raise InvalidConfig(f"goal {self.id}: prohibition needs quant and modality")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SafetyGoal":
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prohibited"] = dict(self.prohibited) if self.prohibited else None
        return d


def default_goals() -> list[SafetyGoal]:
    """The four HARA goals: FP/precision (B), FN/recall (D), latency (B), NF4 video (D)."""
    return [
        SafetyGoal(
            "SG1-precision",
            "False positive: spurious fail-safe trigger",
            "B",
            "precision_min",
            0.80,
            mitigation="debounce triggers",
        ),
        SafetyGoal(
            "SG2-recall",
            "False negative: undetected hazard",
            "D",
            "recall_min",
            0.90,
            mitigation="redundant detection",
        ),
        SafetyGoal(
            "SG3-latency",
            "Excessive latency",
            "B",
            "latency_max",
            1.0,
            mitigation="watchdog monitor",
        ),
        SafetyGoal(
            "SG4-nf4-video",
            "NF4 silent recall collapse (video)",
            "D",
            "prohibit",
            prohibited={"quant": "NF4", "modality": "video"},
            mitigation="Prohibit NF4 in video path",
        ),
    ]


def load_goals(path: str | Path) -> list[SafetyGoal]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise InvalidConfig("goals file must hold a JSON list")
    return [SafetyGoal.from_dict(g) for g in data]


@dataclass(frozen=True)
class GoalVerdict:
    goal_id: str
    asil: str
    kind: str
    passed: bool
    measured: object
    threshold: object
    gap: float | None = None
    note: str = ""


@dataclass(frozen=True)
class GateReport:
    verdicts: tuple[GoalVerdict, ...]
    overall: str
    blocking: tuple[str, ...]
    notes: tuple[str, ...] = field(default=())

    def verdict(self, goal_id: str) -> GoalVerdict:
        for v in self.verdicts:
            if v.goal_id == goal_id:
                return v
        raise KeyError(goal_id)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "blocking": list(self.blocking),
            "verdicts": [asdict(v) for v in self.verdicts],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check_fingerprint(report: MetricsReport, config: ObserverConfig) -> None:
    fp = report.fingerprint or {}
    expected = {
        "profile": config.profile,
        "n_min": config.n_min,
        "deadline_s": float(config.deadline_s),
        "prompt_hash": build_prompt(config.tier, config.context).template_hash,
    }
    for key, want in expected.items():
        got = fp.get(key)
        if got is None or want is None:
            continue
        if got != want:
            raise FingerprintMismatch(f"report {key}={got!r} but config has {want!r}")


def _resolve_quant(config: ObserverConfig) -> tuple[str | None, str | None]:
    if not config.profile:
        return None, None
    try:
        p = load_profile(config.profile)
    except InvalidConfig:
        return None, None
    return p.name, p.modality


def evaluate(
    report: MetricsReport,
    config: ObserverConfig,
    goals: Iterable[SafetyGoal] | None = None,
) -> GateReport:
    """Check ``report`` produced under ``config`` against ``goals``.

    Configuration prohibitions are checked first and fail regardless of the
    measured values. Undefined metrics fail their goal.
    """
    goals = list(default_goals() if goals is None else goals)
    _check_fingerprint(report, config)
    quant, modality = _resolve_quant(config)
    ordered = [g for g in goals if g.kind == "prohibit"] + [g for g in goals if g.kind != "prohibit"]

    verdicts = []
    for g in ordered:
        if g.kind == "prohibit":
            cfg = {"quant": quant, "modality": modality}
            if quant is None:
                verdicts.append(GoalVerdict(g.id, g.asil, g.kind, False, cfg, dict(g.prohibited),
                                            note="quantization/modality unknown"))
                continue
            hit = quant == g.prohibited["quant"] and modality == g.prohibited["modality"]
            verdicts.append(GoalVerdict(g.id, g.asil, g.kind, not hit, cfg, dict(g.prohibited),
                                        note="prohibited configuration" if hit else ""))
        elif g.kind in ("precision_min", "recall_min"):
            value = getattr(report.scores, g.kind.split("_")[0])
            if value is None:
                verdicts.append(GoalVerdict(g.id, g.asil, g.kind, False, None, g.threshold,
                                            note="metric undefined"))
                continue
            measured = float(value)
            gap = g.threshold - measured
            verdicts.append(GoalVerdict(g.id, g.asil, g.kind, measured >= g.threshold, measured,
                                        g.threshold, gap=gap))
        else:
            lat = report.latency
            if not lat:
                verdicts.append(GoalVerdict(g.id, g.asil, g.kind, False, None, g.threshold,
                                            note="no latency data"))
                continue
            p95, viol = float(lat["p95_s"]), int(lat["violations"])
            ok = p95 <= g.threshold and viol == 0
            verdicts.append(GoalVerdict(g.id, g.asil, g.kind, ok, {"p95_s": p95, "violations": viol},
                                        g.threshold, gap=p95 - g.threshold, note=LATENCY_NOTE))

    failed = [v for v in verdicts if not v.passed]
    blocking = tuple(v.goal_id for v in failed if v.asil == "D")
    notes = [LATENCY_NOTE] + [f"{g.id} mitigation: {g.mitigation}" for g in goals if g.mitigation]
    if blocking:
        notes.append("observer must not be the sole safety layer while ASIL-D goals fail")
    return GateReport(tuple(verdicts), "FAIL" if failed else "PASS", blocking, tuple(notes))
