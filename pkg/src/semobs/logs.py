"""JSONL prediction and handoff logs.

Records are written with a fixed key order so that identical simulated runs
produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable, Mapping

from semobs import __version__
from semobs.orchestrator import HandoffEvent, ObserverDecision

PREDICTION_KEYS = (
    "clip_id",
    "window_index",
    "gt",
    "decision",
    "z",
    "raw_text",
    "tokens_generated",
    "sense_s",
    "preprocess_s",
    "infer_s",
    "post_s",
    "total_s",
    "deadline_violated",
    "prompt_hash",
    "backend_id",
    "profile",
)


def run_meta(config_hash: str, seed: int, prompt_hash: str, n_min=None, deadline_s=None) -> dict:
    meta = {
        "tool_version": __version__,
        "config_hash": config_hash,
        "prompt_hash": prompt_hash,
        "seed": seed,
    }
    if n_min is not None:
        meta["n_min"] = n_min
    if deadline_s is not None:
        meta["deadline_s"] = float(deadline_s)
    return meta


def decision_record(
    d: ObserverDecision,
    prompt_hash: str,
    backend_id: str,
    profile: str | None,
    meta: Mapping | None = None,
) -> dict:
    resp = d.response
    rec = {
        "clip_id": d.window.clip_id,
        "window_index": d.window.window_index,
        "gt": d.window.label,
        "decision": d.decision_class,
        "z": d.z,
        "raw_text": resp.raw_text if resp is not None else "",
        "tokens_generated": resp.tokens_generated if resp is not None else 0,
        **d.latency.as_floats(),
        "deadline_violated": d.deadline_violated,
        "prompt_hash": prompt_hash,
        "backend_id": backend_id,
        "profile": profile,
    }
    if d.budget_overshoot:
        rec["budget_overshoot"] = d.budget_overshoot
    for k, v in (meta or {}).items():
        rec.setdefault(k, v)
    return rec


def handoff_record(e: HandoffEvent, meta: Mapping | None = None) -> dict:
    rec = {
        "trigger_time_s": float(e.trigger_time_s),
        "windows": list(e.windows),
        "explanations": list(e.explanation_texts),
        **{f"last_{k}": v for k, v in e.latency_of_last.as_floats().items()},
    }
    for k, v in (meta or {}).items():
        rec.setdefault(k, v)
    return rec


def dumps_jsonl(records: Iterable[Mapping]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def write_jsonl(path: str | Path, records: Iterable[Mapping], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(records))


def read_jsonl(source: str | Path | IO) -> list[dict]:
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {line_no}: invalid JSON ({exc.msg})") from None
    return out
