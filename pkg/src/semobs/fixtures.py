"""Generators for the bundled test data.

``python -m semobs.cli make-fixtures`` rewrites everything under
``semobs/data``; the files are committed so tests never depend on the
generator's RNG stream staying stable.
"""

from __future__ import annotations

from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from semobs.ingest import Frame, dump_manifest
from semobs.logs import dumps_jsonl
from semobs.metrics import ConfusionMatrix
from semobs.prompting import build_prompt, estimate_tokens, format_answer

# (fixture name, tp, tn, fp, fn, profile key, prompt tier, latency s)
REFERENCE_TABLES = {
    "table3_nf4_verbose": (806, 279, 168, 909, "nf4_static", "Verbose", 0.80),
    "table3_int8_verbose": (773, 301, 146, 942, "int8_static", "Verbose", 1.33),
    "table3_int8_pruned": (215, 263, 184, 1500, "int8_pruned_static", "Pruned", 1.37),
    "table4_bf16": (51, 96, 84, 15, "bf16_video", "Minimal", 0.485),
    "table4_int8": (50, 99, 81, 16, "int8_video", "Minimal", 0.787),
    "table4_nf4": (7, 162, 18, 59, "nf4_video", "Minimal", 0.436),
}

MANIFEST_NAME = "hpt224_manifest.jsonl"


def data_dir():
    return resources.files("semobs") / "data"


def fixture_path(name: str):
    return data_dir() / "fixtures" / f"{name}.jsonl"


def manifest_path():
    return data_dir() / MANIFEST_NAME


def synthesize_log(
    matrix: ConfusionMatrix,
    *,
    tier: str = "Minimal",
    latency_s: float = 0.5,
    profile: str | None = None,
    backend_id: str = "synthetic",
    clips: int | None = None,
    seed: int = 0,
    deadline_s: float = 1.0,
) -> list[dict]:
    """A prediction log whose :func:`~semobs.metrics.score_log` equals ``matrix``.

    Side-counted decisions (Unknown, Unparseable, TimedOut) are placed on
    false negatives first, then on true negatives.
    """
    side = [("Unknown", matrix.unknowns), ("Unparseable", matrix.unparseables),
            ("TimedOut", matrix.timeouts)]
    n_side = sum(c for _, c in side)
    if n_side > matrix.fn + matrix.tn:
        raise ValueError("more side-counted decisions than fn + tn slots")
    side_labels = [name for name, c in side for _ in range(c)]

    fn_dec = side_labels[: matrix.fn] + ["Normal"] * max(0, matrix.fn - len(side_labels))
    rest = side_labels[matrix.fn:]
    tn_dec = rest + ["Normal"] * (matrix.tn - len(rest))
    pairs = (
        [("Anomaly", "Anomaly")] * matrix.tp
        + [("Anomaly", d) for d in fn_dec]
        + [("Normal", "Anomaly")] * matrix.fp
        + [("Normal", d) for d in tn_dec]
    )
    order = np.random.default_rng(seed).permutation(len(pairs))
    prompt = build_prompt(tier)
    n = len(pairs)
    clips = clips or n
    records = []
    for pos, idx in enumerate(order):
        gt, dec = pairs[idx]
        # first (n - clips) clips contribute two windows each
        extra = n - clips
        if pos < 2 * extra:
            clip, widx = pos // 2, pos % 2
        else:
            clip, widx = extra + (pos - 2 * extra), 0
        timed_out = dec == "TimedOut"
        if dec in ("Anomaly", "Normal", "Unknown"):
            raw = format_answer(dec, prompt)
        elif dec == "Unparseable":
            raw = "The scene looks fine overall."
        else:
            raw = ""
        infer = deadline_s + latency_s if timed_out else latency_s
        records.append(
            {
                "clip_id": f"clip_{clip:04d}",
                "window_index": widx,
                "gt": gt,
                "decision": dec,
                "z": 1 if dec == "Anomaly" else 0,
                "raw_text": raw,
                "tokens_generated": estimate_tokens(raw),
                "sense_s": 0.0,
                "preprocess_s": 0.0,
                "infer_s": infer,
                "post_s": 0.0,
                "total_s": infer,
                "deadline_violated": timed_out or infer > deadline_s,
                "prompt_hash": prompt.template_hash,
                "backend_id": backend_id,
                "profile": profile,
            }
        )
    return records


def reference_fixture_records(name: str) -> list[dict]:
    tp, tn, fp, fn, profile, tier, latency = REFERENCE_TABLES[name]
    # video logs: 246 windows from 224 clips
    clips = 224 if name.startswith("table4") else None
    return synthesize_log(
        ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn),
        tier=tier,
        latency_s=latency,
        profile=profile,
        backend_id="fixture",
        clips=clips,
    )


def synthetic_manifest(
    n_clips: int = 224,
    duration_s: int = 40,
    fps: int = 1,
    hazard_fraction: float = 0.8,
    seed: int = 2024,
) -> list[Frame]:
    """Frame references for ``n_clips`` hazard-perception style clips.

    About ``hazard_fraction`` of the clips contain one hazard interval of
    4-12 s whose frames are labelled Anomaly.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for c in range(n_clips):
        clip_id = f"hpt_{c:03d}"
        n_frames = duration_s * fps + 1
        labels = ["Normal"] * n_frames
        if rng.random() < hazard_fraction:
            length = int(rng.integers(4, 13)) * fps
            start = int(rng.integers(0, n_frames - length))
            for i in range(start, start + length):
                labels[i] = "Anomaly"
        for i in range(n_frames):
            frames.append(
                Frame(
                    clip_id=clip_id,
                    frame_index=i,
                    timestamp_s=Fraction(i, fps),
                    uri=f"{clip_id}/{i:05d}.jpg",
                    label=labels[i],
                )
            )
    return frames


def write_all(root: str | Path) -> list[Path]:
    root = Path(root)
    (root / "fixtures").mkdir(parents=True, exist_ok=True)
    written = []
    for name in REFERENCE_TABLES:
        path = root / "fixtures" / f"{name}.jsonl"
        path.write_text(dumps_jsonl(reference_fixture_records(name)), encoding="utf-8")
        written.append(path)
    path = root / MANIFEST_NAME
    path.write_text(dump_manifest(synthetic_manifest()), encoding="utf-8")
    written.append(path)
    return written
