"""Frame manifests and sliding temporal windows.

Times are kept as :class:`fractions.Fraction` so that window grids built from
``stride_s`` and ``1/fps`` never drift. Manifest numbers are parsed straight
from their decimal text, so ``0.1`` in a manifest is exactly 1/10 here.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Mapping

import numpy as np

from semobs import kernels
from semobs.errors import (
    ClipTooShort,
    DuplicateFrame,
    InvalidConfig,
    MalformedRecord,
    NonMonotonicTimestamp,
)

log = logging.getLogger(__name__)

LABELS = ("Normal", "Anomaly")
MANIFEST_FORMATS = ("jsonl", "csv")


def to_fraction(value) -> Fraction:
    """Exact rational from an int, Fraction, Decimal or decimal string.

    Floats go through their shortest repr, so ``0.485`` becomes 485/1000
    rather than the nearest binary double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a time value")
    if isinstance(value, float):
        return Fraction(repr(float(value)))
    return Fraction(value)


@dataclass(frozen=True)
class Frame:
    clip_id: str
    frame_index: int
    timestamp_s: Fraction
    uri: str | None = None
    label: str | None = None
    ego_state: Mapping | None = field(default=None, compare=False)


@dataclass(frozen=True)
class SamplingConfig:
    k: int
    fps: Fraction
    window_duration_s: Fraction
    stride_s: Fraction

    def __post_init__(self):
        for name in ("fps", "window_duration_s", "stride_s"):
            object.__setattr__(self, name, to_fraction(getattr(self, name)))
        if self.fps <= 0 or self.window_duration_s <= 0 or self.stride_s <= 0:
            raise InvalidConfig("fps, window_duration_s and stride_s must be positive")
        if self.k < 1:
            raise InvalidConfig("k must be a positive integer")
        expected = round(self.window_duration_s * self.fps)
        if self.k != expected:
            raise InvalidConfig(
                f"k={self.k} disagrees with window_duration_s*fps={expected}"
            )

    @classmethod
    def create(cls, fps=1, window_duration_s=5, stride_s=2, k: int | None = None):
        fps = to_fraction(fps)
        window_duration_s = to_fraction(window_duration_s)
        if k is None:
            k = round(window_duration_s * fps)
        return cls(k=k, fps=fps, window_duration_s=window_duration_s, stride_s=stride_s)

    @property
    def overlapping(self) -> bool:
        return self.stride_s <= self.window_duration_s

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "fps": float(self.fps),
            "window_duration_s": float(self.window_duration_s),
            "stride_s": float(self.stride_s),
        }


# video observer defaults: k=5 frames from 5 s windows at 1 fps, 2 s stride
DEFAULT_SAMPLING = SamplingConfig.create(fps=1, window_duration_s=5, stride_s=2)


@dataclass(frozen=True)
class Window:
    clip_id: str
    window_index: int
    frames: tuple[Frame, ...]
    start_s: Fraction
    end_s: Fraction
    label: str | None

    @property
    def window_id(self) -> str:
        return f"{self.clip_id}/{self.window_index}"


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------


def _coerce_record(raw: Mapping, line_no: int) -> Frame:
    try:
        clip_id = raw["clip_id"]
        frame_index = raw["frame_index"]
        timestamp = raw["timestamp_s"]
    except KeyError as exc:
        raise MalformedRecord(line_no, f"missing key {exc.args[0]!r}") from None
    if not isinstance(clip_id, str) or not clip_id:
        raise MalformedRecord(line_no, "clip_id must be a nonempty string")
    if isinstance(frame_index, str):
        try:
            frame_index = int(frame_index)
        except ValueError:
            raise MalformedRecord(line_no, "frame_index is not an integer") from None
    if isinstance(frame_index, bool) or not isinstance(frame_index, int) or frame_index < 0:
        raise MalformedRecord(line_no, "frame_index must be a nonnegative integer")
    try:
        ts = to_fraction(timestamp)
    except (TypeError, ValueError, ZeroDivisionError):
        raise MalformedRecord(line_no, f"bad timestamp_s {timestamp!r}") from None
    if ts < 0:
        raise MalformedRecord(line_no, "timestamp_s must be >= 0")
    uri = raw.get("uri") or None
    if uri is not None and not isinstance(uri, str):
        raise MalformedRecord(line_no, "uri must be a string or null")
    label = raw.get("label") or None
    if label is not None and label not in LABELS:
        raise MalformedRecord(line_no, f"unknown label {label!r}")
    ego = raw.get("ego_state")
    return Frame(clip_id, frame_index, ts, uri, label, ego if isinstance(ego, Mapping) else None)


def _iter_jsonl(text: str):
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line, parse_float=Fraction)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise MalformedRecord(line_no, "record is not a JSON object")
        yield line_no, raw


def _iter_csv(text: str):
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        # header is line 1
        line_no = reader.line_num
        if None in row:
            raise MalformedRecord(line_no, "too many fields")
        yield line_no, {k: v for k, v in row.items() if v is not None}


def load_manifest(source: IO | bytes | str, format: str = "jsonl") -> dict[str, list[Frame]]:
    """Parse a frame manifest into per-clip frame lists sorted by frame_index.

    ``source`` may be a binary/text stream or the raw bytes. Clips are
    returned in sorted clip_id order. Unknown keys are ignored.
    """
    if format not in MANIFEST_FORMATS:
        raise ValueError(f"unknown manifest format {format!r}")
    if hasattr(source, "read"):
        source = source.read()
    text = source.decode("utf-8") if isinstance(source, (bytes, bytearray)) else source

    rows = _iter_jsonl(text) if format == "jsonl" else _iter_csv(text)
    clips: dict[str, dict[int, Frame]] = {}
    for line_no, raw in rows:
        frame = _coerce_record(raw, line_no)
        group = clips.setdefault(frame.clip_id, {})
        if frame.frame_index in group:
            raise DuplicateFrame(frame.clip_id, frame.frame_index, line_no)
        group[frame.frame_index] = frame

    out: dict[str, list[Frame]] = {}
    for clip_id in sorted(clips):
        frames = [clips[clip_id][i] for i in sorted(clips[clip_id])]
        for prev, cur in zip(frames, frames[1:]):
            if cur.timestamp_s < prev.timestamp_s:
                raise NonMonotonicTimestamp(clip_id, cur.frame_index)
        out[clip_id] = frames
    return out


def dump_manifest(frames: Iterable[Frame]) -> str:
    """JSONL text for ``frames`` (inverse of :func:`load_manifest`)."""
    lines = []
    for f in frames:
        ts = f.timestamp_s
        lines.append(
            json.dumps(
                {
                    "clip_id": f.clip_id,
                    "frame_index": f.frame_index,
                    "timestamp_s": int(ts) if ts.denominator == 1 else float(ts),
                    "uri": f.uri,
                    "label": f.label,
                }
            )
        )
    return "".join(line + "\n" for line in lines)


# --------------------------------------------------------------------------
# windowing
# --------------------------------------------------------------------------


def clip_duration(clip: list[Frame]) -> Fraction:
    if not clip:
        return Fraction(0)
    return clip[-1].timestamp_s - clip[0].timestamp_s


def window_count(clip_duration_s, cfg: SamplingConfig) -> int:
    span = to_fraction(clip_duration_s) - cfg.window_duration_s
    if span < 0:
        return 0
    return int(span // cfg.stride_s) + 1


def _window_label(frames) -> str | None:
    labels = {f.label for f in frames}
    if "Anomaly" in labels:
        return "Anomaly"
    if "Normal" in labels:
        return "Normal"
    return None


def sample_windows(clip: list[Frame], cfg: SamplingConfig) -> list[Window]:
    """Cut one clip into full k-frame windows on the stride grid.

    Starts are offset from the first frame's timestamp. Each grid point
    ``start + j/fps`` snaps to the nearest frame (earlier frame on ties).
    A clip shorter than one window yields ``[]`` and a :class:`ClipTooShort`
    warning.
    """
    if not clip:
        return []
    origin = clip[0].timestamp_s
    last = clip[-1].timestamp_s
    if last - origin < cfg.window_duration_s:
        msg = (
            f"clip {clip[0].clip_id} lasts {float(last - origin)} s, "
            f"shorter than the {float(cfg.window_duration_s)} s window"
        )
        log.warning(msg)
        warnings.warn(msg, ClipTooShort, stacklevel=2)
        return []

    starts: list[Fraction] = []
    start = origin
    while start + cfg.window_duration_s <= last:
        starts.append(start)
        start = origin + len(starts) * cfg.stride_s
    if not starts:
        return []

    step = 1 / cfg.fps
    targets = np.array(
        [float(s + j * step) for s in starts for j in range(cfg.k)], dtype=np.float64
    )
    times = np.array([float(f.timestamp_s) for f in clip], dtype=np.float64)
    picks = kernels.nearest_indices(times, targets).reshape(len(starts), cfg.k)

    windows = []
    for w, (s, row) in enumerate(zip(starts, picks)):
        frames = tuple(clip[i] for i in row)
        windows.append(
            Window(
                clip_id=clip[0].clip_id,
                window_index=w,
                frames=frames,
                start_s=s,
                end_s=s + cfg.window_duration_s,
                label=_window_label(frames),
            )
        )
    return windows


def sample_manifest(clips: Mapping[str, list[Frame]], cfg: SamplingConfig) -> list[Window]:
    """Windows of every clip, clip by clip, never crossing clip boundaries."""
    out: list[Window] = []
    for clip_id in clips:
        out.extend(sample_windows(clips[clip_id], cfg))
    return out
