"""Backends answering ``infer(BackendRequest) -> BackendResponse``.

* :class:`ReplayBackend` returns recorded outputs from a prediction log.
* :class:`StochasticBackend` simulates a quantization profile from its
  confusion-matrix rates and mean latency.
* :class:`RemoteBackend` talks JSON over HTTP to a live inference server.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol

import numpy as np
import requests

from semobs.errors import (
    BackendUnavailable,
    InvalidConfig,
    MalformedResponse,
    MissingLabel,
    MissingRecord,
    TransportError,
)
from semobs.ingest import Window
from semobs.prompting import PromptSpec, estimate_tokens, format_answer

PROFILE_NAMES = ("BF16", "INT8", "NF4", "custom")
MODALITIES = ("static", "video")
DEFAULT_JITTER_FRACTION = 0.1


@dataclass(frozen=True)
class BackendRequest:
    window: Window
    prompt: PromptSpec
    deadline_s: float = 1.0

    def __post_init__(self):
        if self.deadline_s <= 0:
            raise ValueError("deadline_s must be positive")


@dataclass(frozen=True)
class BackendResponse:
    raw_text: str
    tokens_generated: int
    infer_s: float
    backend_id: str
    profile: str | None = None


class Backend(Protocol):
    backend_id: str
    profile_id: str | None

    def infer(self, req: BackendRequest) -> BackendResponse: ...


# --------------------------------------------------------------------------
# quantization profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantProfile:
    name: str
    modality: str
    tpr: float
    fpr: float
    unknown_rate: float
    mean_latency_s: float
    latency_jitter_s: float
    key: str = ""
    counts: tuple[int, int, int, int] | None = None  # tp, tn, fp, fn

    def __post_init__(self):
        if self.name not in PROFILE_NAMES:
            raise InvalidConfig(f"unknown profile name {self.name!r}")
        if self.modality not in MODALITIES:
            raise InvalidConfig(f"unknown modality {self.modality!r}")
        for attr in ("tpr", "fpr", "unknown_rate"):
            v = getattr(self, attr)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{attr}={v} outside [0, 1]")
        if self.tpr + self.unknown_rate > 1.0 + 1e-12:
            raise InvalidConfig("tpr + unknown_rate exceeds 1")
        if self.mean_latency_s <= 0 or self.latency_jitter_s < 0:
            raise InvalidConfig("latency parameters out of range")

    @classmethod
    def from_counts(
        cls,
        name: str,
        modality: str,
        tp: int,
        tn: int,
        fp: int,
        fn: int,
        mean_latency_s: float,
        latency_jitter_s: float | None = None,
        unknown_rate: float = 0.0,
        key: str = "",
    ) -> "QuantProfile":
        """Rates from a measured confusion matrix: TP/(TP+FN) and FP/(FP+TN)."""
        if min(tp, tn, fp, fn) < 0 or tp + fn == 0 or fp + tn == 0:
            raise InvalidConfig("counts must be nonnegative with both classes present")
        if latency_jitter_s is None:
            latency_jitter_s = DEFAULT_JITTER_FRACTION * mean_latency_s
        return cls(
            name=name,
            modality=modality,
            tpr=float(Fraction(tp, tp + fn)),
            fpr=float(Fraction(fp, fp + tn)),
            unknown_rate=float(unknown_rate),
            mean_latency_s=float(mean_latency_s),
            latency_jitter_s=float(latency_jitter_s),
            key=key or f"{name.lower()}_{modality}",
            counts=(tp, tn, fp, fn),
        )

    @classmethod
    def from_dict(cls, data: Mapping, key: str = "") -> "QuantProfile":
        jitter = data.get("latency_jitter_s")
        if all(c in data for c in ("tp", "tn", "fp", "fn")):
            return cls.from_counts(
                data["name"],
                data["modality"],
                int(data["tp"]),
                int(data["tn"]),
                int(data["fp"]),
                int(data["fn"]),
                mean_latency_s=data["mean_latency_s"],
                latency_jitter_s=jitter,
                unknown_rate=data.get("unknown_rate", 0.0),
                key=data.get("key", key),
            )
        mean = float(data["mean_latency_s"])
        counts = data.get("counts")
        return cls(
            name=data["name"],
            modality=data["modality"],
            tpr=float(data["tpr"]),
            fpr=float(data["fpr"]),
            unknown_rate=float(data.get("unknown_rate", 0.0)),
            mean_latency_s=mean,
            latency_jitter_s=DEFAULT_JITTER_FRACTION * mean if jitter is None else float(jitter),
            key=data.get("key", key) or f"{data['name'].lower()}_{data['modality']}",
            counts=tuple(int(c) for c in counts) if counts else None,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["counts"] = list(self.counts) if self.counts else None
        return out


def builtin_profiles() -> list[str]:
    root = resources.files("semobs") / "data" / "profiles"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_profile(ref: str | Path) -> QuantProfile:
    """Load a builtin profile by key (``bf16_video``) or a profile JSON file."""
    path = Path(ref)
    if path.suffix == ".json" and path.exists():
        return QuantProfile.from_dict(json.loads(path.read_text()), key=path.stem)
    key = str(ref).lower()
    res = resources.files("semobs") / "data" / "profiles" / f"{key}.json"
    if not res.is_file():
        raise InvalidConfig(
            f"unknown profile {ref!r}; builtins: {', '.join(builtin_profiles())}"
        )
    return QuantProfile.from_dict(json.loads(res.read_text()), key=key)


# --------------------------------------------------------------------------
# implementations
# --------------------------------------------------------------------------


class ReplayBackend:
    """Serves recorded ``raw_text``/``tokens_generated``/``infer_s`` verbatim."""

    backend_id = "replay"

    def __init__(self, records: Iterable[Mapping]):
        table = {}
        profile = None
        for rec in records:
            table[(rec["clip_id"], int(rec["window_index"]))] = (
                rec.get("raw_text", ""),
                int(rec.get("tokens_generated", 0)),
                float(rec.get("infer_s", 0.0)),
                rec.get("profile"),
            )
            profile = profile or rec.get("profile")
        self._table = table
        self.profile_id = profile

    def __len__(self):
        return len(self._table)

    def infer(self, req: BackendRequest) -> BackendResponse:
        key = (req.window.clip_id, req.window.window_index)
        try:
            raw, tokens, infer_s, profile = self._table[key]
        except KeyError:
            raise MissingRecord(*key) from None
        return BackendResponse(raw, tokens, infer_s, self.backend_id, profile)


def _clip_key(clip_id: str) -> int:
    return int.from_bytes(hashlib.sha256(clip_id.encode("utf-8")).digest()[:8], "little")


class StochasticBackend:
    """Draws verdicts and latencies from a :class:`QuantProfile`.

    Each window gets its own generator keyed by ``(seed, clip_id,
    window_index)``, so results do not depend on evaluation order.
    """

    def __init__(self, profile: QuantProfile, seed: int = 0):
        self.profile = profile
        self.seed = int(seed)
        self.profile_id = profile.key
        self.backend_id = f"stochastic:{profile.key}"

    def _rng(self, window: Window) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, _clip_key(window.clip_id), window.window_index])
        return np.random.default_rng(ss)

    def draw(self, window: Window) -> tuple[str, float]:
        """Answer word and raw latency for one window."""
        if window.label is None:
            raise MissingLabel(f"window {window.window_id} has no ground-truth label")
        p = self.profile
        u_answer, u_latency = self._rng(window).random(2)
        if window.label == "Anomaly":
            if u_answer < p.tpr:
                answer = "Anomaly"
            elif u_answer < p.tpr + p.unknown_rate:
                answer = "Unknown"
            else:
                answer = "Normal"
        else:
            answer = "Anomaly" if u_answer < p.fpr else "Normal"
        latency = p.mean_latency_s + (2.0 * u_latency - 1.0) * p.latency_jitter_s
        return answer, max(float(latency), 0.0)

    def infer(self, req: BackendRequest) -> BackendResponse:
        answer, latency = self.draw(req.window)
        text = format_answer(answer, req.prompt)
        tokens = min(estimate_tokens(text), req.prompt.max_new_tokens)
        return BackendResponse(text, tokens, latency, self.backend_id, self.profile_id)


class RemoteBackend:
    """HTTP client for ``POST {endpoint}/infer``.

    Connection failures, timeouts and 5xx map to :class:`BackendUnavailable`;
    other non-2xx and transport faults to :class:`TransportError`; a 2xx body
    that breaks the schema to :class:`MalformedResponse`.
    """

    def __init__(self, endpoint: str, timeout_s: float = 5.0, profile_id: str | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.profile_id = profile_id
        self.backend_id = f"remote:{self.endpoint}"

    def payload(self, req: BackendRequest) -> dict:
        return {
            "frames": [f.uri or "" for f in req.window.frames],
            "prompt": req.prompt.text,
            "max_new_tokens": req.prompt.max_new_tokens,
        }

    def infer(self, req: BackendRequest) -> BackendResponse:
        url = f"{self.endpoint}/infer"
        try:
            resp = requests.post(url, json=self.payload(req), timeout=self.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise BackendUnavailable(f"{url}: {exc}") from exc
        except requests.RequestException as exc:
            raise TransportError(f"{url}: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendUnavailable(f"{url}: HTTP {resp.status_code}")
        if not 200 <= resp.status_code < 300:
            raise TransportError(f"{url}: HTTP {resp.status_code}")
        return self.parse_body(resp.content)

    def parse_body(self, body: bytes) -> BackendResponse:
        try:
            data = json.loads(body)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedResponse(f"response is not JSON: {exc}") from None
        if not isinstance(data, dict):
            raise MalformedResponse("response is not a JSON object")
        text = data.get("text")
        tokens = data.get("tokens_generated")
        infer_ms = data.get("infer_ms")
        if not isinstance(text, str):
            raise MalformedResponse("missing or non-string 'text'")
        if isinstance(tokens, bool) or not isinstance(tokens, int) or tokens < 0:
            raise MalformedResponse("'tokens_generated' must be a nonnegative integer")
        if isinstance(infer_ms, bool) or not isinstance(infer_ms, (int, float)) or infer_ms < 0:
            raise MalformedResponse("'infer_ms' must be a nonnegative number")
        return BackendResponse(text, tokens, infer_ms / 1000.0, self.backend_id, self.profile_id)
