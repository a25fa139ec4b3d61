"""Observer loop: scheduling, watchdog, latency accounting and debounce.

The loop runs against one of two clocks. ``simulated`` advances a virtual
clock by the latencies the backend reports (deterministic, used by tests and
``simulate``); ``wall`` sleeps in real time and can abandon a late backend
call at its deadline.

Windows arrive either on their stream timeline (``schedule="stream"``: a
window becomes available when its last frame has been captured) or one per
observer cycle (``schedule="tick"``). The observer polls at ``rate_hz`` and
always takes the newest available window; older unprocessed ones are dropped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

from semobs.backend import Backend, BackendRequest, BackendResponse
from semobs.errors import (
    BackendUnavailable,
    InvalidConfig,
    MalformedResponse,
    NegativeComponent,
    TransportError,
)
from semobs.ingest import DEFAULT_SAMPLING, SamplingConfig, Window, to_fraction
from semobs.prompting import (
    TIERS,
    BudgetExceeded,
    ParsedVerdict,
    PromptSpec,
    build_prompt,
    enforce_budget,
    parse_output,
    to_decision,
)

log = logging.getLogger(__name__)

NOMINAL = "NOMINAL"
CANDIDATE = "CANDIDATE"
TRIGGERED = "TRIGGERED"
HANDOFF_ACKED = "HANDOFF_ACKED"

TIMED_OUT = "TimedOut"
CLOCKS = ("simulated", "wall")
SCHEDULES = ("stream", "tick")


@dataclass(frozen=True)
class LatencyBreakdown:
    sense_s: Fraction
    preprocess_s: Fraction
    infer_s: Fraction
    post_s: Fraction
    total_s: Fraction

    def as_floats(self) -> dict:
        return {
            "sense_s": float(self.sense_s),
            "preprocess_s": float(self.preprocess_s),
            "infer_s": float(self.infer_s),
            "post_s": float(self.post_s),
            "total_s": float(self.total_s),
        }


def account_latency(sense_s, preprocess_s, infer_s, post_s) -> LatencyBreakdown:
    """Exact end-to-end latency: sense + preprocess + infer + post."""
    parts = [to_fraction(v) for v in (sense_s, preprocess_s, infer_s, post_s)]
    for name, v in zip(("sense_s", "preprocess_s", "infer_s", "post_s"), parts):
        if v < 0:
            raise NegativeComponent(f"{name}={float(v)} is negative")
    return LatencyBreakdown(*parts, total_s=sum(parts, Fraction(0)))


@dataclass(frozen=True)
class ObserverDecision:
    window: Window
    decision_class: str
    z: int
    latency: LatencyBreakdown
    deadline_violated: bool
    verdict: ParsedVerdict | None = None
    response: BackendResponse | None = None
    decided_at_s: Fraction | float = 0
    budget_overshoot: int = 0

    def __post_init__(self):
        if self.decision_class == TIMED_OUT and (self.z != 0 or not self.deadline_violated):
            raise ValueError("TimedOut decisions must have z=0 and deadline_violated")
        if self.z == 1 and self.decision_class != "Anomaly":
            raise ValueError("z=1 requires decision_class Anomaly")

    @property
    def explanation(self) -> str:
        if self.verdict is not None and self.verdict.think_text:
            return self.verdict.think_text
        return self.response.raw_text if self.response is not None else ""


@dataclass(frozen=True)
class HandoffEvent:
    trigger_time_s: Fraction | float
    windows: tuple[str, ...]
    explanation_texts: tuple[str, ...]
    latency_of_last: LatencyBreakdown


@dataclass(frozen=True)
class DebounceState:
    n_min: int
    consecutive_positives: int = 0
    phase: str = NOMINAL
    run: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.n_min < 1:
            raise ValueError("n_min must be positive")


def step(state: DebounceState, decision: ObserverDecision):
    """Advance the debounce machine by one decision.

    Returns ``(new_state, event_or_None)``. TRIGGERED and HANDOFF_ACKED absorb
    every decision until :func:`reset`.
    """
    if state.phase in (TRIGGERED, HANDOFF_ACKED):
        return state, None
    if decision.z != 1:
        return DebounceState(state.n_min), None
    count = state.consecutive_positives + 1
    run = (state.run + (decision,))[-state.n_min :]
    if count < state.n_min:
        return DebounceState(state.n_min, count, CANDIDATE, run), None
    event = HandoffEvent(
        trigger_time_s=decision.decided_at_s,
        windows=tuple(d.window.window_id for d in run),
        explanation_texts=tuple(d.explanation for d in run),
        latency_of_last=decision.latency,
    )
    return DebounceState(state.n_min, count, TRIGGERED, run), event


def acknowledge(state: DebounceState) -> DebounceState:
    """Fail-safe stack confirmed the handoff."""
    if state.phase != TRIGGERED:
        raise ValueError(f"cannot acknowledge from {state.phase}")
    return replace(state, phase=HANDOFF_ACKED)


def reset(state: DebounceState) -> DebounceState:
    return DebounceState(state.n_min)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObserverConfig:
    rate_hz: Fraction = Fraction(2)
    deadline_s: Fraction = Fraction(1)
    n_min: int = 2
    sampling: SamplingConfig = DEFAULT_SAMPLING
    tier: str = "Minimal"
    max_new_tokens: int | None = None
    context: Mapping = field(default_factory=dict)
    backend: str = "stochastic"
    profile: str | None = "bf16_video"
    endpoint: str | None = None
    seed: int = 0
    clock: str = "simulated"
    schedule: str = "stream"
    sense_s: Fraction = Fraction(0)
    preprocess_s: Fraction = Fraction(2, 100)
    post_s: Fraction = Fraction(5, 1000)
    max_retries: int = 2
    backoff_s: Fraction = Fraction(5, 100)

    def __post_init__(self):
        for name in ("rate_hz", "deadline_s", "sense_s", "preprocess_s", "post_s", "backoff_s"):
            object.__setattr__(self, name, to_fraction(getattr(self, name)))
        if self.rate_hz <= 0 or self.deadline_s <= 0:
            raise InvalidConfig("rate_hz and deadline_s must be positive")
        if self.n_min < 1:
            raise InvalidConfig("n_min must be a positive integer")
        if self.tier not in TIERS:
            raise InvalidConfig(f"unknown tier {self.tier!r}")
        if self.clock not in CLOCKS:
            raise InvalidConfig(f"clock must be one of {CLOCKS}")
        if self.schedule not in SCHEDULES:
            raise InvalidConfig(f"schedule must be one of {SCHEDULES}")
        if self.backend not in ("stochastic", "replay", "remote"):
            raise InvalidConfig(f"unknown backend {self.backend!r}")
        if min(self.sense_s, self.preprocess_s, self.post_s, self.backoff_s) < 0:
            raise InvalidConfig("timing components must be nonnegative")
        if self.max_retries < 0:
            raise InvalidConfig("max_retries must be >= 0")

    @property
    def period_s(self) -> Fraction:
        return 1 / self.rate_hz

    @classmethod
    def from_dict(cls, data: Mapping) -> "ObserverConfig":
        data = dict(data)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        if "sampling" in data and not isinstance(data["sampling"], SamplingConfig):
            data["sampling"] = SamplingConfig.create(**data["sampling"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if isinstance(v, Fraction):
                v = float(v)
            elif isinstance(v, SamplingConfig):
                v = v.to_dict()
            elif isinstance(v, Mapping):
                v = dict(v)
            out[name] = v
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunStats:
    clock: str
    windows_seen: int = 0
    processed: int = 0
    dropped: list = field(default_factory=list)
    timeouts: int = 0
    deadline_violations: int = 0
    hazardous_latency_events: int = 0
    budget_exceeded: int = 0
    retries: int = 0
    handoffs: int = 0
    mean_total_s: float | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dropped"] = list(self.dropped)
        return d


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------


def arrival_times(windows: Sequence[Window], cfg: ObserverConfig) -> list[Fraction]:
    """When each window becomes available to the observer, from run start.

    Stream schedule: at the window's end time on its clip timeline; clips are
    laid end to end in stream order. Tick schedule: window ``i`` at ``i/rate_hz``.
    """
    if cfg.schedule == "tick":
        return [i * cfg.period_s for i in range(len(windows))]
    out: list[Fraction] = []
    offset = Fraction(0)
    clip = None
    origin = Fraction(0)
    for w in windows:
        if w.clip_id != clip:
            if out:
                offset = out[-1]
            clip, origin = w.clip_id, w.start_s
        t = offset + (w.end_s - origin)
        out.append(max(t, out[-1]) if out else t)
    return out


class _SimClock:
    def __init__(self):
        self.t = Fraction(0)

    def now(self):
        return self.t

    def wait_until(self, t):
        self.t = max(self.t, t)

    def advance(self, dt):
        self.t += dt


class _WallClock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def now(self):
        return to_fraction(time.perf_counter() - self.t0)

    def wait_until(self, t):
        delay = float(t) - (time.perf_counter() - self.t0)
        if delay > 0:
            time.sleep(delay)

    def advance(self, dt):
        pass


class _Cycle:
    """Runs one backend call under the watchdog for either clock."""

    def __init__(self, cfg: ObserverConfig, backend: Backend, prompt: PromptSpec, stats: RunStats):
        self.cfg = cfg
        self.backend = backend
        self.prompt = prompt
        self.stats = stats
        self.pool = ThreadPoolExecutor(max_workers=4) if cfg.clock == "wall" else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown(wait=False, cancel_futures=True)

    def run(self, window: Window) -> tuple[BackendResponse | None, Fraction, Fraction]:
        """Returns ``(response or None if timed out, preprocess_s, infer_s)``."""
        cfg = self.cfg
        wall = cfg.clock == "wall"
        t_pre = time.perf_counter()
        req = BackendRequest(window, self.prompt, float(cfg.deadline_s))
        pre = to_fraction(time.perf_counter() - t_pre) if wall else cfg.preprocess_s
        budget = cfg.deadline_s - cfg.sense_s - pre
        spent = Fraction(0)
        attempt = 0
        while True:
            t_call = time.perf_counter()
            try:
                if wall:
                    remaining = float(budget - spent)
                    if remaining <= 0:
                        return None, pre, spent
                    fut = self.pool.submit(self.backend.infer, req)
                    try:
                        resp = fut.result(timeout=remaining)
                    except FutureTimeout:
                        fut.cancel()
                        return None, pre, spent + to_fraction(time.perf_counter() - t_call)
                    return resp, pre, spent + to_fraction(time.perf_counter() - t_call)
                resp = self.backend.infer(req)
                infer = spent + to_fraction(resp.infer_s)
                if infer > budget:
                    return None, pre, infer
                return resp, pre, infer
            except (BackendUnavailable, TransportError, MalformedResponse) as exc:
                if wall:
                    spent += to_fraction(time.perf_counter() - t_call)
                attempt += 1
                if attempt > cfg.max_retries:
                    raise
                delay = cfg.backoff_s * 2 ** (attempt - 1)
                if exc.retryable and spent + delay >= budget:
                    # deadline passes while backing off
                    return None, pre, max(spent + delay, budget)
                self.stats.retries += 1
                log.debug("retry %d after %s", attempt, exc)
                if wall:
                    time.sleep(float(delay))
                spent += delay


def run_observer(
    windows: Sequence[Window],
    cfg: ObserverConfig,
    backend: Backend,
    prompt: PromptSpec | None = None,
    state: DebounceState | None = None,
):
    """Run the observer over a window stream.

    Returns ``(decisions, events, stats)``. The debounce machine latches in
    TRIGGERED once a handoff fires; pass a fresh ``state`` (or none) per
    episode.
    """
    if prompt is None:
        prompt = build_prompt(cfg.tier, cfg.context, max_new_tokens=cfg.max_new_tokens)
    if cfg.deadline_s > cfg.period_s:
        log.warning(
            "deadline %.3fs exceeds the %.3fs observer period; late windows are dropped",
            float(cfg.deadline_s),
            float(cfg.period_s),
        )
    state = state or DebounceState(cfg.n_min)
    stats = RunStats(clock=cfg.clock, windows_seen=len(windows))
    clock = _SimClock() if cfg.clock == "simulated" else _WallClock()
    cycle = _Cycle(cfg, backend, prompt, stats)
    arrivals = arrival_times(windows, cfg)
    period = cfg.period_s

    decisions: list[ObserverDecision] = []
    events: list[HandoffEvent] = []
    i = 0
    n = len(windows)
    free_at = Fraction(0)  # when the previous cycle finished
    try:
        while i < n:
            ready = max(free_at, arrivals[i])
            tick = math.ceil(ready / period) * period
            clock.wait_until(tick)
            start = clock.now()
            j = i
            while j + 1 < n and arrivals[j + 1] <= start:
                j += 1
            stats.dropped.extend(windows[d].window_id for d in range(i, j))
            window = windows[j]
            i = j + 1

            resp, pre, infer = cycle.run(window)
            sense = cfg.sense_s
            if resp is None:
                latency = account_latency(sense, pre, infer, 0)
                clock.advance(cfg.deadline_s)
                decision = ObserverDecision(
                    window, TIMED_OUT, 0, latency, True, decided_at_s=clock.now()
                )
                stats.timeouts += 1
            else:
                t_post = time.perf_counter()
                verdict = parse_output(resp.raw_text, prompt, resp.tokens_generated)
                z, klass = to_decision(verdict)
                budget = enforce_budget(prompt, resp.tokens_generated)
                post = to_fraction(time.perf_counter() - t_post) if cfg.clock == "wall" else cfg.post_s
                latency = account_latency(sense, pre, infer, post)
                clock.advance(latency.total_s)
                decision = ObserverDecision(
                    window,
                    klass,
                    z,
                    latency,
                    latency.total_s > cfg.deadline_s,
                    verdict=verdict,
                    response=resp,
                    decided_at_s=clock.now(),
                    budget_overshoot=budget.overshoot if isinstance(budget, BudgetExceeded) else 0,
                )
                if decision.budget_overshoot:
                    stats.budget_exceeded += 1
            decisions.append(decision)
            free_at = clock.now()
            if decision.deadline_violated:
                stats.deadline_violations += 1
            state, event = step(state, decision)
            if event is not None:
                events.append(event)
    finally:
        cycle.close()

    stats.processed = len(decisions)
    stats.hazardous_latency_events = stats.timeouts
    stats.handoffs = len(events)
    if decisions:
        stats.mean_total_s = float(sum(d.latency.total_s for d in decisions) / len(decisions))
    return decisions, events, stats
