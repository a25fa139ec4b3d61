from __future__ import annotations

from fractions import Fraction

import pytest

from semobs.backend import BackendResponse
from semobs.ingest import Frame, Window


def make_clip(n_frames, fps=1, clip_id="c0", labels=None):
    labels = labels or ["Normal"] * n_frames
    return [
        Frame(clip_id, i, Fraction(i, fps), f"{clip_id}/{i}.jpg", labels[i])
        for i in range(n_frames)
    ]


def make_windows(labels, clip_id="c0", stride=2, duration=5):
    """One window per label, on a 2 s stride grid with placeholder frames."""
    out = []
    for i, label in enumerate(labels):
        start = Fraction(i * stride)
        frames = tuple(
            Frame(clip_id, i * stride + j, start + j, None, label) for j in range(duration)
        )
        out.append(Window(clip_id, i, frames, start, start + duration, label))
    return out


class FixedBackend:
    """Answers every window with the same text after a fixed reported latency."""

    backend_id = "fixed"
    profile_id = None

    def __init__(self, text="Normal", latency_s=0.485, tokens=1):
        self.text = text
        self.latency_s = latency_s
        self.tokens = tokens
        self.calls = 0

    def infer(self, req):
        self.calls += 1
        return BackendResponse(self.text, self.tokens, self.latency_s, self.backend_id)


@pytest.fixture
def clip9():
    return make_clip(10)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
