"""Prompt templates, token budgets and output parsing.

Templates live in ``semobs/templates`` as ``<tier>_v<N>.txt`` with ``{key}``
placeholders. ``{context_block}`` is special: it is filled with one
``Context: k=v; ...`` line built from the caller's context map (or nothing).
"""

from __future__ import annotations

import hashlib
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from semobs.errors import MissingContextKey, UnknownTier

TIERS = ("Verbose", "Pruned", "Minimal")
BARE_WORD = "bare_word"
XML_THINK_ANSWER = "xml_think_answer"
DEFAULT_ANSWERS = frozenset({"Anomaly", "Normal", "Unknown"})
TEMPLATE_VERSION = 1

# Minimal: three output tokens are enough for Anomaly/Normal/Unknown.
DEFAULT_MAX_NEW_TOKENS = {"Verbose": 256, "Pruned": 128, "Minimal": 3}
FORMATS = {"Verbose": XML_THINK_ANSWER, "Pruned": XML_THINK_ANSWER, "Minimal": BARE_WORD}

ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)
THINK_RE = re.compile(r"<think>(.*?)</think>", re.IGNORECASE | re.DOTALL)
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_STRIP = string.whitespace + string.punctuation + "‘’“”"


@dataclass(frozen=True)
class PromptSpec:
    tier: str
    text: str
    max_new_tokens: int
    expected_format: str
    allowed_answers: frozenset = DEFAULT_ANSWERS
    template_hash: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt text must be nonempty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.tier == "Minimal" and self.expected_format != BARE_WORD:
            raise ValueError("Minimal prompts expect a bare word")


@dataclass(frozen=True)
class ParsedVerdict:
    answer: str  # Anomaly | Normal | Unknown | Unparseable
    think_text: str | None = None
    tokens_generated: int = 0

    @property
    def violation(self) -> int:
        return 1 if self.answer == "Anomaly" else 0


@dataclass(frozen=True)
class BudgetExceeded:
    overshoot: int


@dataclass(frozen=True)
class Template:
    tier: str
    text: str
    sha256: str
    source: str = field(default="", compare=False)


def template_path(tier: str, version: int = TEMPLATE_VERSION):
    return resources.files("semobs") / "templates" / f"{tier.lower()}_v{version}.txt"


def load_template(tier: str, template_dir: str | Path | None = None) -> Template:
    if tier not in TIERS:
        raise UnknownTier(tier)
    if template_dir is None:
        ref = template_path(tier)
    else:
        ref = Path(template_dir) / f"{tier.lower()}_v{TEMPLATE_VERSION}.txt"
    data = ref.read_bytes()
    return Template(tier, data.decode("utf-8"), hashlib.sha256(data).hexdigest(), str(ref))


def _context_block(context: Mapping) -> str:
    if not context:
        return ""
    return "Context: " + "; ".join(f"{k}={context[k]}" for k in sorted(context))


def build_prompt(
    tier: str,
    context: Mapping | None = None,
    *,
    max_new_tokens: int | None = None,
    template_dir: str | Path | None = None,
) -> PromptSpec:
    context = dict(context or {})
    tpl = load_template(tier, template_dir)
    values = {"context_block": _context_block(context)}
    for _, name, _, _ in string.Formatter().parse(tpl.text):
        if name is None or name == "context_block":
            continue
        if name not in context:
            raise MissingContextKey(name)
        values[name] = context[name]
    text = tpl.text.format(**values)
    # drop the blank line left by an empty context block
    text = re.sub(r"\n{3,}", "\n\n", text).strip()
    return PromptSpec(
        tier=tier,
        text=text,
        max_new_tokens=max_new_tokens or DEFAULT_MAX_NEW_TOKENS[tier],
        expected_format=FORMATS[tier],
        template_hash=tpl.sha256,
    )


def _match_answer(candidate: str, allowed) -> str | None:
    word = candidate.strip(_STRIP).lower()
    for answer in allowed:
        if answer.lower() == word:
            return answer
    return None


def parse_output(raw: str, spec: PromptSpec, tokens_generated: int = 0) -> ParsedVerdict:
    """Map decoded model text onto a verdict. Never raises.

    XML mode takes the *last* ``<answer>`` span; bare-word mode needs the whole
    trimmed output to be one allowed answer. Everything else is Unparseable.
    """
    if not isinstance(raw, str):
        return ParsedVerdict("Unparseable", None, tokens_generated)
    if spec.expected_format == XML_THINK_ANSWER:
        spans = ANSWER_RE.findall(raw)
        if not spans:
            return ParsedVerdict("Unparseable", None, tokens_generated)
        answer = _match_answer(spans[-1], spec.allowed_answers)
        if answer is None:
            return ParsedVerdict("Unparseable", None, tokens_generated)
        thinks = THINK_RE.findall(raw)
        think = thinks[-1].strip() if thinks else None
        return ParsedVerdict(answer, think, tokens_generated)
    answer = _match_answer(raw, spec.allowed_answers)
    if answer is None:
        return ParsedVerdict("Unparseable", None, tokens_generated)
    return ParsedVerdict(answer, None, tokens_generated)


def enforce_budget(spec: PromptSpec, tokens_generated: int):
    """``"ok"`` or a :class:`BudgetExceeded` carrying the overshoot."""
    if tokens_generated < 0:
        raise ValueError("tokens_generated must be >= 0")
    over = tokens_generated - spec.max_new_tokens
    return "ok" if over <= 0 else BudgetExceeded(over)


def to_decision(verdict: ParsedVerdict) -> tuple[int, str]:
    """Binary trigger bit plus the decision class kept for metrics."""
    return (1 if verdict.answer == "Anomaly" else 0), verdict.answer


def format_answer(answer: str, spec: PromptSpec, think: str | None = None) -> str:
    """Render an answer the way a compliant model would for ``spec``."""
    if spec.expected_format == BARE_WORD:
        return answer
    if think is None:
        think = "hazard in lane" if answer == "Anomaly" else "no visible hazard"
    return f"<think>{think}</think><answer>{answer}</answer>"


def estimate_tokens(text: str) -> int:
    """Rough token count (word pieces and punctuation) for simulated backends."""
    return len(_TOKEN_RE.findall(text))
