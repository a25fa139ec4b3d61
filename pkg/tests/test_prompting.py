import pytest
from hypothesis import given
from hypothesis import strategies as st

from semobs.errors import MissingContextKey, UnknownTier
from semobs.prompting import (
    BARE_WORD,
    DEFAULT_ANSWERS,
    XML_THINK_ANSWER,
    BudgetExceeded,
    ParsedVerdict,
    PromptSpec,
    build_prompt,
    enforce_budget,
    format_answer,
    parse_output,
    to_decision,
)

MINIMAL_SENTENCE = (
    "You are an autonomous vehicle. Analyze the scene and determine whether it violates "
    "normal driving expectations. Output only one word: 'Anomaly' or 'Normal'."
)

MINIMAL = build_prompt("Minimal")
VERBOSE = build_prompt("Verbose")


def test_minimal_prompt_is_the_one_sentence():
    assert MINIMAL.text == MINIMAL_SENTENCE
    assert MINIMAL.expected_format == BARE_WORD
    assert MINIMAL.max_new_tokens == 3


def test_verbose_prompt_requires_tags():
    assert VERBOSE.expected_format == XML_THINK_ANSWER
    assert "<think>" in VERBOSE.text and "<answer>" in VERBOSE.text
    assert "pothole" in VERBOSE.text.lower()
    assert "Context:" not in VERBOSE.text


def test_pruned_prompt_drops_rationale_and_keeps_context():
    pruned = build_prompt("Pruned", {"road": "urban"})
    assert "Context: road=urban" in pruned.text
    assert pruned.expected_format == XML_THINK_ANSWER
    assert len(pruned.text) < len(VERBOSE.text)
    verbose_lines = set(VERBOSE.text.splitlines())
    # pruned is a subset of verbose apart from the interpolated context line
    extra = [ln for ln in pruned.text.splitlines() if ln not in verbose_lines]
    assert extra == ["Context: road=urban"]


def test_template_hash_is_stable_and_distinct():
    assert build_prompt("Minimal").template_hash == MINIMAL.template_hash
    hashes = {build_prompt(t).template_hash for t in ("Verbose", "Pruned", "Minimal")}
    assert len(hashes) == 3


def test_unknown_tier():
    with pytest.raises(UnknownTier):
        build_prompt("Chatty")


def test_missing_context_key(tmp_path):
    (tmp_path / "verbose_v1.txt").write_text("Road is {road_type}. <answer>x</answer>")
    with pytest.raises(MissingContextKey):
        build_prompt("Verbose", {}, template_dir=tmp_path)
    spec = build_prompt("Verbose", {"road_type": "rural"}, template_dir=tmp_path)
    assert spec.text.startswith("Road is rural.")


def test_spec_invariants():
    with pytest.raises(ValueError):
        PromptSpec("Minimal", "x", 3, XML_THINK_ANSWER)
    with pytest.raises(ValueError):
        PromptSpec("Verbose", "x", 0, XML_THINK_ANSWER)
    with pytest.raises(ValueError):
        PromptSpec("Verbose", "", 5, XML_THINK_ANSWER)


def test_max_new_tokens_override():
    assert build_prompt("Minimal", max_new_tokens=8).max_new_tokens == 8


# ---------------------------------------------------------------- parsing


def test_parse_think_answer():
    v = parse_output("<think>pothole ahead</think><answer>Anomaly</answer>", VERBOSE)
    assert v == ParsedVerdict("Anomaly", "pothole ahead")
    assert v.violation == 1


def test_parse_bare_word():
    v = parse_output("Normal", MINIMAL)
    assert v.answer == "Normal" and v.violation == 0


def test_prose_is_unparseable():
    v = parse_output("The scene looks fine overall.", MINIMAL)
    assert v.answer == "Unparseable"
    assert v.think_text is None


def test_last_answer_wins():
    raw = "<answer>Normal</answer> wait <think>a</think><think>b</think><answer> anomaly </answer>"
    v = parse_output(raw, VERBOSE)
    assert v.answer == "Anomaly" and v.think_text == "b"


@pytest.mark.parametrize(
    "raw",
    ["", "<answer></answer>", "<answer>Maybe</answer>", "Anomaly", "<think>x</think>"],
)
def test_xml_unparseable(raw):
    assert parse_output(raw, VERBOSE).answer == "Unparseable"


@pytest.mark.parametrize("raw,answer", [("anomaly", "Anomaly"), (" Normal.\n", "Normal"),
                                        ("'Unknown'", "Unknown"), ("Normal Anomaly", "Unparseable")])
def test_bare_word_trimming(raw, answer):
    assert parse_output(raw, MINIMAL).answer == answer


@pytest.mark.parametrize("answer", sorted(DEFAULT_ANSWERS))
def test_answer_tag_round_trip(answer):
    assert parse_output(f"<answer>{answer}</answer>", VERBOSE).answer == answer
    for spec in (MINIMAL, VERBOSE):
        assert parse_output(format_answer(answer, spec), spec).answer == answer


@given(st.binary(max_size=200))
def test_parse_never_raises_on_bytes(data):
    text = data.decode("utf-8", errors="replace")
    for spec in (MINIMAL, VERBOSE):
        v = parse_output(text, spec)
        assert v.answer in DEFAULT_ANSWERS | {"Unparseable"}
        if v.answer == "Unparseable":
            assert v.think_text is None


@given(st.text(max_size=200))
def test_parse_never_raises_on_text(text):
    for spec in (MINIMAL, VERBOSE):
        v = parse_output(text, spec)
        assert (v.violation == 1) == (v.answer == "Anomaly")


def test_parse_non_string():
    assert parse_output(None, MINIMAL).answer == "Unparseable"


# ---------------------------------------------------------------- budget and decisions


def test_budget_examples():
    assert enforce_budget(MINIMAL, 3) == "ok"
    assert enforce_budget(MINIMAL, 7) == BudgetExceeded(4)
    assert enforce_budget(MINIMAL, 0) == "ok"
    with pytest.raises(ValueError):
        enforce_budget(MINIMAL, -1)


@pytest.mark.parametrize(
    "answer,z",
    [("Anomaly", 1), ("Normal", 0), ("Unknown", 0), ("Unparseable", 0)],
)
def test_to_decision(answer, z):
    assert to_decision(ParsedVerdict(answer)) == (z, answer)
