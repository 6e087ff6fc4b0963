import itertools

import pytest

from standsqa.abbrev import Detection
from standsqa.prompt import (
    FALCON_STYLE,
    OUTPUT_CUE,
    PHI2_STYLE,
    McqQuestion,
    build_falcon_prompt,
    build_phi2_prompt,
    render_abbrev_block,
)
from standsqa.retrieval import Context, ContextEntry

from conftest import GOLDENS_DIR


def golden_inputs():
    q = McqQuestion(
        question_id="golden-1",
        text="What does UE stand for in NR?",
        options=(
            "The radio device used by a subscriber",
            "A core network function",
            "A scheduling algorithm",
            "A modulation scheme",
        ),
        gold=0,
        category="Standards Overview",
    )
    detections = (
        Detection("UE", "User Equipment", (10, 12)),
        Detection("NR", None, (26, 28)),
    )
    contexts = Context(
        (
            ContextEntry(
                "doc1:s2:c0",
                "4.1 Terminology\nThe term UE denotes the equipment an end user carries.",
                "hash-a",
                0.91,
            ),
            ContextEntry(
                "doc2:s5:c1",
                "5.2 Radio interface\nThe radio interface connects terminals to the network.",
                "bm25",
                3.2,
            ),
        )
    )
    return q, detections, contexts


def test_phi2_prompt_matches_golden():
    q, detections, contexts = golden_inputs()
    prompt = build_phi2_prompt(q, list(q.options), detections, contexts)
    golden = (GOLDENS_DIR / "phi2_prompt.txt").read_text(encoding="utf-8")
    assert prompt.rendered + "\n" == golden
    assert prompt.style == PHI2_STYLE
    assert prompt.option_order == (0, 1, 2, 3)


def test_falcon_prompt_matches_golden():
    q, detections, contexts = golden_inputs()
    prompt = build_falcon_prompt(q, detections, contexts)
    golden = (GOLDENS_DIR / "falcon_prompt.txt").read_text(encoding="utf-8")
    assert prompt.rendered + "\n" == golden
    assert prompt.style == FALCON_STYLE


def test_phi2_contains_question_exactly_twice():
    q, detections, contexts = golden_inputs()
    prompt = build_phi2_prompt(q, list(q.options), detections, contexts)
    assert prompt.rendered.count(q.text) == 2


def test_falcon_contains_question_twice_and_no_options():
    q, detections, contexts = golden_inputs()
    prompt = build_falcon_prompt(q, detections, contexts)
    assert prompt.rendered.count(q.text) == 2
    assert not any(option in prompt.rendered for option in q.options)
    assert OUTPUT_CUE not in prompt.rendered


def test_phi2_ends_with_output_cue():
    q, detections, contexts = golden_inputs()
    prompt = build_phi2_prompt(q, list(q.options), detections, contexts)
    assert prompt.rendered.endswith(OUTPUT_CUE)


def test_abbrev_block_omitted_without_expansions():
    q, _, contexts = golden_inputs()
    unexpanded = (Detection("NR", None, (0, 2)),)
    prompt = build_phi2_prompt(q, list(q.options), unexpanded, contexts)
    assert "Abbreviations:" not in prompt.rendered


def test_context_header_kept_with_zero_contexts():
    q, detections, _ = golden_inputs()
    for prompt in (
        build_phi2_prompt(q, list(q.options), detections, None),
        build_falcon_prompt(q, detections, None),
    ):
        assert "Considering the following retrieved contexts" in prompt.rendered
        assert "context 1:" not in prompt.rendered


def test_rendering_is_deterministic():
    q, detections, contexts = golden_inputs()
    a = build_falcon_prompt(q, detections, contexts)
    b = build_falcon_prompt(q, detections, contexts)
    assert a.rendered == b.rendered


def test_shuffled_render_differs_only_in_option_block():
    q, detections, contexts = golden_inputs()
    identity = build_phi2_prompt(q, list(q.options), detections, contexts)
    order = (2, 0, 3, 1)
    shuffled = build_phi2_prompt(
        q, [q.options[j] for j in order], detections, contexts, option_order=order
    )
    # string-diff oracle: compare paragraph-wise; only the option block moves
    parts_a = identity.rendered.split("\n\n")
    parts_b = shuffled.rendered.split("\n\n")
    assert len(parts_a) == len(parts_b)
    differing = [i for i, (x, y) in enumerate(zip(parts_a, parts_b)) if x != y]
    assert len(differing) == 1
    assert parts_a[differing[0]].startswith("option 1:")


def test_distinct_permutations_render_distinct_prompts():
    q, detections, contexts = golden_inputs()
    seen = set()
    for order in itertools.permutations(range(4)):
        prompt = build_phi2_prompt(
            q, [q.options[j] for j in order], detections, contexts, option_order=order
        )
        seen.add(prompt.rendered)
    assert len(seen) == 24


def test_context_texts_appear_verbatim_in_order():
    q, detections, contexts = golden_inputs()
    prompt = build_phi2_prompt(q, list(q.options), detections, contexts)
    positions = [prompt.rendered.index(text) for text in contexts.texts]
    assert positions == sorted(positions)


def test_render_abbrev_block():
    assert render_abbrev_block([Detection("UE", "User Equipment", (0, 2))]) == "UE: User Equipment"
    assert render_abbrev_block([Detection("NR", None, (0, 2))]) == ""
    block = render_abbrev_block(
        [
            Detection("UE", "User Equipment", (0, 2)),
            Detection("NR", None, (3, 5)),
            Detection("RAN", "Radio Access Network", (6, 9)),
        ]
    )
    assert block.splitlines() == ["UE: User Equipment", "RAN: Radio Access Network"]


def test_phi2_rejects_non_permutation():
    q, detections, contexts = golden_inputs()
    with pytest.raises(ValueError):
        build_phi2_prompt(q, list(q.options)[:-1], detections, contexts)
    with pytest.raises(ValueError):
        build_phi2_prompt(q, ["x"] * 4, detections, contexts)
    with pytest.raises(ValueError):
        build_phi2_prompt(q, list(q.options), detections, contexts, option_order=(1, 0, 2, 3))


def test_phi2_rejects_empty_options():
    q, detections, contexts = golden_inputs()
    with pytest.raises(ValueError):
        build_phi2_prompt(q, [], detections, contexts)


def test_question_invariants():
    with pytest.raises(ValueError):
        McqQuestion("q", "text", ("only one",))
    with pytest.raises(ValueError):
        McqQuestion("q", "text", tuple(f"o{i}" for i in range(6)))
    with pytest.raises(ValueError):
        McqQuestion("q", "text", ("a", "b"), gold=2)
