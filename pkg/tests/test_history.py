"""State serialization: golden renderings, stability, and round-trip checks."""

from __future__ import annotations

from dataclasses import replace

from ragtree.history import (
    DEFAULT_TEMPLATE,
    render_chain,
    render_history,
    serialize_state,
)
from ragtree.types import Document, Question, Retrieved, SelfAnswer, State, Step

Q = Question(id="q", text="who wrote it?", gold_answers=("someone",))


def _retrieved_step() -> Step:
    return Step(
        "where was it published?",
        Retrieved(
            "publication venue",
            (
                Document(title="venues", text="it appeared in a small journal", score=2.0),
                Document(title="authors", text="the author list is disputed", score=1.0),
            ),
        ),
    )


def test_empty_state_renders_empty():
    assert serialize_state(State(Q)) == ""


def test_self_answer_step_golden():
    state = State(Q, (Step("who is the author?", SelfAnswer("a recluse")),))
    assert serialize_state(state) == (
        "Sub-question 1: who is the author?\n"
        "Answer: a recluse\n"
    )


def test_retrieved_step_golden():
    state = State(Q, (_retrieved_step(),))
    assert serialize_state(state) == (
        "Sub-question 1: where was it published?\n"
        "Sub-query: publication venue\n"
        'Docs 1: "venues"\nit appeared in a small journal\n'
        'Docs 2: "authors"\nthe author list is disputed\n'
    )


def test_terminal_state_appends_final_answer():
    state = State(Q, (Step("who is the author?", SelfAnswer("a recluse")),), "a recluse")
    rendered = serialize_state(state)
    assert rendered.endswith("Final answer: a recluse\n")
    assert rendered.startswith("Sub-question 1:")


def test_render_is_deterministic():
    state = State(Q, (_retrieved_step(), Step("q2", SelfAnswer("w2"))), "done")
    assert serialize_state(state) == serialize_state(state)


def test_pending_sub_question_renders_dangling_header():
    state = State(Q, (Step("first?", SelfAnswer("yes")),))
    rendered = render_history(state, pending_sub_question="second?")
    assert rendered.endswith("Sub-question 2: second?\n")
    assert "Answer: yes\n" in rendered


def test_doc_truncation_budget():
    template = replace(DEFAULT_TEMPLATE, doc_char_budget=5)
    state = State(
        Q, (Step("q?", Retrieved("e", (Document(title="t", text="0123456789", score=0.0),))),)
    )
    rendered = serialize_state(state, template)
    assert "01234" in rendered
    assert "012345" not in rendered


def test_distinct_states_render_distinct_text():
    # Injectivity over engine-produced shapes: differing content anywhere shows
    # up in the rendering.
    base = State(Q, (_retrieved_step(),), "done")
    variants = [
        State(Q, (Step("other?", base.steps[0].resolution),), "done"),
        State(Q, (Step(base.steps[0].sub_question, SelfAnswer("answered instead")),), "done"),
        State(Q, (_retrieved_step(),), "different answer"),
        State(Q, (), "done"),
    ]
    renderings = {serialize_state(s) for s in [base, *variants]}
    assert len(renderings) == len(variants) + 1


def test_render_chain_marks_slice_cleanly():
    state = State(Q, (_retrieved_step(), Step("q2", SelfAnswer("w2"))), "done")
    text, marks, final_start = render_chain(state)
    assert text.startswith("Question: who wrote it?\n")
    assert len(marks) == 2
    retrieval = marks[0]
    assert retrieval.is_retrieval
    # after_sub_query lands right before the docs block
    assert text[retrieval.after_sub_query :].startswith('Docs 1: "venues"')
    assert text[retrieval.start : retrieval.after_sub_query] == (
        "Sub-question 1: where was it published?\nSub-query: publication venue\n"
    )
    assert text[final_start:] == "Final answer: done\n"
    # Marks tile the step region exactly.
    assert marks[0].end == marks[1].start
    assert marks[1].end == final_start
