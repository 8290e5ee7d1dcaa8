"""Deterministic textual rendering of solution states.

The rendered history fills the ``{iter_history}`` placeholder of the prompt
templates and is also the canonical chain text that SFT exports slice into
input/output segments, so the format is frozen: byte-identical output for
identical states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .types import Retrieved, SelfAnswer, State, Step


@dataclass(frozen=True)
class HistoryTemplate:
    """Format strings for each history block.

    ``doc_char_budget`` truncates each retrieved document's text before it is
    rendered into history; retrieval services return long passages and prompts
    need a bound.
    """

    question_block: str = "Question: {question}\n"
    step_header: str = "Sub-question {index}: {sub_question}\n"
    self_answer_block: str = "Answer: {answer}\n"
    sub_query_line: str = "Sub-query: {sub_query}\n"
    doc_block: str = 'Docs {doc_index}: "{title}"\n{text}\n'
    final_answer_block: str = "Final answer: {answer}\n"
    doc_char_budget: int = 1500


DEFAULT_TEMPLATE = HistoryTemplate()


def _render_step(template: HistoryTemplate, index: int, step: Step) -> Tuple[str, int]:
    """Render one step; returns (text, offset of the resolution's doc section).

    For retrieved steps the returned offset marks the end of the sub-query
    line within ``text`` (the point where the docs begin); for self-answered
    steps it equals len(text).
    """
    parts = [template.step_header.format(index=index, sub_question=step.sub_question)]
    res = step.resolution
    if isinstance(res, SelfAnswer):
        parts.append(template.self_answer_block.format(answer=res.answer))
        text = "".join(parts)
        return text, len(text)
    assert isinstance(res, Retrieved)
    parts.append(template.sub_query_line.format(sub_query=res.sub_query))
    pre_docs_len = sum(len(p) for p in parts)
    for j, doc in enumerate(res.documents, start=1):
        body = doc.text[: template.doc_char_budget]
        parts.append(template.doc_block.format(doc_index=j, title=doc.title, text=body))
    return "".join(parts), pre_docs_len


def serialize_state(state: State, template: HistoryTemplate = DEFAULT_TEMPLATE) -> str:
    """Render the step history (and final answer, if terminal) of a state."""
    parts = []
    for i, step in enumerate(state.steps, start=1):
        text, _ = _render_step(template, i, step)
        parts.append(text)
    if state.final_answer is not None:
        parts.append(template.final_answer_block.format(answer=state.final_answer))
    return "".join(parts)


def render_history(
    state: State,
    pending_sub_question: Optional[str] = None,
    template: HistoryTemplate = DEFAULT_TEMPLATE,
) -> str:
    """History text for prompts, optionally with a trailing unresolved sub-question.

    Rollouts launched from a sub-question candidate see the question posed but
    not yet resolved.
    """
    text = serialize_state(state, template)
    if pending_sub_question is not None:
        text += template.step_header.format(
            index=state.depth + 1, sub_question=pending_sub_question
        )
    return text


@dataclass(frozen=True)
class ChainMark:
    """Slice offsets for one step within a rendered chain."""

    step_index: int  # 1-based
    is_retrieval: bool
    start: int
    after_sub_query: int  # == end for self-answered steps
    end: int


def render_chain(
    state: State, template: HistoryTemplate = DEFAULT_TEMPLATE
) -> Tuple[str, List[ChainMark], int]:
    """Render a terminal chain with per-step slice marks.

    Returns (text, marks, final_block_start). The text is the question block,
    every step block, then the final-answer block; SFT segmentation slices it
    at the marks.
    """
    if state.final_answer is None:
        raise ValueError("render_chain requires a terminal state")
    parts = [template.question_block.format(question=state.question.text)]
    offset = len(parts[0])
    marks: List[ChainMark] = []
    for i, step in enumerate(state.steps, start=1):
        text, pre_docs = _render_step(template, i, step)
        marks.append(
            ChainMark(
                step_index=i,
                is_retrieval=isinstance(step.resolution, Retrieved),
                start=offset,
                after_sub_query=offset + pre_docs,
                end=offset + len(text),
            )
        )
        parts.append(text)
        offset += len(text)
    final_block_start = offset
    parts.append(template.final_answer_block.format(answer=state.final_answer))
    return "".join(parts), marks, final_block_start
