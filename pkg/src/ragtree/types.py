"""Core domain types for the decision/execution search process.

A solution state is the original question plus an ordered list of resolved
steps. Each step pairs a sub-question with its resolution: either an answer
drawn from the model's own knowledge, or a search-engine sub-query together
with the documents it retrieved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

TerminationChoice = Literal["terminate", "continue"]
RetrievalMode = Literal["self_knowledge", "retrieve"]


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: Tuple[str, ...]

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be non-empty")
        if not self.text:
            raise ValueError("question text must be non-empty")
        if not self.gold_answers:
            raise ValueError(f"question {self.id!r} has no gold answers")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))


@dataclass(frozen=True)
class Document:
    title: str
    text: str
    score: float = 0.0

    def __post_init__(self):
        if not self.text:
            raise ValueError("document text must be non-empty")


@dataclass(frozen=True)
class SelfAnswer:
    """A sub-question answered from the model's own knowledge."""

    answer: str

    def __post_init__(self):
        if not self.answer:
            raise ValueError("self-answer must be non-empty")


@dataclass(frozen=True)
class Retrieved:
    """A sub-question resolved by issuing a search-engine sub-query."""

    sub_query: str
    documents: Tuple[Document, ...] = ()

    def __post_init__(self):
        if not self.sub_query:
            raise ValueError("sub-query must be non-empty")
        object.__setattr__(self, "documents", tuple(self.documents))


Resolution = Union[SelfAnswer, Retrieved]


@dataclass(frozen=True)
class Step:
    sub_question: str
    resolution: Resolution

    def __post_init__(self):
        if not self.sub_question:
            raise ValueError("sub-question must be non-empty")


@dataclass(frozen=True)
class State:
    """A partial solution: the question plus the steps resolved so far.

    ``final_answer`` is set exactly when the state is terminal.
    """

    question: Question
    steps: Tuple[Step, ...] = ()
    final_answer: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def depth(self) -> int:
        return len(self.steps)

    @property
    def is_terminal(self) -> bool:
        return self.final_answer is not None

    def with_step(self, step: Step) -> "State":
        if self.is_terminal:
            raise ValueError("cannot extend a terminal state")
        return State(self.question, self.steps + (step,), None)

    def with_answer(self, answer: str) -> "State":
        if self.is_terminal:
            raise ValueError("state already terminal")
        return State(self.question, self.steps, answer)


@dataclass(frozen=True)
class Action:
    """A joint action: whether to stop, and if not, how to resolve the next step."""

    termination: TerminationChoice
    retrieval: Optional[RetrievalMode] = None

    def __post_init__(self):
        if self.termination == "continue" and self.retrieval is None:
            raise ValueError("continuing requires a retrieval mode")
        if self.termination == "terminate" and self.retrieval is not None:
            raise ValueError("terminating admits no retrieval mode")
