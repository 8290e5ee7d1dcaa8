"""Deterministic scripted backends for benchmarks, demos, and offline tests.

The bench policy reproduces the regime the expansion-count closed forms
assume: candidates never collide after deduplication, termination votes never
win (unless configured), self-answer rollouts score below the skip threshold,
and every rollout runs its full horizon (``rollout_searches`` searches, then
an answer). Output is a pure function of the request, so identical seeds give
byte-identical trees.
"""

from __future__ import annotations

import re
from typing import Callable, Mapping, Optional, Union

from .policy import PolicyRequest, ScriptedPolicyBackend
from .retrieval import LexicalRetriever
from .templates import PolicyRole

GoldLookup = Union[Mapping[str, str], Callable[[str], Optional[str]]]

_QUESTION_RE = re.compile(r"### Question\n(.*?)\n\n### Previous Iteration", re.DOTALL)
_QUESTION_ONLY_RE = re.compile(r"### Question\n(.*?)\n\n### Your Output", re.DOTALL)
_STEP_HEADER_RE = re.compile(r"^Sub-question \d+:", re.MULTILINE)

# Small corpus for the lexical retriever; text avoids the history markers
# ("Answer:", "Sub-query:") the scripted rollout keys on.
BENCH_CORPUS = [
    ("alpha", "alpha is the first letter of the greek alphabet"),
    ("beta", "beta follows alpha in the greek alphabet"),
    ("gamma", "gamma follows beta in the greek alphabet"),
]


def make_bench_retriever() -> LexicalRetriever:
    return LexicalRetriever(BENCH_CORPUS)


def infer_role(prompt: str) -> PolicyRole:
    """Identify which template rendered a prompt (used by HTTP stub servers)."""
    if "sufficient evidence to answer the original question" in prompt:
        return PolicyRole.TERMINATION
    if "break it down and output the next sub-question" in prompt:
        return PolicyRole.SUB_QUESTION
    if "Generate the query directly" in prompt:
        return PolicyRole.SUB_QUERY
    if "continue reasoning along the previous iteration history" in prompt:
        return PolicyRole.ROLLOUT
    if "please answer this question" in prompt:
        return PolicyRole.SELF_ANSWER
    raise ValueError("prompt does not match any known template")


def _extract_question(prompt: str) -> Optional[str]:
    match = _QUESTION_RE.search(prompt) or _QUESTION_ONLY_RE.search(prompt)
    return match.group(1).strip() if match else None


def _history_steps(prompt: str) -> int:
    return len(_STEP_HEADER_RE.findall(prompt))


def _last_marker(prompt: str) -> str:
    """What the iteration history ends with: a resolution kind or a dangling sub-question."""
    positions = {
        "self_answer": prompt.rfind("\nAnswer: "),
        "sub_query": prompt.rfind("\nSub-query: "),
        "sub_question": max(
            (m.start() for m in _STEP_HEADER_RE.finditer(prompt)), default=-1
        ),
    }
    kind, position = max(positions.items(), key=lambda item: item[1])
    return kind if position >= 0 else "empty"


def make_bench_policy(
    gold: GoldLookup,
    rollout_searches: int = 3,
    terminate_after: Optional[int] = None,
    self_answer_rollouts_correct: bool = False,
) -> ScriptedPolicyBackend:
    """Scripted policy for counting benchmarks and end-to-end fixtures.

    ``gold`` maps question text to the answer the scripted rollouts should
    produce on branches meant to score well. ``terminate_after`` makes
    termination votes favor stopping once the history holds at least that many
    steps; ``None`` means the model never votes to stop.
    """

    if callable(gold):
        lookup = gold
    else:
        table = dict(gold)
        lookup = table.get

    def gold_for(prompt: str) -> str:
        question = _extract_question(prompt)
        answer = lookup(question) if question is not None else None
        return answer if answer is not None else "unknown"

    def termination(request: PolicyRequest) -> str:
        steps = _history_steps(request.prompt)
        finalizing = request.temperature == 0.0
        should_stop = terminate_after is not None and steps >= terminate_after
        if finalizing or should_stop:
            return (
                "<reasoning> the gathered evidence settles the question </reasoning> "
                f"<answer> {gold_for(request.prompt)} </answer>"
            )
        return (
            "<reasoning> the history is not yet sufficient </reasoning> "
            f"<question> what does probe {request.seed} establish? </question>"
        )

    def sub_question(request: PolicyRequest) -> str:
        return f"The next fact to pin down. <question> probe {request.seed} </question>"

    def self_answer(request: PolicyRequest) -> str:
        return f"Recalling what I know. <answer> guess {request.seed} </answer>"

    def sub_query(request: PolicyRequest) -> str:
        return f"lookup {request.seed}"

    def rollout(request: PolicyRequest) -> str:
        # The rollout template mentions the tags in prose; rendered blocks are
        # newline-delimited, so count those.
        searches_done = request.prompt.count("\n<information>\n")
        if searches_done < rollout_searches:
            return (
                f"<think> need more evidence, round {searches_done} </think> "
                f"<search> alpha probe {searches_done} </search>"
            )
        marker = _last_marker(request.prompt)
        if marker == "self_answer" and not self_answer_rollouts_correct:
            return "<think> the recalled answer does not hold up </think> <answer> offtrack </answer>"
        return f"<think> the evidence suffices </think> <answer> {gold_for(request.prompt)} </answer>"

    return ScriptedPolicyBackend(
        {
            PolicyRole.TERMINATION: termination,
            PolicyRole.SUB_QUESTION: sub_question,
            PolicyRole.SELF_ANSWER: self_answer,
            PolicyRole.SUB_QUERY: sub_query,
            PolicyRole.ROLLOUT: rollout,
        }
    )
