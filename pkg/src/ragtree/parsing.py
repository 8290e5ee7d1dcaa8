"""Parsers for tagged model output.

Parsers never raise: every raw string maps to exactly one result, with
``None`` / the ``malformed`` kind standing in for unusable output. When a tag
appears several times the first well-formed (non-empty) occurrence wins,
matching greedy left-to-right generation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

_TAG_RES = {}


def _tag_re(tag: str) -> re.Pattern:
    if tag not in _TAG_RES:
        _TAG_RES[tag] = re.compile(rf"<{tag}>(.*?)</{tag}>", re.DOTALL)
    return _TAG_RES[tag]


def first_tag_content(raw: str, tag: str) -> Optional[str]:
    """First non-empty (after strip) ``<tag>...</tag>`` content, or None."""
    for match in _tag_re(tag).finditer(raw):
        content = match.group(1).strip()
        if content:
            return content
    return None


@dataclass(frozen=True)
class TerminationParse:
    kind: Literal["terminate", "continue", "malformed"]
    answer: Optional[str] = None
    sub_question: Optional[str] = None


def parse_termination(raw: str) -> TerminationParse:
    """Extract a final answer or a next sub-question from a termination-decision output."""
    answer = first_tag_content(raw, "answer")
    if answer is not None:
        return TerminationParse("terminate", answer=answer)
    sub_question = first_tag_content(raw, "question")
    if sub_question is not None:
        return TerminationParse("continue", sub_question=sub_question)
    return TerminationParse("malformed")


def parse_self_answer(raw: str) -> Optional[str]:
    """The ``<answer>`` content of a self-knowledge completion, or None if malformed."""
    return first_tag_content(raw, "answer")


def parse_sub_question(raw: str) -> Optional[str]:
    """The ``<question>`` content of a sub-question completion, or None if malformed."""
    return first_tag_content(raw, "question")


def parse_sub_query(raw: str) -> Optional[str]:
    """The whole trimmed output is the query; None iff empty."""
    query = raw.strip()
    return query or None


_ACTION_RE = re.compile(r"<(search|answer)>(.*?)</\1>", re.DOTALL)
_OPEN_ACTION_RE = re.compile(r"<(search|answer)>(?!.*</\1>)(.*)\Z", re.DOTALL)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)


def find_first_action(raw: str) -> Optional[Tuple[str, str, int]]:
    """First agent action in ``raw``: ("search"|"answer", content, end offset).

    Tolerates a trailing unclosed tag (the closing tag is a stop sequence and
    some servers strip it from the returned text).
    """
    for match in _ACTION_RE.finditer(raw):
        content = match.group(2).strip()
        if content:
            return match.group(1), content, match.end()
    open_match = _OPEN_ACTION_RE.search(raw)
    if open_match:
        content = open_match.group(2).strip()
        if content:
            return open_match.group(1), content, len(raw)
    return None


def think_blocks(raw: str) -> Tuple[str, ...]:
    """All non-empty ``<think>`` block contents, in order."""
    return tuple(m.group(1).strip() for m in _THINK_RE.finditer(raw) if m.group(1).strip())
