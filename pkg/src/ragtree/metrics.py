"""Answer-correctness metrics: normalization, exact match, and token-level F1.

These score rollout completions during tree expansion and final answers
during evaluation. Normalization follows the open-domain QA convention:
lowercase, strip punctuation, strip articles, collapse whitespace. With
multiple gold answers both metrics take the max over golds.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Iterable, List, Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace. Idempotent."""
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _tokens(text: str) -> List[str]:
    return normalize_answer(text).split()


def _require_golds(gold_answers: Sequence[str]) -> None:
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")


def exact_match(prediction: str, gold_answers: Sequence[str]) -> float:
    """1.0 if the normalized prediction equals any normalized gold answer, else 0.0."""
    _require_golds(gold_answers)
    pred = normalize_answer(prediction)
    return 1.0 if any(pred == normalize_answer(g) for g in gold_answers) else 0.0


def _f1_single(prediction_tokens: List[str], gold_tokens: List[str]) -> float:
    if not prediction_tokens and not gold_tokens:
        return 1.0
    if not prediction_tokens or not gold_tokens:
        return 0.0
    common = Counter(prediction_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(prediction_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, gold_answers: Sequence[str]) -> float:
    """Max over gold answers of token-multiset F1 on normalized tokens."""
    _require_golds(gold_answers)
    pred_tokens = _tokens(prediction)
    return max(_f1_single(pred_tokens, _tokens(g)) for g in gold_answers)


METRICS = {"em": exact_match, "f1": f1_score}


def score_answer(metric: str, prediction: str, gold_answers: Iterable[str]) -> float:
    """Score ``prediction`` with the named metric ("em" or "f1")."""
    try:
        fn = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}")
    return fn(prediction, tuple(gold_answers))
