"""Scoring functions: token F1, rubric aggregation, judge parsing, fitness.

All functions are pure and total over their stated preconditions; every
score lies in [0, 1].
"""

from __future__ import annotations

import math
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import RubricCriterion

ARTICLES = frozenset({"a", "an", "the"})
_ASCII_PUNCT = frozenset(string.punctuation)


def _is_punctuation(ch: str) -> bool:
    # ASCII punctuation plus the general Unicode punctuation categories.
    return ch in _ASCII_PUNCT or unicodedata.category(ch).startswith("P")


def normalize_answer(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop whole-token articles, split."""
    lowered = text.lower()
    stripped = "".join(ch for ch in lowered if not _is_punctuation(ch))
    return [token for token in stripped.split() if token not in ARTICLES]


def token_f1(output: str, expected: str) -> float:
    """Multiset F1 over normalized tokens.

    Both token sets empty scores 1.0; exactly one empty scores 0.0.
    """
    out = Counter(normalize_answer(output))
    exp = Counter(normalize_answer(expected))
    if not out and not exp:
        return 1.0
    if not out or not exp:
        return 0.0
    overlap = sum((out & exp).values())
    return 2.0 * overlap / (sum(out.values()) + sum(exp.values()))


@dataclass(frozen=True)
class RubricGrade:
    criterion: RubricCriterion
    met: bool
    explanation: str = ""


def rubric_score(grades: Sequence[RubricGrade]) -> float:
    """clip(sum of met points / sum of positive points, 0, 1).

    Negative criteria never enter the denominator; met negative criteria
    subtract from the numerator.
    """
    positive_total = sum(g.criterion.points for g in grades if g.criterion.points > 0)
    if positive_total <= 0:
        raise ValueError("rubric needs at least one positive-point criterion")
    earned = sum(g.criterion.points for g in grades if g.met)
    return min(1.0, max(0.0, earned / positive_total))


def parse_judge_response(response: str) -> float:
    """1.0 iff the trimmed response parses as the integer 1, else 0.0."""
    try:
        return 1.0 if int(response.strip()) == 1 else 0.0
    except ValueError:
        return 0.0


def aggregate_fitness(case_scores: Iterable[float]) -> float:
    """Arithmetic mean of the per-case scores."""
    scores = list(case_scores)
    if not scores:
        raise ValueError("cannot aggregate an empty score list")
    return math.fsum(scores) / len(scores)
