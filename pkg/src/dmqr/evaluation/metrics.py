"""Retrieval (H@K, P@K) and answer (EM, token F1) metrics."""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation and the articles a/an/the, collapse whitespace."""
    s = s.lower()
    s = s.translate(_PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_token(pred: str, golds: Sequence[str]) -> float:
    """Best token-level F1 of ``pred`` against any gold answer."""
    if not golds:
        return 0.0
    pred_tokens = normalize_answer(pred).split()
    return max(_f1(pred_tokens, normalize_answer(g).split()) for g in golds)


def hit_at_k(judgments: Sequence[bool]) -> int:
    """1 if any of the judged top-K documents is relevant."""
    return int(any(judgments))


def precision_at_k(judgments: Sequence[bool], k: int) -> float:
    """Relevant share of the top ``k`` slots; unfilled slots count as misses."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for j in judgments[:k] if j) / k
