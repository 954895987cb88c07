"""Span-level exact-match evaluation (conlleval semantics) and prediction.

A predicted span counts as a match iff a gold span in the same sentence has
the same category, start and end.  Micro-averaged P/R/F1 with a per-category
breakdown; zero denominators score 0 rather than NaN.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus, EntitySpan, decode_bio


def _prf(matches: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = matches / predicted if predicted else 0.0
    r = matches / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass(frozen=True)
class EvalResult:
    """Micro and per-category exact-match span scores."""

    precision: float
    recall: float
    f1: float
    gold_count: int
    predicted_count: int
    match_count: int
    per_category: dict[str, tuple[float, float, float]]
    category_counts: dict[str, tuple[int, int, int]]  # matches, predicted, gold

    def __post_init__(self):
        if self.match_count > min(self.gold_count, self.predicted_count):
            raise ValueError("more matches than spans")


def span_f1(predicted: Sequence[Iterable[EntitySpan]],
            gold: Sequence[Iterable[EntitySpan]]) -> EvalResult:
    """Score predicted span sets against gold span sets, sentence-aligned."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted sentences vs {len(gold)} gold")
    counts: dict[str, list[int]] = {}  # category -> [matches, predicted, gold]
    for pred_spans, gold_spans in zip(predicted, gold):
        pset, gset = set(pred_spans), set(gold_spans)
        for span in pset:
            c = counts.setdefault(span.category, [0, 0, 0])
            c[1] += 1
            if span in gset:
                c[0] += 1
        for span in gset:
            counts.setdefault(span.category, [0, 0, 0])[2] += 1
    matches = sum(c[0] for c in counts.values())
    n_pred = sum(c[1] for c in counts.values())
    n_gold = sum(c[2] for c in counts.values())
    p, r, f = _prf(matches, n_pred, n_gold)
    ordered = dict(sorted(counts.items()))
    return EvalResult(
        p, r, f, n_gold, n_pred, matches,
        per_category={cat: _prf(*c) for cat, c in ordered.items()},
        category_counts={cat: tuple(c) for cat, c in ordered.items()})


def predict(model, sentences) -> list[list[EntitySpan]]:
    """Argmax-decode model distributions into spans per sentence.

    Ties break to the lowest tag index, so an exactly uniform distribution
    yields O.
    """
    token_seqs = [s.tokens for s in sentences]
    dists = model.sequence_distributions(token_seqs)
    scheme = model.scheme
    return [decode_bio(np.argmax(d, axis=1).tolist(), scheme) for d in dists]


def evaluate_model(model, corpus: Corpus) -> EvalResult:
    """Predict over a fully labelled corpus and score against its gold spans."""
    return span_f1(predict(model, corpus.sentences), corpus.gold_spans())
