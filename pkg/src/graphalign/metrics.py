"""Ranking accuracy and matching-property metrics.

Rows are ranked in descending order of score; equal scores are ordered by
target index, lowest first. The same rule picks the argmax of a row.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .combine import MatchSet, ranking_matrix
from .errors import RangeError
from .graph import GroundTruth

__all__ = [
    "MetricsReport",
    "hits_at_k",
    "mean_average_precision",
    "one_to_many_ratio",
    "mutual_inconsistency_ratio",
    "true_target_ranks",
    "row_argmax",
    "constrain_one_to_one",
    "evaluate",
]

DEFAULT_KS = (1, 5, 10)


def true_target_ranks(t, gt: GroundTruth):
    """1-based rank of each anchor's true target within its source row."""
    t = np.asarray(t, dtype=np.float64)
    src, dst = gt.pairs[:, 0], gt.pairs[:, 1]
    rows = t[src]
    score = rows[np.arange(len(src)), dst][:, None]
    cols = np.arange(t.shape[1])[None, :]
    ahead = (rows > score) | ((rows == score) & (cols < dst[:, None]))
    return 1 + ahead.sum(axis=1)


def hits_at_k(t, gt: GroundTruth, k=1):
    """Fraction of anchors whose true target is among the top ``k`` of its row.

    ``t`` is an alignment matrix or a :class:`MatchSet`; a match set only
    defines a rank-1 prediction, so it requires ``k == 1``.
    """
    if len(gt) == 0:
        raise ValueError("ground truth is empty")
    if isinstance(t, MatchSet):
        if k != 1:
            raise RangeError("a match set supports Hits@1 only")
        pred = t.as_dict()
        hit = sum(pred.get(int(s)) == int(d) for s, d in gt.pairs)
        return hit / len(gt)
    t = np.asarray(t)
    if k < 1 or k > t.shape[1]:
        raise RangeError(f"k={k} outside [1, {t.shape[1]}]")
    return float(np.mean(true_target_ranks(t, gt) <= k))


def mean_average_precision(t, gt: GroundTruth):
    """Mean reciprocal rank of the true target over all anchors."""
    if len(gt) == 0:
        raise ValueError("ground truth is empty")
    return float(np.mean(1.0 / true_target_ranks(t, gt)))


def row_argmax(t):
    """Argmax of each row, lowest index on ties; ``-1`` for all-zero rows."""
    t = np.asarray(t, dtype=np.float64)
    arg = np.argmax(t, axis=1)
    arg[~(t != 0).any(axis=1)] = -1
    return arg


def _source_rows(n1, sources):
    return np.arange(n1) if sources is None else np.unique(np.asarray(sources, dtype=np.int64))


def one_to_many_ratio(t, sources=None):
    """Fraction of sources whose argmax target is also another source's argmax.

    All source rows take part in the collision count; ``sources`` restricts
    the rows being scored (e.g. to anchored sources). Rows with no mass make
    no prediction and never count as a violation.
    """
    arg = row_argmax(t)
    rows = _source_rows(len(arg), sources)
    if len(rows) == 0:
        return 0.0
    predicted = arg[arg >= 0]
    counts = np.bincount(predicted, minlength=np.asarray(t).shape[1])
    mine = arg[rows]
    bad = (mine >= 0) & (counts[np.maximum(mine, 0)] > 1)
    return float(bad.mean())


def mutual_inconsistency_ratio(t, sources=None):
    """Fraction of sources ``u`` whose predicted target ``v`` prefers another source.

    ``v = argmax_y T(u, y)`` and the check is ``argmax_x T(x, v) != u``.
    """
    t = np.asarray(t, dtype=np.float64)
    arg = row_argmax(t)
    rows = _source_rows(len(arg), sources)
    if len(rows) == 0:
        return 0.0
    back = np.argmax(t, axis=0)
    mine = arg[rows]
    bad = (mine >= 0) & (back[np.maximum(mine, 0)] != rows)
    return float(bad.mean())


def constrain_one_to_one(t) -> MatchSet:
    """Resolve conflicting argmax predictions by keeping the strongest pair.

    Each source predicts its row argmax. When several sources predict the
    same target, only the one with the highest score keeps it (lowest source
    index on ties); the rest are left without a prediction.
    """
    t = np.asarray(t, dtype=np.float64)
    arg = row_argmax(t)
    best = {}
    for u, v in enumerate(arg):
        if v < 0:
            continue
        if v not in best or t[u, v] > t[best[v], v]:
            best[v] = u
    pairs = [(u, v) for v, u in best.items()]
    return MatchSet(np.array(pairs, dtype=np.int64).reshape(-1, 2))


@dataclass
class MetricsReport:
    """Accuracy and property-violation numbers for one prediction.

    ``to_json`` writes keys in this order: ``hits@k`` for each ``k`` in
    ascending order, then ``map``, ``one_to_many_ratio``,
    ``mutual_inconsistency_ratio``, ``unmatched``.
    """

    hits: dict = field(default_factory=dict)
    map_score: float = 0.0
    one_to_many_ratio: float = 0.0
    mutual_inconsistency_ratio: float = 0.0
    unmatched: int = 0

    def items(self):
        out = [(f"hits@{k}", self.hits[k]) for k in sorted(self.hits)]
        out += [
            ("map", self.map_score),
            ("one_to_many_ratio", self.one_to_many_ratio),
            ("mutual_inconsistency_ratio", self.mutual_inconsistency_ratio),
            ("unmatched", self.unmatched),
        ]
        return out

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def to_json(self):
        return json.dumps(dict(self.items()))


def evaluate(scores, gt: GroundTruth, matches: MatchSet | None = None, ks=DEFAULT_KS):
    """Score a prediction against anchors.

    Without ``matches`` every metric comes from the ranking in ``scores``.
    With ``matches``, Hits@1 is the match accuracy, ranks for larger ``k``
    and MAP put the matched target first and then follow ``scores``, and the
    violation ratios are taken on the match indicator matrix. Values of ``k``
    above the number of targets are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n1, n2 = scores.shape
    anchored = gt.pairs[:, 0]
    if matches is not None:
        ranked = ranking_matrix(scores, matches)
        property_matrix = matches.indicator(n1, n2)
        unmatched = matches.unmatched(n1)
    else:
        ranked = scores
        property_matrix = scores
        unmatched = 0
    hits = {}
    for k in ks:
        if k > n2:
            continue
        if k == 1 and matches is not None:
            hits[k] = hits_at_k(matches, gt, 1)
        else:
            hits[k] = hits_at_k(ranked, gt, k)
    return MetricsReport(
        hits=hits,
        map_score=mean_average_precision(ranked, gt),
        one_to_many_ratio=one_to_many_ratio(property_matrix, anchored),
        mutual_inconsistency_ratio=mutual_inconsistency_ratio(property_matrix, anchored),
        unmatched=unmatched,
    )
