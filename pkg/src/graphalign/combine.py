"""Turn two alignment matrices into a one-to-one, mutually consistent matching.

The ensembled weights are restricted to each source's top-``r`` targets under
the learned plan, then an exact maximum-weight bipartite matching is taken.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import min_weight_full_bipartite_matching

from .errors import ParseError, RangeError, ShapeError

__all__ = [
    "WeightedBipartite",
    "MatchSet",
    "ensemble_weights",
    "build_bipartite",
    "max_weight_matching",
    "combine",
    "ranking_matrix",
    "save_matches",
    "load_matches",
    "DEFAULT_TOP_R",
]

DEFAULT_TOP_R = 10


@dataclass(frozen=True, eq=False)
class WeightedBipartite:
    """Sparse bipartite graph; ``edges`` is an ``(m, 3)`` array of ``(src, dst, w)``."""

    n1: int
    n2: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.array(self.edges, dtype=np.float64).reshape(-1, 3)
        if len(e):
            w = e[:, 2]
            if not np.all(np.isfinite(w)) or (w < 0).any():
                raise ValueError("edge weights must be finite and non-negative")
            src, dst = e[:, 0], e[:, 1]
            if src.min() < 0 or src.max() >= self.n1 or dst.min() < 0 or dst.max() >= self.n2:
                raise RangeError("edge endpoint outside the bipartite graph")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def sources(self):
        return self.edges[:, 0].astype(np.int64)

    @property
    def targets(self):
        return self.edges[:, 1].astype(np.int64)

    @property
    def weights(self):
        return self.edges[:, 2]

    def dense(self):
        """Weight matrix with zeros for absent edges."""
        w = np.zeros((self.n1, self.n2))
        w[self.sources, self.targets] = self.weights
        return w


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Disjoint ``(source, target)`` pairs sorted by source."""

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        pairs = pairs[np.argsort(pairs[:, 0], kind="stable")]
        for col, side in ((0, "source"), (1, "target")):
            if len(np.unique(pairs[:, col])) != len(pairs):
                raise ValueError(f"match set repeats a {side} node")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def as_dict(self):
        return {int(s): int(t) for s, t in self.pairs}

    def unmatched(self, n1):
        """Number of sources in ``range(n1)`` without a partner."""
        return n1 - len(self.pairs)

    def indicator(self, n1, n2):
        m = np.zeros((n1, n2))
        m[self.pairs[:, 0], self.pairs[:, 1]] = 1.0
        return m


def ensemble_weights(t_wl, t_gw, mode="product"):
    """Element-wise product (both confident) or mean of two alignment matrices."""
    t_wl = np.asarray(t_wl, dtype=np.float64)
    t_gw = np.asarray(t_gw, dtype=np.float64)
    if t_wl.shape != t_gw.shape:
        raise ShapeError(f"alignment matrices differ in shape: {t_wl.shape} vs {t_gw.shape}")
    if mode == "product":
        g = t_wl * t_gw
    elif mode == "average":
        g = 0.5 * (t_wl + t_gw)
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    # clip rounding noise so weights are valid matching input
    return np.maximum(g, 0.0)


def top_r_targets(t_gw, r):
    """Indices of each row's ``r`` largest entries; ties go to the lower index."""
    t_gw = np.asarray(t_gw, dtype=np.float64)
    return np.argsort(-t_gw, axis=1, kind="stable")[:, :r]


def build_bipartite(weights, t_gw, r=DEFAULT_TOP_R) -> WeightedBipartite:
    """Keep, for every source, edges to its top-``r`` targets under ``t_gw``.

    ``r`` is capped at ``n2``. Edge weights come from ``weights``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    t_gw = np.asarray(t_gw, dtype=np.float64)
    if weights.shape != t_gw.shape:
        raise ShapeError("weight and plan matrices differ in shape")
    n1, n2 = weights.shape
    if r < 1:
        raise RangeError(f"top-r must be at least 1, got {r}")
    r = min(int(r), n2)
    cols = top_r_targets(t_gw, r)
    rows = np.repeat(np.arange(n1), r)
    cols = cols.ravel()
    edges = np.column_stack([rows, cols, weights[rows, cols]])
    return WeightedBipartite(n1, n2, edges)


def max_weight_matching(b: WeightedBipartite) -> MatchSet:
    """Exact maximum-weight matching on the edges of ``b``.

    Solved as a min-cost perfect matching on an augmented graph where each
    source can pair with its own dummy at cost 2, each target with its own
    dummy at cost 2, and a real edge costs ``2 - w / max(w)``. Every perfect
    matching there has ``n1 + n2`` edges, so minimising cost maximises the
    total real weight. Zero-weight edges are dropped; they never add value.
    """
    keep = b.weights > 0
    src, dst, w = b.sources[keep], b.targets[keep], b.weights[keep]
    # parallel edges: only the heaviest copy can matter
    order = np.lexsort((-w, dst, src))
    src, dst, w = src[order], dst[order], w[order]
    first = np.ones(len(w), dtype=bool)
    first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    src, dst, w = src[first], dst[first], w[first]
    if len(w) == 0:
        return MatchSet(np.zeros((0, 2), dtype=np.int64))
    n1, n2 = b.n1, b.n2
    cost = 2.0 - w / w.max()
    # left: sources 0..n1-1, target dummies n1..n1+n2-1
    # right: targets 0..n2-1, source dummies n2..n2+n1-1
    rows = np.concatenate([src, np.arange(n1), n1 + np.arange(n2), n1 + dst])
    cols = np.concatenate([dst, n2 + np.arange(n1), np.arange(n2), n2 + src])
    data = np.concatenate([cost, np.full(n1 + n2 + len(w), 2.0)])
    size = n1 + n2
    graph = sp.csr_matrix((data, (rows, cols)), shape=(size, size))
    _, right = min_weight_full_bipartite_matching(graph)
    matched = np.flatnonzero(right[:n1] < n2)
    return MatchSet(np.column_stack([matched, right[matched]]))


def combine(t_wl, t_gw, r=DEFAULT_TOP_R, mode="product") -> MatchSet:
    """Ensemble, prune to top-``r`` and solve the matching in one call."""
    weights = ensemble_weights(t_wl, t_gw, mode)
    return max_weight_matching(build_bipartite(weights, t_gw, r))


def ranking_matrix(weights, matches: MatchSet):
    """Score matrix that ranks each matched target first.

    The remaining targets keep the order given by ``weights``, so Hits@k for
    ``k > 1`` and MAP can be reported for a matching.
    """
    scores = np.array(weights, dtype=np.float64, copy=True)
    if len(matches):
        top = scores.max() + 1.0
        scores[matches.pairs[:, 0], matches.pairs[:, 1]] = top
    return scores


def save_matches(path, matches: MatchSet):
    with open(path, "w", encoding="utf-8") as fh:
        for s, t in matches.pairs:
            fh.write(f"{s}\t{t}\n")


def load_matches(path) -> MatchSet:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected 'src<TAB>dst'")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(path, lineno, "non-integer node id") from None
    return MatchSet(np.array(pairs, dtype=np.int64).reshape(-1, 2))
