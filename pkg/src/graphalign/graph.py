"""Undirected attributed graphs, their text formats and synthetic noisy copies.

Edge file: one ``src<TAB>dst`` pair of 0-based ids per line, ``#`` lines are
comments. Feature file: a ``n d_in`` header followed by ``n`` rows of ``d_in``
floats. Anchor file: one ``src<TAB>dst`` pair per line.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, RangeError, ShapeError

__all__ = [
    "Graph",
    "GroundTruth",
    "load_graph",
    "save_graph",
    "load_edges",
    "load_features",
    "save_edges",
    "save_features",
    "load_anchors",
    "save_anchors",
    "normalized_adjacency",
    "gen_synthetic_pair",
    "random_graph",
]


def _canonical_edges(edges, n):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = edges[(edges < 0).any(axis=1) | (edges >= n).any(axis=1)][0]
        raise RangeError(f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {n})")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    keep = lo != hi
    pairs = np.stack([lo[keep], hi[keep]], axis=1)
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(pairs, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """An undirected graph with dense node features.

    Edges are stored once each as ``(i, j)`` with ``i < j``, sorted
    lexicographically; self-loops are dropped since the propagation operator
    adds them back explicitly.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 0:
            raise ShapeError("node count must be non-negative")
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim == 1:
            feats = feats.reshape(n, -1) if n else feats.reshape(0, 0)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ShapeError(f"feature matrix has {feats.shape[0]} rows, expected {n}")
        edges = _canonical_edges(self.edges, n)
        edges.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", feats)

    @property
    def m(self):
        return len(self.edges)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency in CSR form."""
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def propagation(self) -> sp.csr_matrix:
        """``D^-1/2 (A + I) D^-1/2`` as a sparse matrix."""
        a_tilde = self.adjacency + sp.identity(self.n, format="csr")
        deg = np.asarray(a_tilde.sum(axis=1)).ravel()
        scale = sp.diags(1.0 / np.sqrt(deg))
        return sp.csr_matrix(scale @ a_tilde @ scale)

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def permuted(self, perm):
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        feats = np.empty_like(self.features)
        feats[perm] = self.features
        return Graph(self.n, perm[self.edges], feats)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """One-to-one anchor pairs ``(source, target)``."""

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        for col, side in ((0, "source"), (1, "target")):
            if len(np.unique(pairs[:, col])) != len(pairs):
                raise ValueError(f"ground truth repeats a {side} node")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n)
        return cls(np.stack([idx, idx], axis=1))

    @classmethod
    def from_permutation(cls, perm):
        perm = np.asarray(perm)
        return cls(np.stack([np.arange(len(perm)), perm], axis=1))


def _read_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected two ids, got {len(parts)} fields")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(path, lineno, f"non-integer node id in {text!r}") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def load_edges(path):
    return _read_pairs(path)


def load_features(path):
    """Read a feature (or dense matrix) file into an ``n x d`` array."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ParseError(path, 1, "header must be 'n d_in'")
        try:
            n, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(path, 1, "header must hold two integers") from None
        rows = []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != d:
                raise ParseError(path, lineno, f"expected {d} values, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise ParseError(path, lineno, "non-numeric feature value") from None
    if len(rows) != n:
        raise ShapeError(f"{path}: header declares {n} rows, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(n, d)


def load_graph(edge_path, feature_path) -> Graph:
    feats = load_features(feature_path)
    edges = load_edges(edge_path)
    n = feats.shape[0]
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise RangeError(f"{edge_path}: node id {int(edges.max())} out of range for n={n}")
    return Graph(n, edges, feats)


def _fmt(x):
    # repr gives the shortest string that round-trips to the same double
    return repr(float(x))


def save_edges(path, edges):
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in np.asarray(edges).reshape(-1, 2):
            fh.write(f"{i}\t{j}\n")


def save_features(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def save_graph(g: Graph, edge_path, feature_path):
    save_edges(edge_path, g.edges)
    save_features(feature_path, g.features)


def load_anchors(path) -> GroundTruth:
    return GroundTruth(_read_pairs(path))


def save_anchors(path, gt: GroundTruth):
    save_edges(path, gt.pairs)


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Dense ``D~^-1/2 (A + I) D~^-1/2``."""
    return g.propagation.toarray()


def gen_synthetic_pair(g: Graph, p_edge=0.0, p_feat=0.0, seed=0):
    """Build a noisy, relabelled copy of ``g`` with known correspondence.

    The target is a uniformly random relabelling of ``g``. Each edge is dropped
    with probability ``p_edge`` and as many node pairs that are non-edges of
    ``g`` are added, keeping the edge count unchanged in expectation. Each
    feature entry is, with probability ``p_feat``, replaced by a value drawn
    from the same column of ``g.features``.

    Returns
    -------
    source, target : Graph
    truth : GroundTruth
        Pairs ``(i, perm[i])``.
    """
    if not (0.0 <= p_edge <= 1.0 and 0.0 <= p_feat <= 1.0):
        raise ValueError("perturbation probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = g.n
    perm = rng.permutation(n)

    keep = rng.random(g.m) >= p_edge
    kept = g.edges[keep]
    n_add = g.m - len(kept)
    added = _sample_non_edges(g, n_add, rng)
    edges = np.concatenate([kept, added]) if len(added) else kept

    feats = g.features.copy()
    if p_feat > 0 and feats.size:
        mask = rng.random(feats.shape) < p_feat
        rows = rng.integers(0, n, size=feats.shape)
        donors = np.take_along_axis(g.features, rows, axis=0)
        feats[mask] = donors[mask]

    noisy = Graph(n, edges, feats)
    target = noisy.permuted(perm)
    return g, target, GroundTruth.from_permutation(perm)


def _sample_non_edges(g, count, rng):
    n = g.n
    capacity = n * (n - 1) // 2 - g.m
    count = min(count, capacity)
    if count <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    existing = set(map(tuple, g.edges.tolist()))
    chosen = set()
    while len(chosen) < count:
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        pair = (min(i, j), max(i, j))
        if pair in existing or pair in chosen:
            continue
        chosen.add(pair)
    return np.array(sorted(chosen), dtype=np.int64)


def random_graph(n, avg_degree=4.0, d_in=16, features="binary", seed=0):
    """Random test graph with heterogeneous degrees.

    Edges follow a Chung-Lu model with Pareto-distributed expected degrees.
    ``features`` selects ``"onehot"`` (identity, ``d_in`` ignored),
    ``"binary"`` (sparse 0/1 bag-of-words rows) or ``"gaussian"``.
    """
    rng = np.random.default_rng(seed)
    weights = rng.pareto(2.5, size=n) + 1.0
    weights *= avg_degree * n / weights.sum()
    prob = np.minimum(np.outer(weights, weights) / weights.sum(), 1.0)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    edges = np.argwhere(upper)
    if features == "onehot":
        feats = np.eye(n)
    elif features == "binary":
        feats = (rng.random((n, d_in)) < 0.2).astype(float)
        empty = feats.sum(axis=1) == 0
        feats[empty, rng.integers(0, d_in, size=int(empty.sum()))] = 1.0
    elif features == "gaussian":
        feats = rng.standard_normal((n, d_in))
    else:
        raise ValueError(f"unknown feature kind {features!r}")
    return Graph(n, edges, feats)
