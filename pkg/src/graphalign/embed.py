"""Feature propagation and transformation, and the parameter-free WL prior."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError
from .graph import Graph

__all__ = [
    "GnnParams",
    "GnnCache",
    "init_params",
    "project_columns",
    "feat_prop_trans",
    "gnn_forward",
    "gnn_backward",
    "normalize_similarity",
    "row_normalize",
    "wl_alignment",
    "propagation_stack",
]

KINDS = ("lgcn", "gcn")
_ALIASES = {"lightweight-gcn": "lgcn", "lgcn": "lgcn", "gcn": "gcn"}


def _kind(kind):
    try:
        return _ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown GNN kind {kind!r}; expected one of {KINDS}") from None


@dataclass
class GnnParams:
    """Transformation matrices of a ``K``-layer GNN.

    ``gcn`` holds ``K`` matrices (``d_in x d`` then ``d x d``). ``lgcn`` holds a
    single ``(K + 1) d_in x d`` matrix applied to ``[X, PX, ..., P^K X]``.
    """

    kind: str
    layers: int
    mats: list = field(default_factory=list)
    learnable: bool = True

    def __post_init__(self):
        self.kind = _kind(self.kind)
        if self.layers < 1:
            raise ValueError("a GNN needs at least one layer")
        self.mats = [np.asarray(w, dtype=np.float64) for w in self.mats]
        expected = 1 if self.kind == "lgcn" else self.layers
        if len(self.mats) != expected:
            raise ShapeError(f"{self.kind} with K={self.layers} needs {expected} matrices")
        for prev, nxt in zip(self.mats, self.mats[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ShapeError(f"matrix shapes do not chain: {prev.shape} then {nxt.shape}")

    @property
    def in_dim(self):
        rows = self.mats[0].shape[0]
        return rows // (self.layers + 1) if self.kind == "lgcn" else rows

    @property
    def out_dim(self):
        return self.mats[-1].shape[1]

    def copy(self):
        return GnnParams(self.kind, self.layers, [w.copy() for w in self.mats], self.learnable)


def project_columns(w):
    """ReLU followed by column normalisation onto ``{W >= 0, 1^T W = 1^T}``.

    A column with no positive entry is reset to the uniform column.
    """
    w = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
    sums = w.sum(axis=0)
    dead = sums <= 0
    if dead.any():
        w[:, dead] = 1.0
        sums = w.sum(axis=0)
    return w / sums


def init_params(kind, d_in, dim=32, layers=3, rng=None, learnable=True):
    """Seeded uniform matrices projected into the feasible set."""
    kind = _kind(kind)
    rng = np.random.default_rng(rng)
    if kind == "lgcn":
        shapes = [((layers + 1) * d_in, dim)]
    else:
        shapes = [(d_in, dim)] + [(dim, dim)] * (layers - 1)
    mats = [project_columns(rng.uniform(0.0, 1.0 / np.sqrt(dim), size=s)) for s in shapes]
    return GnnParams(kind, layers, mats, learnable)


def propagation_stack(g: Graph, layers):
    """``[X, PX, ..., P^K X]`` concatenated column-wise."""
    blocks = [g.features]
    for _ in range(layers):
        blocks.append(g.propagation @ blocks[-1])
    return np.hstack(blocks)


@dataclass
class GnnCache:
    """Intermediate values kept by :func:`gnn_forward` for back-propagation."""

    kind: str
    inputs: list
    preacts: list


def gnn_forward(g: Graph, params: GnnParams, stack=None):
    """Return the embedding and the cache needed by :func:`gnn_backward`.

    ``stack`` may carry a precomputed :func:`propagation_stack` for ``lgcn``.
    """
    if g.feature_dim != params.in_dim:
        raise ShapeError(
            f"graph has {g.feature_dim} feature columns, parameters expect {params.in_dim}"
        )
    if params.kind == "lgcn":
        s = propagation_stack(g, params.layers) if stack is None else stack
        z = s @ params.mats[0]
        cache = GnnCache("lgcn", [s], [])
    else:
        h = g.features
        z = np.zeros((g.n, params.out_dim))
        inputs, preacts = [], []
        for w in params.mats:
            ph = g.propagation @ h
            pre = ph @ w
            h = np.maximum(pre, 0.0)
            inputs.append(ph)
            preacts.append(pre)
            z += h
        cache = GnnCache("gcn", inputs, preacts)
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite node embedding")
    return z, cache


def feat_prop_trans(g: Graph, params: GnnParams) -> np.ndarray:
    """Node embeddings ``Z`` for ``g`` under ``params``.

    For ``gcn`` this is the skip-connection sum of ``ReLU(P Z^(k-1) W^(k))``
    over ``k = 1..K``; for ``lgcn`` it is ``[X, PX, ..., P^K X] W``.
    """
    return gnn_forward(g, params)[0]


def gnn_backward(g: Graph, params: GnnParams, cache: GnnCache, grad_z):
    """Gradients of a scalar loss w.r.t. each matrix in ``params``."""
    if cache.kind == "lgcn":
        return [cache.inputs[0].T @ grad_z]
    grads = [None] * len(params.mats)
    grad_h = np.array(grad_z, dtype=np.float64, copy=True)
    for k in range(len(params.mats) - 1, -1, -1):
        grad_pre = grad_h * (cache.preacts[k] > 0)
        grads[k] = cache.inputs[k].T @ grad_pre
        if k > 0:
            # P is symmetric, so P^T grad = P grad
            grad_h = grad_z + g.propagation @ (grad_pre @ params.mats[k].T)
    return grads


def row_normalize(h, eps=1e-12):
    """Scale each row to unit L2 norm; all-zero rows stay zero."""
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    return h / np.maximum(norms, eps)


def normalize_similarity(sim):
    """ReLU then divide by the total; ``None`` when nothing survives the ReLU."""
    t = np.maximum(sim, 0.0)
    total = t.sum()
    if not total > 0:
        return None
    return t / total


def wl_alignment(gs: Graph, gt: Graph, layers=3, seed=0, dim=32, kind="gcn"):
    """Embedding-based alignment prior from a GNN with frozen random weights.

    Both graphs are embedded with the same seeded weights. Embedding rows are
    scaled to unit length so that, on an exact copy, every node is most
    similar to its own image; the inner products are then rectified and
    normalised to a joint distribution over node pairs. If every inner
    product is non-positive the uniform matrix is returned with a warning.
    """
    if gs.feature_dim != gt.feature_dim:
        raise ShapeError("source and target graphs have different feature dimensions")
    params = init_params(kind, gs.feature_dim, dim, layers, rng=seed, learnable=False)
    hs = row_normalize(feat_prop_trans(gs, params))
    ht = row_normalize(feat_prop_trans(gt, params))
    t = normalize_similarity(hs @ ht.T)
    if t is None:
        warnings.warn("WL similarity is zero everywhere; using a uniform prior", RuntimeWarning)
        return np.full((gs.n, gt.n), 1.0 / (gs.n * gt.n))
    return t
