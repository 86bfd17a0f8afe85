"""Marginal distributions over the two node sets."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .embed import normalize_similarity, row_normalize
from .errors import DegeneratePriorError

__all__ = [
    "Marginals",
    "marginals_from_alignment",
    "uniform_marginals",
    "adaptive_marginals",
    "floor_marginals",
]


@dataclass(frozen=True, eq=False)
class Marginals:
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).ravel()
        nu = np.asarray(self.nu, dtype=np.float64).ravel()
        if (mu < 0).any() or (nu < 0).any():
            raise ValueError("marginals must be non-negative")
        if not np.isclose(mu.sum(), nu.sum(), rtol=0, atol=1e-9):
            raise ValueError(f"marginal masses differ: {mu.sum()} vs {nu.sum()}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)

    def outer(self):
        return np.outer(self.mu, self.nu)


def marginals_from_alignment(t) -> Marginals:
    """Row and column sums of a non-negative alignment matrix."""
    t = np.asarray(t, dtype=np.float64)
    if not t.sum() > 0:
        raise DegeneratePriorError("alignment matrix has no mass")
    return Marginals(t.sum(axis=1), t.sum(axis=0))


def uniform_marginals(n1, n2) -> Marginals:
    if n1 < 1 or n2 < 1:
        raise ValueError("both node sets must be non-empty")
    return Marginals(np.full(n1, 1.0 / n1), np.full(n2, 1.0 / n2))


def adaptive_marginals(zs, zt, previous=None, normalize_rows=True) -> Marginals:
    """Marginals of the normalised similarity between two embedding matrices.

    Rows are scaled to unit length first, as for the WL prior. When the
    rectified similarity is zero everywhere, ``previous`` is returned with a
    warning; without a fallback a :class:`DegeneratePriorError` is raised.
    """
    zs = np.asarray(zs, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if normalize_rows:
        zs, zt = row_normalize(zs), row_normalize(zt)
    t = normalize_similarity(zs @ zt.T)
    if t is None:
        if previous is None:
            raise DegeneratePriorError("embedding similarity is zero everywhere")
        warnings.warn("adaptive marginals degenerate; keeping previous marginals", RuntimeWarning)
        return previous
    return marginals_from_alignment(t)


def floor_marginals(marg: Marginals, eps=1e-12) -> Marginals:
    """Clamp entries to at least ``eps`` and rescale each vector to unit mass."""
    mu = np.maximum(marg.mu, eps)
    nu = np.maximum(marg.nu, eps)
    return Marginals(mu / mu.sum(), nu / nu.sum())
