"""Gromov-Wasserstein learning with learnable intra-graph costs.

The transport plan ``T`` is updated by KL-proximal Sinkhorn steps on the
inter-graph cost, and the cost parameters (mixing coefficients ``beta`` and
GNN weights ``W``) by projected gradient descent on ``<C_gwd, T>``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .embed import (
    GnnParams,
    gnn_backward,
    gnn_forward,
    init_params,
    project_columns,
    propagation_stack,
    row_normalize,
)
from .errors import GradientError, NumericalError, ShapeError
from .graph import Graph
from .marginals import Marginals, adaptive_marginals, floor_marginals

__all__ = [
    "GwConfig",
    "GwParams",
    "GraftResult",
    "project_simplex",
    "intra_cost",
    "inter_cost",
    "gwd_objective",
    "sinkhorn",
    "sinkhorn_proximal_step",
    "round_to_marginals",
    "objective_and_gradients",
    "numerical_gradients",
    "gradient_check",
    "update_params",
    "graft",
    "init_gw_params",
]

COST_MODES = ("multi-view", "adjacency-sparse")
GRAD_MODES = ("analytic", "finite-difference")
_FLOOR = 1e-30


@dataclass
class GwConfig:
    """Iteration counts, step sizes and modes of the GW learner.

    ``sinkhorn_iters`` is the number of scaling sweeps per proximal round;
    sweeping continues past it, up to ``max_sinkhorn_iters``, while the column
    marginals are off by more than ``sinkhorn_tol``.
    """

    outer_iters: int = 50
    ot_iters: int = 2
    sinkhorn_iters: int = 20
    tau_t: float = 0.01
    tau_beta: float = 1.0
    tau_w: float = 0.01
    cost_mode: str = "multi-view"
    grad_mode: str = "analytic"
    gnn: str = "gcn"
    dim: int = 32
    layers: int = 3
    adaptive: bool = False
    log_domain: bool = False
    sinkhorn_tol: float = 1e-9
    max_sinkhorn_iters: int = 1000
    safeguard: bool = True
    max_backtracks: int = 10

    def __post_init__(self):
        for name in ("outer_iters", "ot_iters", "sinkhorn_iters", "dim", "layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("tau_t", "tau_beta", "tau_w"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.cost_mode not in COST_MODES:
            raise ValueError(f"cost_mode must be one of {COST_MODES}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")


@dataclass
class GwParams:
    """Learnable parameters: one simplex vector per graph plus shared GNN weights."""

    beta_s: np.ndarray
    beta_t: np.ndarray
    gnn: GnnParams

    def copy(self):
        return GwParams(self.beta_s.copy(), self.beta_t.copy(), self.gnn.copy())


def init_gw_params(d_in, cfg: GwConfig, seed=0):
    beta = np.full(3, 1.0 / 3.0)
    gnn = init_params(cfg.gnn, d_in, cfg.dim, cfg.layers, rng=seed)
    return GwParams(beta.copy(), beta.copy(), gnn)


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


# -- costs ------------------------------------------------------------------


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=np.float64)


def _feature_gram(g: Graph):
    x = row_normalize(g.features)
    return x @ x.T


def intra_cost(g: Graph, z, beta):
    """``beta[0] A + beta[1] X^ X^T + beta[2] Z^ Z^T`` with unit-length rows in X^, Z^."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != g.n:
        raise ShapeError(f"embedding has {z.shape[0]} rows, graph has {g.n} nodes")
    zhat = row_normalize(z)
    beta = np.asarray(beta, dtype=np.float64)
    return (
        beta[0] * g.adjacency.toarray()
        + beta[1] * _feature_gram(g)
        + beta[2] * (zhat @ zhat.T)
    )


def _check_marginals(t, marg, tol=1e-6):
    if marg is None:
        return
    err = max(
        np.abs(t.sum(axis=1) - marg.mu).max(initial=0.0),
        np.abs(t.sum(axis=0) - marg.nu).max(initial=0.0),
    )
    if err > tol:
        warnings.warn(f"plan marginals deviate from the given ones by {err:.2e}", RuntimeWarning)


def inter_cost(cs, ct, t, marg: Marginals | None = None):
    """Inter-graph cost ``C_gwd(i, k) = sum_jl (Cs(i,j) - Ct(k,l))^2 T(j,l)``.

    Evaluated in the factored form
    ``(Cs*Cs) mu 1^T + 1 ((Ct*Ct) nu)^T - 2 Cs T Ct^T`` where ``mu`` and ``nu``
    are the row and column sums of ``t`` itself, so the result matches the
    quadruple sum for any non-negative ``t``. Sparse ``cs``/``ct`` (the
    adjacency-only cost) stay sparse throughout. ``marg`` is only used to warn
    when ``t`` is not feasible for it.
    """
    t = np.asarray(t, dtype=np.float64)
    n1, n2 = t.shape
    if cs.shape != (n1, n1) or ct.shape != (n2, n2):
        raise ShapeError(f"cost shapes {cs.shape}, {ct.shape} do not fit plan {t.shape}")
    _check_marginals(t, marg)
    mu = t.sum(axis=1)
    nu = t.sum(axis=0)
    if sp.issparse(cs) or sp.issparse(ct):
        cs = sp.csr_matrix(cs)
        ct = sp.csr_matrix(ct)
        row = cs.multiply(cs) @ mu
        col = ct.multiply(ct) @ nu
        cross = np.asarray((ct @ np.asarray(cs @ t).T).T)
    else:
        row = (cs * cs) @ mu
        col = (ct * ct) @ nu
        cross = cs @ t @ ct.T
    return row[:, None] + col[None, :] - 2.0 * cross


def gwd_objective(cs, ct, t):
    """``<C_gwd, T>``, the GW discrepancy of plan ``t``."""
    t = np.asarray(t, dtype=np.float64)
    return float(np.sum(inter_cost(cs, ct, t) * t))


# -- transport updates --------------------------------------------------------


def sinkhorn(kernel, mu, nu, sweeps=20, tol=1e-9, max_sweeps=5000, a=None):
    """Scale ``kernel`` to marginals ``(mu, nu)``; returns ``(a, b)``.

    Runs ``sweeps`` alternating updates ``b = nu / K^T a``, ``a = mu / K b``
    and keeps going while the column sums miss ``nu`` by more than ``tol``.
    """
    a = np.array(mu if a is None else a, dtype=np.float64, copy=True)
    for it in range(max(sweeps, max_sweeps)):
        b = nu / np.maximum(kernel.T @ a, _FLOOR)
        a = mu / np.maximum(kernel @ b, _FLOOR)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NumericalError(
                "Sinkhorn scaling overflowed; use a larger tau_t or enable log_domain"
            )
        if it + 1 >= sweeps:
            col_err = np.abs(b * (kernel.T @ a) - nu).max(initial=0.0)
            if col_err <= tol:
                break
    return a, b


def round_to_marginals(t, mu, nu):
    """Make ``t`` exactly feasible for ``(mu, nu)`` with a small L1 change.

    Rows and then columns whose sums are too large are scaled down, and the
    remaining deficit is filled with the rank-one matrix
    ``err_r err_c^T / |err_r|_1`` (Altschuler, Weed and Rigollet, 2017).
    """
    t = np.asarray(t, dtype=np.float64)
    rows = t.sum(axis=1)
    t = t * np.minimum(mu / np.maximum(rows, _FLOOR), 1.0)[:, None]
    cols = t.sum(axis=0)
    t = t * np.minimum(nu / np.maximum(cols, _FLOOR), 1.0)[None, :]
    err_r = np.maximum(mu - t.sum(axis=1), 0.0)
    err_c = np.maximum(nu - t.sum(axis=0), 0.0)
    mass = err_r.sum()
    if mass > 0:
        t = t + np.outer(err_r, err_c) / mass
    return t


def _sinkhorn_log(log_kernel, mu, nu, sweeps, tol, max_sweeps):
    log_mu = np.log(mu)
    log_nu = np.log(nu)
    f = np.zeros_like(mu)
    for it in range(max_sweeps):
        g = log_nu - logsumexp(log_kernel + f[:, None], axis=0)
        f = log_mu - logsumexp(log_kernel + g[None, :], axis=1)
        if it + 1 >= sweeps:
            col = np.exp(logsumexp(log_kernel + f[:, None] + g[None, :], axis=0))
            if np.abs(col - nu).max(initial=0.0) <= tol:
                break
    return log_kernel + f[:, None] + g[None, :]


def sinkhorn_proximal_step(c_gwd, t_prev, marg: Marginals, cfg: GwConfig):
    """``ot_iters`` KL-proximal rounds of ``min <C, T> + tau KL(T || T_prev)``.

    Each round rescales ``G = exp(-C / tau_t) * T`` to the marginals; the
    row-scaling vector is carried from one round to the next. The result is
    passed through :func:`round_to_marginals`, so it is feasible even when the
    sweep budget runs out first.
    """
    c = np.asarray(c_gwd, dtype=np.float64)
    t = np.maximum(np.asarray(t_prev, dtype=np.float64), _FLOOR)
    mu, nu = marg.mu, marg.nu
    # a per-row shift of C is absorbed by the row scaling
    c = c - c.min(axis=1, keepdims=True)
    if cfg.log_domain:
        log_k = -c / cfg.tau_t
        log_t = np.log(t)
        for _ in range(cfg.ot_iters):
            # the plan stays in log space so underflowed entries never hit log(0)
            log_t = _sinkhorn_log(
                log_k + log_t, mu, nu, cfg.sinkhorn_iters, cfg.sinkhorn_tol,
                cfg.max_sinkhorn_iters,
            )
        return round_to_marginals(np.exp(log_t), mu, nu)
    kernel = np.exp(-c / cfg.tau_t)
    a = mu
    for _ in range(cfg.ot_iters):
        g = kernel * t
        a, b = sinkhorn(
            g, mu, nu, cfg.sinkhorn_iters, cfg.sinkhorn_tol, cfg.max_sinkhorn_iters, a=a
        )
        t = a[:, None] * g * b[None, :]
    return round_to_marginals(t, mu, nu)


# -- learning objective and gradients ------------------------------------------


class _GraphTerms:
    """Per-graph quantities that do not depend on the learnable parameters."""

    def __init__(self, g: Graph, params: GnnParams | None, sparse_cost=False):
        self.g = g
        self.adj = g.adjacency if sparse_cost else g.adjacency.toarray()
        self.xx = None if sparse_cost else _feature_gram(g)
        self.stack = None
        if params is not None and params.kind == "lgcn":
            self.stack = propagation_stack(g, params.layers)

    def embed(self, params: GnnParams):
        return gnn_forward(self.g, params, stack=self.stack)

    def cost(self, beta, zhat):
        return beta[0] * self.adj + beta[1] * self.xx + beta[2] * (zhat @ zhat.T)


def _rownorm_backward(z, grad_zhat, eps=1e-12):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    safe = np.maximum(norms, eps)
    zhat = z / safe
    radial = np.sum(zhat * grad_zhat, axis=1, keepdims=True)
    return np.where(norms > eps, (grad_zhat - zhat * radial) / safe, grad_zhat / eps)


def objective_and_gradients(gs, gt, t, theta: GwParams, terms=None, need_grad=True):
    """Return ``(L, grads)`` for ``L = <C_gwd, T>`` with ``T`` held fixed.

    ``grads`` is a :class:`GwParams` holding ``dL/dbeta_s``, ``dL/dbeta_t`` and
    ``dL/dW`` (summed over both graphs, since ``W`` is shared); it is ``None``
    when ``need_grad`` is false.
    """
    t = np.asarray(t, dtype=np.float64)
    if terms is None:
        terms = (_GraphTerms(gs, theta.gnn), _GraphTerms(gt, theta.gnn))
    ts, tt = terms
    zs, cache_s = ts.embed(theta.gnn)
    zt, cache_t = tt.embed(theta.gnn)
    zhat_s, zhat_t = row_normalize(zs), row_normalize(zt)
    cs = ts.cost(theta.beta_s, zhat_s)
    ct = tt.cost(theta.beta_t, zhat_t)
    loss = gwd_objective(cs, ct, t)
    if not need_grad:
        return loss, None

    mu = t.sum(axis=1)
    nu = t.sum(axis=0)
    g_cs = 2.0 * cs * np.outer(mu, mu) - 2.0 * (t @ ct @ t.T)
    g_ct = 2.0 * ct * np.outer(nu, nu) - 2.0 * (t.T @ cs @ t)

    def beta_grad(grad_c, term, zhat):
        return np.array([
            np.sum(grad_c * term.adj),
            np.sum(grad_c * term.xx),
            np.sum((grad_c @ zhat) * zhat),
        ])

    d_beta_s = beta_grad(g_cs, ts, zhat_s)
    d_beta_t = beta_grad(g_ct, tt, zhat_t)
    d_zs = _rownorm_backward(zs, theta.beta_s[2] * ((g_cs + g_cs.T) @ zhat_s))
    d_zt = _rownorm_backward(zt, theta.beta_t[2] * ((g_ct + g_ct.T) @ zhat_t))
    d_w = [
        a + b
        for a, b in zip(
            gnn_backward(gs, theta.gnn, cache_s, d_zs),
            gnn_backward(gt, theta.gnn, cache_t, d_zt),
        )
    ]
    grads = GwParams(d_beta_s, d_beta_t, GnnParams(theta.gnn.kind, theta.gnn.layers, d_w))
    return loss, grads


def numerical_gradients(gs, gt, t, theta: GwParams, h=1e-6, terms=None):
    """Central finite differences of the objective for every parameter entry."""
    if terms is None:
        terms = (_GraphTerms(gs, theta.gnn), _GraphTerms(gt, theta.gnn))
    probe = theta.copy()

    def f():
        return objective_and_gradients(gs, gt, t, probe, terms, need_grad=False)[0]

    def diff(arr):
        out = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = f()
            arr[idx] = orig - h
            down = f()
            arr[idx] = orig
            out[idx] = (up - down) / (2 * h)
        return out

    d_beta_s = diff(probe.beta_s)
    d_beta_t = diff(probe.beta_t)
    d_w = [diff(w) for w in probe.gnn.mats]
    return GwParams(d_beta_s, d_beta_t, GnnParams(theta.gnn.kind, theta.gnn.layers, d_w))


def _deviation(analytic, numeric):
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def gradient_check(gs, gt, t, theta: GwParams, h=1e-6):
    """Max-norm relative deviation between analytic and numerical gradients.

    Returns a dict with keys ``beta_s``, ``beta_t``, ``W`` and ``max``.
    """
    _, analytic = objective_and_gradients(gs, gt, t, theta)
    numeric = numerical_gradients(gs, gt, t, theta, h=h)
    report = {
        "beta_s": _deviation(analytic.beta_s, numeric.beta_s),
        "beta_t": _deviation(analytic.beta_t, numeric.beta_t),
        "W": max(_deviation(a, b) for a, b in zip(analytic.gnn.mats, numeric.gnn.mats)),
    }
    report["max"] = max(report.values())
    return report


def _check_against_fd(gs, gt, t, theta, grads, cfg, terms, rtol):
    numeric = grads if cfg.grad_mode == "finite-difference" else numerical_gradients(
        gs, gt, t, theta, terms=terms)
    analytic = grads if cfg.grad_mode == "analytic" else objective_and_gradients(
        gs, gt, t, theta, terms)[1]
    pairs = [(analytic.beta_s, numeric.beta_s), (analytic.beta_t, numeric.beta_t)]
    pairs += list(zip(analytic.gnn.mats, numeric.gnn.mats))
    worst = max(_deviation(a, b) for a, b in pairs)
    if worst > rtol:
        raise GradientError(f"analytic gradient deviates from finite differences by {worst:.2e}")


def _projected_step(theta, grads, cfg, scale=1.0):
    beta_s = project_simplex(theta.beta_s - scale * cfg.tau_beta * grads.beta_s)
    beta_t = project_simplex(theta.beta_t - scale * cfg.tau_beta * grads.beta_t)
    mats = [
        project_columns(w - scale * cfg.tau_w * g)
        for w, g in zip(theta.gnn.mats, grads.gnn.mats)
    ]
    return GwParams(beta_s, beta_t, replace(theta.gnn, mats=mats))


def _gradients(gs, gt, t, theta, cfg, terms):
    if cfg.grad_mode == "finite-difference":
        return numerical_gradients(gs, gt, t, theta, terms=terms)
    return objective_and_gradients(gs, gt, t, theta, terms)[1]


def update_params(gs, gt, t, theta: GwParams, cfg: GwConfig, terms=None,
                  self_test=False, self_test_rtol=1e-4):
    """One projected gradient step on ``(beta_s, beta_t, W)`` with ``T`` fixed.

    Step sizes are ``tau_beta`` and ``tau_w``; ``beta`` vectors are then
    projected onto the simplex and every ``W`` through ReLU plus column
    normalisation. With ``self_test`` the analytic gradient is compared
    against finite differences first (tiny instances only).
    """
    if cfg.cost_mode == "adjacency-sparse":
        return theta.copy()
    if terms is None:
        terms = (_GraphTerms(gs, theta.gnn), _GraphTerms(gt, theta.gnn))
    grads = _gradients(gs, gt, t, theta, cfg, terms)
    if self_test:
        _check_against_fd(gs, gt, t, theta, grads, cfg, terms, self_test_rtol)
    return _projected_step(theta, grads, cfg)


# -- the learner --------------------------------------------------------------


@dataclass
class GraftResult:
    """Final plan, parameters and the objective after every outer iteration.

    ``trajectory[0]`` is the objective at initialisation.
    """

    t: np.ndarray
    params: GwParams | None
    trajectory: list = field(default_factory=list)
    marginals: Marginals | None = None


def _loss(terms, theta, t):
    zs, _ = terms[0].embed(theta.gnn)
    zt, _ = terms[1].embed(theta.gnn)
    cs = terms[0].cost(theta.beta_s, row_normalize(zs))
    ct = terms[1].cost(theta.beta_t, row_normalize(zt))
    return gwd_objective(cs, ct, t), cs, ct, zs, zt


def _safe_param_step(gs, gt, t, theta, cfg, terms, loss):
    # halve the step until the objective stops increasing
    grads = _gradients(gs, gt, t, theta, cfg, terms)
    scale = 1.0
    for _ in range(cfg.max_backtracks + 1):
        cand = _projected_step(theta, grads, cfg, scale)
        new_loss, cs, ct, zs, zt = _loss(terms, cand, t)
        if new_loss <= loss:
            return cand, new_loss, cs, ct, zs, zt
        scale *= 0.5
    return (theta,) + _loss(terms, theta, t)


def _safe_transport_step(cs, ct, t, marg, cfg, loss):
    # enlarge the proximal weight until the objective stops increasing
    c_gwd = inter_cost(cs, ct, t)
    step_cfg = cfg
    for _ in range(cfg.max_backtracks + 1):
        cand = sinkhorn_proximal_step(c_gwd, t, marg, step_cfg)
        new_loss = gwd_objective(cs, ct, cand)
        if new_loss <= loss:
            return cand, new_loss
        step_cfg = replace(step_cfg, tau_t=step_cfg.tau_t * 2.0)
    return t, loss


def graft(gs: Graph, gt: Graph, marg: Marginals, cfg: GwConfig | None = None, seed=0,
          params: GwParams | None = None):
    """Jointly learn the transport plan and the intra-graph cost parameters.

    Starts from ``T = mu nu^T`` and uniform ``beta``. Every outer iteration
    embeds both graphs, takes one projected gradient step on the cost
    parameters with ``T`` fixed, then runs the proximal Sinkhorn update on the
    inter-graph cost evaluated with the updated parameters.

    With ``cfg.safeguard`` (the default) a parameter step that would raise the
    objective is halved, and a transport step that would raise it is retried
    with a doubled ``tau_t``, up to ``cfg.max_backtracks`` times each; the old
    value is kept if no step helps. Adaptive marginals change the feasible
    set between iterations, so they bypass the transport safeguard.
    """
    cfg = cfg or GwConfig()
    if gs.feature_dim != gt.feature_dim:
        raise ShapeError("source and target graphs have different feature dimensions")
    marg = floor_marginals(marg)
    if len(marg.mu) != gs.n or len(marg.nu) != gt.n:
        raise ShapeError("marginal lengths do not match the graphs")
    t = marg.outer()

    if cfg.cost_mode == "adjacency-sparse":
        return _graft_sparse(gs, gt, marg, cfg, t, params, seed)

    theta = params.copy() if params is not None else init_gw_params(gs.feature_dim, cfg, seed)
    terms = (_GraphTerms(gs, theta.gnn), _GraphTerms(gt, theta.gnn))
    loss = _loss(terms, theta, t)[0]
    trajectory = [loss]
    for _ in range(cfg.outer_iters):
        if cfg.safeguard:
            theta, loss, cs, ct, zs, zt = _safe_param_step(gs, gt, t, theta, cfg, terms, loss)
        else:
            theta = update_params(gs, gt, t, theta, cfg, terms)
            loss, cs, ct, zs, zt = _loss(terms, theta, t)
        if cfg.adaptive:
            marg = floor_marginals(adaptive_marginals(zs, zt, previous=marg))
        if cfg.safeguard and not cfg.adaptive:
            t, loss = _safe_transport_step(cs, ct, t, marg, cfg, loss)
        else:
            t = sinkhorn_proximal_step(inter_cost(cs, ct, t), t, marg, cfg)
            loss = gwd_objective(cs, ct, t)
        trajectory.append(loss)
    return GraftResult(t, theta, trajectory, marg)


def _graft_sparse(gs, gt, marg, cfg, t, params, seed):
    # adjacency-only costs: beta is pinned to (1, 0, 0) and nothing is learned
    a_s, a_t = gs.adjacency, gt.adjacency
    theta = None
    if cfg.adaptive:
        theta = params.copy() if params is not None else init_gw_params(gs.feature_dim, cfg, seed)
    loss = gwd_objective(a_s, a_t, t)
    trajectory = [loss]
    for _ in range(cfg.outer_iters):
        if theta is not None:
            zs, zt = gnn_forward(gs, theta.gnn)[0], gnn_forward(gt, theta.gnn)[0]
            marg = floor_marginals(adaptive_marginals(zs, zt, previous=marg))
        if cfg.safeguard and theta is None:
            t, loss = _safe_transport_step(a_s, a_t, t, marg, cfg, loss)
        else:
            t = sinkhorn_proximal_step(inter_cost(a_s, a_t, t), t, marg, cfg)
            loss = gwd_objective(a_s, a_t, t)
        trajectory.append(loss)
    if theta is None:
        theta = GwParams(np.array([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]),
                         init_params(cfg.gnn, gs.feature_dim, cfg.dim, cfg.layers, rng=seed))
    return GraftResult(t, theta, trajectory, marg)
