"""End-to-end alignment: WL prior, marginals, GW learning, then the matching step."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .combine import DEFAULT_TOP_R, MatchSet, combine, ensemble_weights
from .embed import wl_alignment
from .errors import ShapeError, SizeError
from .graph import (
    Graph,
    GroundTruth,
    gen_synthetic_pair,
    load_anchors,
    load_graph,
    random_graph,
    save_anchors,
    save_edges,
    save_features,
)
from .gw import GwConfig, graft, gradient_check, init_gw_params, round_to_marginals
from .marginals import marginals_from_alignment, uniform_marginals
from .metrics import MetricsReport, evaluate, row_argmax

__all__ = [
    "PipelineConfig",
    "AlignResult",
    "align_graphs",
    "run_align",
    "run_gen",
    "run_gradcheck",
    "GRADCHECK_MAX_N",
    "GRADCHECK_TOL",
]

MARGINAL_MODES = ("uniform", "wl", "adaptive")
GRADCHECK_MAX_N = 16
GRADCHECK_TOL = 1e-3
_GW = GwConfig()


@dataclass
class PipelineConfig:
    """Every knob of one alignment run.

    Defaults mirror :class:`GwConfig` and the matching module. The text form
    is one ``key = value`` line per field; an empty value means ``None``.
    """

    source_edges: str | None = None
    source_feats: str | None = None
    target_edges: str | None = None
    target_feats: str | None = None
    anchors: str | None = None
    gnn: str = _GW.gnn
    dim: int = _GW.dim
    layers: int = _GW.layers
    iters: int = _GW.outer_iters
    ot_iters: int = _GW.ot_iters
    sinkhorn_iters: int = _GW.sinkhorn_iters
    tau_t: float = _GW.tau_t
    tau_beta: float = _GW.tau_beta
    tau_w: float = _GW.tau_w
    marginals: str = "wl"
    top_r: int = DEFAULT_TOP_R
    ensemble: str = "product"
    combine: bool = True
    seed: int = 0
    out_dir: str = "out"
    dump_matrices: bool = False
    trajectory: bool = False

    def __post_init__(self):
        if self.marginals not in MARGINAL_MODES:
            raise ValueError(f"marginals must be one of {MARGINAL_MODES}")
        if self.ensemble not in ("product", "average"):
            raise ValueError("ensemble must be 'product' or 'average'")
        if self.top_r < 1:
            raise ValueError("top_r must be >= 1")

    def gw_config(self) -> GwConfig:
        return GwConfig(
            outer_iters=self.iters,
            ot_iters=self.ot_iters,
            sinkhorn_iters=self.sinkhorn_iters,
            tau_t=self.tau_t,
            tau_beta=self.tau_beta,
            tau_w=self.tau_w,
            gnn=self.gnn,
            dim=self.dim,
            layers=self.layers,
            adaptive=self.marginals == "adaptive",
        )

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if value is None else _format(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        """Parse ``key = value`` lines on top of ``base`` (or the defaults)."""
        cfg = base or cls()
        known = {f.name: f for f in fields(cls)}
        updates = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip().replace("-", "_"), raw.strip()
            if not sep or key not in known:
                raise ValueError(f"config line {lineno}: unknown or malformed entry {line!r}")
            updates[key] = _parse(raw, getattr(cls(), key), key)
        return replace(cfg, **updates)

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw, default, key):
    if raw == "":
        return None
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


@dataclass
class AlignResult:
    """Everything one run produces.

    ``matches`` is ``None`` when the matching step is disabled; predictions
    are then the row argmax of ``t_gw`` and may repeat targets.
    """

    matches: MatchSet | None
    predictions: np.ndarray
    t_wl: np.ndarray
    t_gw: np.ndarray
    trajectory: list = field(default_factory=list)
    report: MetricsReport | None = None


def align_graphs(gs: Graph, gt: Graph, cfg: PipelineConfig | None = None,
                 truth: GroundTruth | None = None) -> AlignResult:
    """Run the full pipeline on two in-memory graphs."""
    cfg = cfg or PipelineConfig()
    if gs.feature_dim != gt.feature_dim:
        raise ShapeError("source and target graphs have different feature dimensions")
    t_wl = wl_alignment(gs, gt, layers=cfg.layers, seed=cfg.seed, dim=cfg.dim, kind=cfg.gnn)
    if cfg.marginals == "uniform":
        marg = uniform_marginals(gs.n, gt.n)
    else:
        marg = marginals_from_alignment(t_wl)
    result = graft(gs, gt, marg, cfg.gw_config(), seed=cfg.seed)
    t_gw = result.t
    if cfg.combine:
        matches = combine(t_wl, t_gw, r=cfg.top_r, mode=cfg.ensemble)
        predictions = matches.pairs
        scores = ensemble_weights(t_wl, t_gw, cfg.ensemble)
    else:
        matches = None
        arg = row_argmax(t_gw)
        keep = arg >= 0
        predictions = np.column_stack([np.flatnonzero(keep), arg[keep]])
        scores = t_gw
    report = evaluate(scores, truth, matches) if truth is not None else None
    return AlignResult(matches, predictions, t_wl, t_gw, result.trajectory, report)


def _require(cfg, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise ValueError("missing required setting(s): " + ", ".join(missing))


def _commit(out_dir, files):
    """Write every ``name -> writer`` pair, or nothing at all.

    Each file goes to a temporary name first and is renamed into place only
    after all of them were written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, writer in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            os.close(fd)
            staged.append((tmp, out_dir / name))
            writer(tmp)
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.remove(tmp)
    return [out_dir / name for name in files]


def _text_writer(text):
    def write(path):
        Path(path).write_text(text, encoding="utf-8")
    return write


def _pairs_text(pairs):
    return "".join(f"{s}\t{t}\n" for s, t in np.asarray(pairs).reshape(-1, 2))


def _matrix_text(m):
    rows = [" ".join(repr(float(v)) for v in row) for row in m]
    return f"{m.shape[0]} {m.shape[1]}\n" + "".join(r + "\n" for r in rows)


def run_align(cfg: PipelineConfig):
    """Load inputs, align, and write the outputs to ``cfg.out_dir``.

    Writes ``matches.tsv`` and, when anchors are given, ``metrics.txt`` and
    ``metrics.json``; optionally ``t_wl.txt``/``t_gw.txt`` and
    ``trajectory.txt``. Nothing is written if any step fails.

    Returns
    -------
    matches : MatchSet or None
    t_wl, t_gw : ndarray
    report : MetricsReport or None
    """
    _require(cfg, "source_edges", "source_feats", "target_edges", "target_feats")
    gs = load_graph(cfg.source_edges, cfg.source_feats)
    gt = load_graph(cfg.target_edges, cfg.target_feats)
    truth = load_anchors(cfg.anchors) if cfg.anchors else None
    res = align_graphs(gs, gt, cfg, truth)

    files = {"matches.tsv": _text_writer(_pairs_text(res.predictions))}
    if res.report is not None:
        files["metrics.txt"] = _text_writer(res.report.to_text())
        files["metrics.json"] = _text_writer(res.report.to_json() + "\n")
    if cfg.dump_matrices:
        files["t_wl.txt"] = _text_writer(_matrix_text(res.t_wl))
        files["t_gw.txt"] = _text_writer(_matrix_text(res.t_gw))
    if cfg.trajectory:
        files["trajectory.txt"] = _text_writer(
            "".join(f"{i}\t{v!r}\n" for i, v in enumerate(res.trajectory)))
    _commit(cfg.out_dir, files)
    return res.matches, res.t_wl, res.t_gw, res.report


def run_gen(out_dir, n=100, features="binary", d_in=16, avg_degree=4.0, p_edge=0.0,
            p_feat=0.0, seed=0, source_edges=None, source_feats=None):
    """Write a noisy permuted pair and its ground truth.

    The source graph is read from files when both paths are given, otherwise
    drawn with :func:`random_graph`. Output files: ``source.edges``,
    ``source.feats``, ``target.edges``, ``target.feats``, ``anchors.tsv``.
    """
    if source_edges and source_feats:
        g = load_graph(source_edges, source_feats)
    else:
        g = random_graph(n, avg_degree=avg_degree, d_in=d_in, features=features, seed=seed)
    gs, gt, truth = gen_synthetic_pair(g, p_edge=p_edge, p_feat=p_feat, seed=seed)

    files = {
        "source.edges": lambda path: save_edges(path, gs.edges),
        "source.feats": lambda path: save_features(path, gs.features),
        "target.edges": lambda path: save_edges(path, gt.edges),
        "target.feats": lambda path: save_features(path, gt.features),
        "anchors.tsv": lambda path: save_anchors(path, truth),
    }
    return _commit(out_dir, files)


def gradcheck_fixture(n=6, d_in=3, seed=0):
    """Tiny graph pair with Gaussian features and a strictly positive plan."""
    rng = np.random.default_rng(seed)
    gs = random_graph(n, avg_degree=2.0, d_in=d_in, features="gaussian", seed=seed)
    gt = random_graph(n, avg_degree=2.0, d_in=d_in, features="gaussian", seed=seed + 1)
    mu = np.full(n, 1.0 / n)
    t = round_to_marginals(rng.random((n, n)) + 0.1, mu, mu)
    return gs, gt, t


def run_gradcheck(n=6, d_in=3, gnn="gcn", dim=4, layers=2, seed=0, graphs=None):
    """Compare analytic and finite-difference gradients on a tiny instance.

    ``graphs`` may supply ``(gs, gt)``; a uniform product plan is used then.
    Instances with more than ``GRADCHECK_MAX_N`` nodes are refused.

    Returns the deviation report of :func:`gradient_check`.
    """
    if graphs is None:
        if n > GRADCHECK_MAX_N:
            raise SizeError(f"gradient check is limited to n <= {GRADCHECK_MAX_N}, got {n}")
        gs, gt, t = gradcheck_fixture(n, d_in, seed)
    else:
        gs, gt = graphs
        if max(gs.n, gt.n) > GRADCHECK_MAX_N:
            raise SizeError(
                f"gradient check is limited to n <= {GRADCHECK_MAX_N}, got {max(gs.n, gt.n)}"
            )
        if gs.feature_dim != gt.feature_dim:
            raise ShapeError("source and target graphs have different feature dimensions")
        t = np.outer(np.full(gs.n, 1.0 / gs.n), np.full(gt.n, 1.0 / gt.n))
    cfg = GwConfig(gnn=gnn, dim=dim, layers=layers)
    theta = init_gw_params(gs.feature_dim, cfg, seed)
    return gradient_check(gs, gt, t, theta)

