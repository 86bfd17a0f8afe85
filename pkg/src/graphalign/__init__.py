"""Unsupervised attributed graph alignment with learnable Gromov-Wasserstein costs."""
from .combine import (
    MatchSet,
    WeightedBipartite,
    build_bipartite,
    combine,
    ensemble_weights,
    max_weight_matching,
)
from .embed import GnnParams, feat_prop_trans, init_params, wl_alignment
from .errors import (
    AlignmentError,
    DegeneratePriorError,
    GradientError,
    NumericalError,
    ParseError,
    RangeError,
    ShapeError,
    SizeError,
)
from .graph import Graph, GroundTruth, gen_synthetic_pair, load_graph, random_graph
from .gw import GwConfig, GwParams, graft, gwd_objective, inter_cost, intra_cost
from .marginals import Marginals, adaptive_marginals, marginals_from_alignment, uniform_marginals
from .metrics import (
    MetricsReport,
    evaluate,
    hits_at_k,
    mean_average_precision,
    mutual_inconsistency_ratio,
    one_to_many_ratio,
)
from .pipeline import PipelineConfig, align_graphs, run_align, run_gen, run_gradcheck

__version__ = "0.1.0"
