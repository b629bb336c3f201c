"""stratdepth: stratified monocular-depth evaluation toolkit.

Masked depth-error metrics with median scaling, Gaussian-mixture difficulty
clustering, the self-supervised photometric/smoothness loss stack with
projective warping, a low-rank adapted linear layer with verified gradients,
and trajectory error with closed-form alignment.
"""

__version__ = "0.1.0"

from .depthmap import DepthMap
from .metrics import EvalOptions, MetricSet, aggregate, compute_metrics, median_scale
from .stratify import (
    DifficultyLabeling,
    GmmModel,
    assign,
    fit_gmm_1d,
    label_difficulty,
    stratified_report,
    valid_ratio,
)

__all__ = [
    "__version__",
    "DepthMap",
    "EvalOptions",
    "MetricSet",
    "aggregate",
    "compute_metrics",
    "median_scale",
    "DifficultyLabeling",
    "GmmModel",
    "assign",
    "fit_gmm_1d",
    "label_difficulty",
    "stratified_report",
    "valid_ratio",
]
