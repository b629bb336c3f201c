"""Physically-stratified evaluation: cluster frames by a 1-D difficulty
feature with a Gaussian mixture, label the clusters Hard/Medium/Easy, and
aggregate metrics per cluster.

Two feature sources are supported:

  valid_ratio     fraction of valid ground-truth pixels per frame (sensor
                  failure density; low ratio correlates with specularity)
  baseline_error  per-frame abs_rel of a reference model, read from the
                  manifest, so frames group by where the baseline fails
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .depthmap import DepthMap
from .errors import (
    InsufficientDataError,
    InvalidFeatureError,
    ShapeError,
    UnsupportedKError,
)
from .metrics import MetricSet, aggregate

DIFFICULTIES = ("Hard", "Medium", "Easy")
FEATURE_KINDS = ("valid_ratio", "baseline_error")

VARIANCE_FLOOR = 1e-8
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class GmmModel:
    """A k-component 1-D Gaussian mixture with its fitting trajectory."""

    k: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    feature_kind: str
    log_likelihoods: tuple = field(default=(), compare=False)
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        if not (weights.shape == means.shape == variances.shape == (self.k,)):
            raise ShapeError("weights, means, variances must all have shape (k,)")
        if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if (variances < VARIANCE_FLOOR - 1e-300).any():
            raise ValueError(f"variances must be >= variance floor {VARIANCE_FLOOR}")
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"feature_kind must be one of {FEATURE_KINDS}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    def to_dict(self, labeling: "DifficultyLabeling | None" = None) -> dict:
        return {
            "k": self.k,
            "weights": [float(w) for w in self.weights],
            "means": [float(m) for m in self.means],
            "variances": [float(v) for v in self.variances],
            "feature_kind": self.feature_kind,
            "labeling": None if labeling is None else {str(i): d for i, d in labeling.by_component.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "tuple[GmmModel, DifficultyLabeling | None]":
        model = cls(
            k=int(d["k"]),
            weights=np.asarray(d["weights"], dtype=np.float64),
            means=np.asarray(d["means"], dtype=np.float64),
            variances=np.asarray(d["variances"], dtype=np.float64),
            feature_kind=str(d["feature_kind"]),
        )
        labeling = d.get("labeling")
        if labeling is not None:
            labeling = DifficultyLabeling({int(i): str(name) for i, name in labeling.items()})
        return model, labeling


@dataclass(frozen=True)
class DifficultyLabeling:
    """Bijective map from component index to Hard/Medium/Easy."""

    by_component: Mapping[int, str]

    def __post_init__(self):
        names = sorted(self.by_component.values())
        if names != sorted(DIFFICULTIES):
            raise ValueError(f"labeling must assign exactly {DIFFICULTIES}, got {names}")


def valid_ratio(gt: DepthMap) -> float:
    """Fraction of pixels where the ground-truth sensor returned a value."""
    return gt.n_valid() / gt.values.size


def _check_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64).ravel()
    if not np.isfinite(x).all():
        raise InvalidFeatureError("features must all be finite")
    return x


def _log_gauss(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """log N(x | mean, var) for every (sample, component) pair; shape (n, k)."""
    d2 = (x[:, None] - means[None, :]) ** 2
    return -0.5 * (np.log(2.0 * np.pi * variances)[None, :] + d2 / variances[None, :])


def _log_joint(model: GmmModel, x: np.ndarray) -> np.ndarray:
    # log(w_k) + log N; weights can be 0 for collapsed components
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return logw[None, :] + _log_gauss(x, model.means, model.variances)


def responsibilities(model: GmmModel, features) -> np.ndarray:
    """Posterior p(component | sample); rows sum to 1. Shape (n, k)."""
    x = _check_features(features)
    lj = _log_joint(model, x)
    lse = np.logaddexp.reduce(lj, axis=1)
    return np.exp(lj - lse[:, None])


def mean_log_likelihood(model: GmmModel, features) -> float:
    x = _check_features(features)
    return float(np.mean(np.logaddexp.reduce(_log_joint(model, x), axis=1)))


def fit_gmm_1d(
    features,
    k: int,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    feature_kind: str = "valid_ratio",
    init_jitter: float = 0.0,
) -> GmmModel:
    """Fit a 1-D Gaussian mixture by EM.

    Initialization is deterministic: component means at the (i+0.5)/k sample
    quantiles, uniform weights, all variances at the sample variance. The
    seed only drives the optional Gaussian jitter on the initial means
    (init_jitter is a fraction of the feature standard deviation; 0 disables
    it), so runs with identical arguments reproduce bitwise.

    EM stops when the mean log-likelihood improves by less than tol or after
    max_iter iterations; the recorded trajectory is nondecreasing up to
    numerical slack.
    """
    x = _check_features(features)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if x.size < k:
        raise InsufficientDataError(f"{x.size} samples < {k} components")

    quantiles = (np.arange(k) + 0.5) / k
    means = np.quantile(x, quantiles)
    if init_jitter > 0.0:
        rng = np.random.default_rng(seed)
        means = means + rng.normal(0.0, init_jitter * max(x.std(), VARIANCE_FLOOR**0.5), k)
    variances = np.full(k, max(float(np.var(x)), VARIANCE_FLOOR))
    weights = np.full(k, 1.0 / k)

    model = GmmModel(k, weights, means, variances, feature_kind)
    trajectory = [mean_log_likelihood(model, x)]
    converged = False
    for _ in range(max_iter):
        resp = responsibilities(model, x)
        mass = resp.sum(axis=0)
        # components with no mass keep their parameters instead of dividing by 0
        safe = np.maximum(mass, np.finfo(np.float64).tiny)
        new_means = np.where(mass > 0, (resp * x[:, None]).sum(axis=0) / safe, model.means)
        centered = (x[:, None] - new_means[None, :]) ** 2
        new_vars = np.where(mass > 0, (resp * centered).sum(axis=0) / safe, model.variances)
        new_vars = np.maximum(new_vars, VARIANCE_FLOOR)
        new_weights = mass / x.size
        new_weights = new_weights / new_weights.sum()
        model = GmmModel(k, new_weights, new_means, new_vars, feature_kind)
        ll = mean_log_likelihood(model, x)
        improvement = ll - trajectory[-1]
        trajectory.append(ll)
        if improvement < tol:
            converged = True
            break
    return GmmModel(
        model.k,
        model.weights,
        model.means,
        model.variances,
        feature_kind,
        log_likelihoods=tuple(trajectory),
        converged=converged,
    )


def assign(model: GmmModel, features) -> np.ndarray:
    """Hard-assign each feature to its argmax-responsibility component.

    Ties break toward the lowest component index.
    """
    resp = responsibilities(model, features)
    return np.argmax(resp, axis=1)


def label_difficulty(model: GmmModel) -> DifficultyLabeling:
    """Order the three components by mean and name them Hard/Medium/Easy.

    valid_ratio features: Hard is the lowest-mean cluster (fewest valid
    pixels), Easy the highest. baseline_error features: Hard is the
    highest-mean cluster (largest baseline error), Easy the lowest. Equal
    means break ties by ascending component index.
    """
    if model.k != 3:
        raise UnsupportedKError(f"difficulty labeling requires k=3, got k={model.k}")
    order = sorted(range(3), key=lambda i: (model.means[i], i))
    if model.feature_kind == "baseline_error":
        order = order[::-1]
    return DifficultyLabeling({order[0]: "Hard", order[1]: "Medium", order[2]: "Easy"})


def stratified_report(
    labels: Sequence[int],
    difficulty: DifficultyLabeling,
    per_frame: Sequence[MetricSet],
) -> dict[str, tuple[int, MetricSet | None]]:
    """Group per-frame metrics by difficulty and frame-mean each group.

    A difficulty with no frames is reported as (0, None).
    """
    if len(labels) != len(per_frame):
        raise ShapeError(f"{len(labels)} labels vs {len(per_frame)} metric sets")
    groups: dict[str, list[MetricSet]] = {name: [] for name in DIFFICULTIES}
    for label, metric_set in zip(labels, per_frame):
        groups[difficulty.by_component[int(label)]].append(metric_set)
    return {
        name: (len(members), aggregate(members) if members else None)
        for name, members in groups.items()
    }


def save_model(path, model: GmmModel, labeling: DifficultyLabeling | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(labeling), f, indent=2)
        f.write("\n")


def load_model(path) -> tuple[GmmModel, DifficultyLabeling | None]:
    with open(path, "r", encoding="utf-8") as f:
        return GmmModel.from_dict(json.load(f))
