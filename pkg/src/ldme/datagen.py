"""Synthetic instances with planted inliers and adversarial outliers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core_stats import Data, Dataset, Truth, as_points
from .errors import ValidationError
from .estimates import EstimateList

INLIER_MODELS = ("gaussian", "point-mass", "bounded-support")
OUTLIER_MODELS = ("far-clusters", "mirror-mean", "colinear-line", "random-uniform-in-ball")
ASSUMPTION_TOL = 0.05


@dataclass(frozen=True)
class InstanceSpec:
    """Parameters of a planted instance.

    ``outlier_count`` is the number of far clusters and defaults to
    ``ceil(1/alpha) - 1``. ``outlier_radius`` defaults to ``10 sqrt(d)``.
    Gaussian inliers have covariance ``inlier_scale**2 * I``.
    """

    d: int
    n: int
    alpha: float
    inlier_model: str = "gaussian"
    outlier_model: str = "far-clusters"
    outlier_count: int | None = None
    outlier_radius: float | None = None
    outlier_spread: float = 0.5
    inlier_scale: float = 0.5
    mean_norm: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.n < 1:
            raise ValidationError("d and n must be positive")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        if round(self.alpha * self.n) < 1:
            raise ValidationError("alpha * n < 1: no inliers")
        if self.inlier_model not in INLIER_MODELS:
            raise ValidationError(f"unknown inlier model {self.inlier_model!r}")
        if self.outlier_model not in OUTLIER_MODELS:
            raise ValidationError(f"unknown outlier model {self.outlier_model!r}")
        if self.outlier_count is not None and self.outlier_count < 1:
            raise ValidationError("outlier cluster count must be positive")
        if min(self.outlier_spread, self.inlier_scale, self.mean_norm) < 0:
            raise ValidationError("scales must be nonnegative")

    @property
    def n_inliers(self) -> int:
        return round(self.alpha * self.n)

    @property
    def clusters(self) -> int:
        if self.outlier_count is not None:
            return self.outlier_count
        return max(1, math.ceil(1.0 / self.alpha - 1e-9) - 1)

    @property
    def radius(self) -> float:
        if self.outlier_radius is not None:
            return self.outlier_radius
        return 10.0 * math.sqrt(self.d)

    def as_dict(self) -> dict:
        return asdict(self)


def _unit(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    g = rng.standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _inliers(spec: InstanceSpec, mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m, d = spec.n_inliers, spec.d
    if spec.inlier_model == "point-mass":
        return np.tile(mu, (m, 1))
    if spec.inlier_model == "gaussian":
        dev = spec.inlier_scale * rng.standard_normal((m, d))
    else:
        dev = rng.uniform(-1.0, 1.0, size=(m, d))
    # rescale so the second-moment bound holds exactly, not just in expectation
    value = float(np.linalg.norm(dev, 2) ** 2 / m)
    if value > 1.0:
        dev *= (1.0 - 1e-12) / math.sqrt(value)
    return mu + dev


def _outliers(
    spec: InstanceSpec, mu: np.ndarray, inliers: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    count, d = spec.n - spec.n_inliers, spec.d
    if count == 0:
        return np.zeros((0, d))
    r = spec.radius
    model = spec.outlier_model
    if model == "far-clusters":
        centers = mu + r * _unit(rng, spec.clusters, d)
        labels = np.arange(count) % spec.clusters
        return centers[labels] + spec.outlier_spread * rng.standard_normal((count, d))
    if model == "mirror-mean":
        fake = mu + r * _unit(rng, 1, d)[0]
        src = inliers[np.arange(count) % inliers.shape[0]]
        return 2.0 * fake - src
    if model == "colinear-line":
        u = _unit(rng, 1, d)[0]
        t = rng.uniform(-r, r, size=count)
        return mu + np.outer(t, u)
    radii = r * rng.uniform(size=count) ** (1.0 / d)
    return mu + radii[:, None] * _unit(rng, count, d)


def gen_instance(spec: InstanceSpec, rng: np.random.Generator | None = None) -> Dataset:
    """Draw a planted instance; rows are shuffled and the inlier set recorded."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    mu = spec.mean_norm * _unit(rng, 1, spec.d)[0] if spec.mean_norm > 0 else np.zeros(spec.d)
    good = _inliers(spec, mu, rng)
    bad = _outliers(spec, mu, good, rng)
    perm = rng.permutation(spec.n)
    points = np.empty((spec.n, spec.d))
    points[perm[: spec.n_inliers]] = good
    points[perm[spec.n_inliers :]] = bad
    inliers = np.sort(perm[: spec.n_inliers])
    return Dataset(points, Truth(mu, inliers, spec.alpha))


def check_assumption(data: Dataset) -> float:
    """Operator norm of the inlier second moment about the true mean."""
    if not isinstance(data, Dataset) or data.truth is None:
        raise ValidationError("check_assumption needs a dataset with ground truth")
    dev = data.points[data.truth.inlier_indices] - data.truth.true_mean
    if dev.shape[0] == 0:
        raise ValidationError("empty inlier set")
    return float(np.linalg.norm(dev, 2) ** 2 / dev.shape[0])


def assumption_holds(data: Dataset, tol: float = ASSUMPTION_TOL) -> bool:
    return check_assumption(data) <= 1.0 + tol


def eval_list(estimates: EstimateList | Data, truth: Truth) -> dict:
    """Error of the best candidate, list size, and ``sqrt(alpha) * error``."""
    means = estimates.means() if isinstance(estimates, EstimateList) else as_points(estimates)
    if means.size == 0:
        raise ValidationError("cannot evaluate an empty list")
    errs = np.linalg.norm(means - truth.true_mean, axis=1)
    best = int(np.argmin(errs))
    err = float(errs[best])
    return {
        "min_error": err,
        "min_sq_error": err * err,
        "list_size": int(means.shape[0]),
        "normalized_error": math.sqrt(truth.alpha) * err,
        "best_index": best,
    }


def aggregate(metrics: list[dict], key: str = "min_error") -> dict:
    vals = np.array([m[key] for m in metrics], dtype=np.float64)
    return {"median": float(np.median(vals)), "max": float(vals.max()), "count": int(vals.size)}
