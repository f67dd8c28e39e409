"""Weighted empirical statistics and implicit covariance operators.

Weights are kept in absolute scale (entries at most ``1/n``) and are never
renormalized in place; every normalization happens when a statistic is
read. Covariances are exposed as operators that act on blocks of vectors
through the ``n x d`` data, so the ``d x d`` matrix is only formed when it
is cheaper than the implicit product or when a dense oracle asks for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateWeights, DimensionMismatch, ValidationError

#: Largest dimension for which dense materialization is allowed.
DENSE_LIMIT = 512


@dataclass(frozen=True)
class Truth:
    """Ground truth attached to a synthetic instance."""

    true_mean: np.ndarray
    inlier_indices: np.ndarray
    alpha: float


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    truth: Truth | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValidationError(f"points must be a 2-D array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points contain non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.truth is not None:
            idx = np.asarray(self.truth.inlier_indices, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= pts.shape[0]):
                raise ValidationError("inlier index out of range")
            if len(np.unique(idx)) != idx.size:
                raise ValidationError("inlier indices must be distinct")
            if round(self.truth.alpha * pts.shape[0]) != idx.size:
                raise ValidationError("inlier count must equal round(alpha * n)")
            mu = np.asarray(self.truth.true_mean, dtype=np.float64)
            if mu.shape != (pts.shape[1],):
                raise DimensionMismatch("true mean has the wrong dimension")
            object.__setattr__(
                self, "truth", Truth(mu, idx, float(self.truth.alpha))
            )

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Restrict to ``indices``, remapping the inlier set if present."""
        indices = np.asarray(indices, dtype=np.int64)
        truth = None
        if self.truth is not None:
            pos = {int(j): i for i, j in enumerate(indices)}
            inl = np.array(
                sorted(pos[int(i)] for i in self.truth.inlier_indices if int(i) in pos),
                dtype=np.int64,
            )
            alpha = inl.size / max(indices.size, 1)
            truth = Truth(self.truth.true_mean, inl, alpha)
        return Dataset(self.points[indices], truth)


class WeightVector:
    """Nonnegative per-point weights with a compensated cached mass."""

    __slots__ = ("values", "_mass")

    def __init__(self, values: np.ndarray, *, check_cap: bool = True) -> None:
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError("weights must be one-dimensional")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValidationError("weights must be finite and nonnegative")
        if check_cap and arr.size and arr.max() > (1.0 + 1e-12) / arr.size:
            raise ValidationError("weights exceed the 1/n entrywise cap")
        arr.flags.writeable = False
        self.values = arr
        self._mass: float | None = None

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.values.size

    @property
    def mass(self) -> float:
        if self._mass is None:
            self._mass = math.fsum(self.values)
        return self._mass

    def mass_on(self, indices: np.ndarray) -> float:
        return math.fsum(self.values[np.asarray(indices, dtype=np.int64)])


Weights = Union[WeightVector, np.ndarray, Sequence[float]]
Data = Union[Dataset, np.ndarray]


def as_points(data: Data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.points
    pts = np.asarray(data, dtype=np.float64)
    if pts.ndim != 2:
        raise ValidationError(f"points must be a 2-D array, got shape {pts.shape}")
    return pts


def as_weight_array(w: Weights) -> np.ndarray:
    if isinstance(w, WeightVector):
        return w.values
    return np.asarray(w, dtype=np.float64)


def mass(w: Weights) -> float:
    if isinstance(w, WeightVector):
        return w.mass
    return math.fsum(np.asarray(w, dtype=np.float64))


def _restricted(points: np.ndarray, w: Weights, subset) -> np.ndarray:
    wa = as_weight_array(w)
    if wa.shape != (points.shape[0],):
        raise DimensionMismatch(
            f"weights have length {wa.shape[0]}, data has {points.shape[0]} points"
        )
    if subset is None:
        return wa
    idx = np.asarray(subset, dtype=np.int64)
    if idx.size == 0:
        raise DegenerateWeights("empty subset")
    out = np.zeros_like(wa)
    out[idx] = wa[idx]
    return out


def _mean(points: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float]:
    m = math.fsum(w)
    if not m > 0:
        raise DegenerateWeights("zero mass on the requested subset")
    mu = (w @ points) / m
    # one step of residual correction; the residual is zero in exact arithmetic
    mu += (w @ (points - mu)) / m
    return mu, m


def weighted_mean(data: Data, w: Weights, subset=None) -> np.ndarray:
    """Weighted mean of ``data`` over ``subset`` (all points when omitted)."""
    points = as_points(data)
    return _mean(points, _restricted(points, w, subset))[0]


class CovOperator:
    """Implicit weighted covariance ``sum_i w_i (X_i - c)(X_i - c)^T / Z``.

    ``Z`` is the total weight when ``normalized`` and 1 otherwise. The
    product with a block ``V`` is evaluated as ``M^T (M V)`` where row ``i``
    of ``M`` is ``sqrt(w_i) (X_i - c)``. For ``d <= min(n, 512)`` the Gram
    matrix is cached on first use, which is the cheaper way to apply the
    same operator many times.
    """

    def __init__(
        self,
        points: np.ndarray,
        weights: np.ndarray,
        center: np.ndarray | None = None,
        normalized: bool = True,
        *,
        dense_cache: bool = True,
    ) -> None:
        self.points = points
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (points.shape[0],):
            raise DimensionMismatch("weights and points disagree on n")
        if center is None:
            self.center, self.mass = _mean(points, self.weights)
        else:
            self.center = np.asarray(center, dtype=np.float64)
            self.mass = math.fsum(self.weights)
        self.normalized = normalized
        if normalized and not self.mass > 0:
            raise DegenerateWeights("cannot normalize a zero-mass covariance")
        self.scale = 1.0 / self.mass if normalized else 1.0
        n, d = points.shape
        self._use_gram = dense_cache and d <= DENSE_LIMIT and d <= n
        self._gram: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        d = self.points.shape[1]
        return (d, d)

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights)

    def centered_rows(self) -> np.ndarray:
        return self.sqrt_weights[:, None] * (self.points - self.center)

    def rank_bound(self) -> int:
        nnz = int(np.count_nonzero(self.weights))
        return min(self.points.shape[1], nnz)

    def trace(self) -> float:
        diff = self.points - self.center
        return self.scale * float(self.weights @ np.einsum("ij,ij->i", diff, diff))

    def _gram_matrix(self) -> np.ndarray:
        if self._gram is None:
            diff = self.points - self.center
            g = (diff * self.weights[:, None]).T @ diff
            self._gram = 0.5 * (g + g.T)
        return self._gram

    def matmat(self, block: np.ndarray) -> np.ndarray:
        block = np.asarray(block, dtype=np.float64)
        if block.shape[0] != self.points.shape[1]:
            raise DimensionMismatch(
                f"operator acts on dimension {self.points.shape[1]}, got {block.shape[0]}"
            )
        if self._use_gram:
            return self.scale * (self._gram_matrix() @ block)
        z = self.points @ block - self.center @ block
        z *= self.weights[:, None] if z.ndim == 2 else self.weights
        out = self.points.T @ z - np.multiply.outer(self.center, z.sum(axis=0))
        return self.scale * out

    def dense(self) -> np.ndarray:
        if self.points.shape[1] > DENSE_LIMIT:
            raise ValidationError("dense materialization is limited to d <= 512")
        return self.scale * self._gram_matrix()


def weighted_cov(
    data: Data, w: Weights, subset=None, normalized: bool = True, **kwargs
) -> CovOperator:
    """Covariance operator of ``data`` under ``w`` restricted to ``subset``."""
    points = as_points(data)
    wa = _restricted(points, w, subset)
    if not math.fsum(wa) > 0:
        raise DegenerateWeights("zero mass on the requested subset")
    return CovOperator(points, wa, None, normalized, **kwargs)


def cov_matvec(op, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != op.shape[1]:
        raise DimensionMismatch(f"expected a vector of length {op.shape[1]}")
    return op.matmat(v)
