"""Small symmetric linear-operator toolkit.

An operator is anything with a ``shape`` and a ``matmat(block)`` method.
Dense arrays are wrapped on the way in. ``SumOperator`` is the running
aggregate used by the multiplicative-weights loop. It keeps references to
its terms, and terms that are covariances of one shared point array are
fused into a single weighted second moment plus low-rank center
corrections. This keeps each product at one pass over the data however many
terms have been added.
"""

from __future__ import annotations

import numpy as np

from .core_stats import DENSE_LIMIT, CovOperator
from .errors import DimensionMismatch, ValidationError


class DenseOperator:
    def __init__(self, matrix: np.ndarray) -> None:
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch("operator matrix must be square")
        self.matrix = m

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def matmat(self, block: np.ndarray) -> np.ndarray:
        return self.matrix @ block

    def dense(self) -> np.ndarray:
        return self.matrix


def as_operator(op):
    if isinstance(op, np.ndarray):
        return DenseOperator(op)
    if not hasattr(op, "matmat"):
        raise ValidationError(f"{type(op).__name__} is not an operator")
    return op


def dense_of(op) -> np.ndarray:
    """Materialize ``op`` (oracle path)."""
    op = as_operator(op)
    if hasattr(op, "dense"):
        return np.asarray(op.dense())
    d = op.shape[0]
    if d > DENSE_LIMIT:
        raise ValidationError("dense materialization is limited to d <= 512")
    return op.matmat(np.eye(d))


class _FusedCov:
    """Sum of scaled covariances over one point array."""

    def __init__(self, points: np.ndarray) -> None:
        self.points = points
        self.ref = points.mean(axis=0)
        self.shifted = points - self.ref
        self.agg = np.zeros(points.shape[0])
        # correction = left @ right.T
        self.left: list[np.ndarray] = []
        self.right: list[np.ndarray] = []
        n, d = points.shape
        self._use_gram = d <= DENSE_LIMIT and d <= n
        self._gram: np.ndarray | None = None

    def add(self, coef: float, op: CovOperator) -> None:
        f = coef * op.scale
        w = op.weights
        c = op.center - self.ref
        s = self.shifted.T @ w
        m = op.mass
        self.agg += f * w
        # sum_i w_i (x_i - c)(x_i - c)^T = X^T W X - s c^T - c s^T + m c c^T
        self.left += [-f * s, -f * c, f * m * c]
        self.right += [c, s, c]
        self._gram = None

    def copy(self) -> "_FusedCov":
        out = _FusedCov.__new__(_FusedCov)
        out.__dict__.update(self.__dict__)
        out.agg = self.agg.copy()
        out.left, out.right = list(self.left), list(self.right)
        return out

    def matmat(self, block: np.ndarray) -> np.ndarray:
        if self._use_gram:
            if self._gram is None:
                g = (self.shifted * self.agg[:, None]).T @ self.shifted
                lf = np.column_stack(self.left)
                rt = np.column_stack(self.right)
                g = g + lf @ rt.T
                self._gram = 0.5 * (g + g.T)
            return self._gram @ block
        z = self.shifted @ block
        z = z * (self.agg[:, None] if z.ndim == 2 else self.agg)
        out = self.shifted.T @ z
        lf = np.column_stack(self.left)
        rt = np.column_stack(self.right)
        return out + lf @ (rt.T @ block)


class SumOperator:
    """``shift * I + sum_j coef_j * op_j`` with references to every term."""

    def __init__(self, d: int, shift: float = 0.0) -> None:
        self.d = d
        self.shift = float(shift)
        self.terms: list[tuple[float, object]] = []
        self._fused: dict[int, _FusedCov] = {}
        self._other: list[tuple[float, object]] = []

    @property
    def shape(self) -> tuple[int, int]:
        return (self.d, self.d)

    def add(self, coef: float, op) -> None:
        op = as_operator(op)
        if op.shape != (self.d, self.d):
            raise DimensionMismatch("term dimension does not match the aggregate")
        self.terms.append((float(coef), op))
        if isinstance(op, CovOperator):
            key = id(op.points)
            if key not in self._fused:
                self._fused[key] = _FusedCov(op.points)
            self._fused[key].add(coef, op)
        else:
            self._other.append((float(coef), op))

    def snapshot(self, extra_shift: float = 0.0) -> "SumOperator":
        """Independent copy (optionally shifted) unaffected by later ``add`` calls."""
        out = SumOperator(self.d, self.shift + extra_shift)
        out.terms = list(self.terms)
        out._fused = {key: f.copy() for key, f in self._fused.items()}
        out._other = list(self._other)
        return out

    def matmat(self, block: np.ndarray) -> np.ndarray:
        block = np.asarray(block, dtype=np.float64)
        out = self.shift * block
        for fused in self._fused.values():
            out = out + fused.matmat(block)
        for coef, op in self._other:
            out = out + coef * op.matmat(block)
        return out

    def dense(self) -> np.ndarray:
        if self.d > DENSE_LIMIT:
            raise ValidationError("dense materialization is limited to d <= 512")
        out = self.shift * np.eye(self.d)
        for coef, op in self.terms:
            out = out + coef * dense_of(op)
        return out


class RemainderOperator:
    """``scale * (I - VV^T) A (I - VV^T)`` for orthonormal ``V``."""

    def __init__(self, base, basis: np.ndarray, scale: float = 1.0) -> None:
        self.base = as_operator(base)
        self.basis = basis
        self.scale = float(scale)

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    def _deflate(self, block: np.ndarray) -> np.ndarray:
        if self.basis.shape[1] == 0:
            return block
        return block - self.basis @ (self.basis.T @ block)

    def matmat(self, block: np.ndarray) -> np.ndarray:
        y = self.base.matmat(self._deflate(np.asarray(block, dtype=np.float64)))
        return self.scale * self._deflate(y)

    def dense(self) -> np.ndarray:
        a = dense_of(self.base)
        q = np.eye(a.shape[0]) - self.basis @ self.basis.T
        return self.scale * (q @ a @ q)
