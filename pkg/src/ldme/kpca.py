"""Randomized simultaneous power iteration for approximate top-k eigenspaces.

The basis returned is an orthonormal basis of ``span(A^N G)`` for a
Gaussian block ``G``. It is re-orthonormalized after every product and
finally rotated by Rayleigh-Ritz, so the per-column Rayleigh quotients
come out sorted. The number of products follows
``N = ceil(C / eps * log(d / (delta * eps) * lam_max / lam_min))``.

Callers that only need the off-diagonal block ``(I - P) A P`` to be small
can pass ``residual_tol`` to stop as soon as that block is certified below
the tolerance. The Fantope projection uses this early exit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .counters import RunCounters
from .errors import NotPSD, ValidationError
from .linop import as_operator

POWER_CONSTANT = 10.0
RANK_TOL = 1e-11


@dataclass(frozen=True)
class EigenBasis:
    V: np.ndarray
    rayleigh: np.ndarray
    eps: float
    requested_k: int
    iterations: int
    residual: float | None = None

    @property
    def k(self) -> int:
        return self.V.shape[1]

    @property
    def reduced(self) -> bool:
        return self.k < self.requested_k

    @property
    def projector(self) -> np.ndarray:
        return self.V @ self.V.T


def iteration_count(
    d: int, eps: float, delta: float, lam_max: float, lam_min: float,
    const: float = POWER_CONSTANT,
) -> int:
    ratio = max(lam_max / lam_min, 1.0)
    return max(1, math.ceil(const / eps * math.log(d / (delta * eps) * ratio)))


def power_iterate(
    op,
    k: int,
    eps: float,
    delta: float,
    lam_max: float,
    lam_min: float,
    rng: np.random.Generator,
    *,
    const: float = POWER_CONSTANT,
    residual_tol: float | None = None,
    max_iters: int | None = None,
    check_every: int = 5,
    oversample: int = 0,
    counters: RunCounters | None = None,
) -> EigenBasis:
    """Approximate top-``k`` eigenspace of a PSD operator.

    Args:
        op: PSD operator (anything with ``shape`` and ``matmat``) or array.
        k: Requested number of directions. It is reduced to the numerical
            rank of the operator when that is smaller; ``EigenBasis.reduced``
            records this.
        eps: Target multiplicative accuracy.
        delta: Failure probability.
        lam_max: Upper bound on the spectrum.
        lam_min: Lower bound on the nonzero spectrum of the working subspace.
        rng: Source of the Gaussian starting block.
        const: Constant in the iteration count.
        residual_tol: If given, stop once ``||(I - P) A P||_op`` falls
            below it.
        max_iters: Optional hard cap on the number of products.
        oversample: Extra block columns. Iterating on ``k + oversample``
            columns and keeping the top ``k`` Ritz vectors converges at the
            rate of the gap after the block instead of the gap after ``k``.

    Returns:
        EigenBasis with Ritz vectors sorted by decreasing Rayleigh quotient.
    """
    op = as_operator(op)
    d = op.shape[0]
    if not 1 <= k <= d:
        raise ValidationError(f"k must lie in [1, {d}], got {k}")
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise ValidationError("eps and delta must lie in (0, 1)")
    if not lam_max >= lam_min > 0:
        raise ValidationError("need lam_max >= lam_min > 0")
    if oversample < 0:
        raise ValidationError("oversample must be nonnegative")
    n_iter = iteration_count(d, eps, delta, lam_max, lam_min, const)
    if max_iters is not None:
        n_iter = min(n_iter, max_iters)
    if counters is not None:
        counters.spectrum_calls += 1

    width = min(d, k + oversample)
    y = op.matmat(rng.standard_normal((d, width)))
    u, s, _ = np.linalg.svd(y, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    if rank == 0:
        return EigenBasis(np.zeros((d, 0)), np.zeros(0), eps, k, 1, 0.0)
    if rank < k and counters is not None:
        counters.k_reductions += 1
    q = u[:, :rank]
    keep = min(k, rank)

    residual = None
    done = 1
    y = None
    # a rank-deficient first product already spans the whole range
    exact = rank < width or rank == d
    while done < n_iter and not exact:
        y = op.matmat(q)
        if residual_tol is not None and done % check_every == 0:
            residual = _ritz_residual(q, y, keep)
            if residual <= residual_tol:
                break
        q, _ = np.linalg.qr(y)
        y = None
        done += 1
    if counters is not None:
        counters.power_iterations += done

    if y is None:
        y = op.matmat(q)
    h = q.T @ y
    h = 0.5 * (h + h.T)
    evals, evecs = np.linalg.eigh(h)
    order = np.argsort(evals, kind="stable")[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = max(float(np.max(np.abs(evals))), np.finfo(float).tiny)
    if evals[-1] < -1e-9 * top:
        raise NotPSD(f"negative Rayleigh quotient {evals[-1]:.3e}")
    evals, evecs = evals[:keep], evecs[:, :keep]
    if residual_tol is not None:
        residual = float(np.linalg.norm(y @ evecs - (q @ evecs) * evals, 2))
    v = q @ evecs
    return EigenBasis(v, np.maximum(evals, 0.0), eps, k, done, residual)


def _ritz_residual(q: np.ndarray, y: np.ndarray, keep: int) -> float:
    """``||(I - P) A V||_op`` for the top ``keep`` Ritz vectors of ``span(q)``."""
    h = q.T @ y
    evals, evecs = np.linalg.eigh(0.5 * (h + h.T))
    evals, evecs = evals[::-1][:keep], evecs[:, ::-1][:, :keep]
    return float(np.linalg.norm(y @ evecs - (q @ evecs) * evals, 2))


class SandwichCheck(NamedTuple):
    ok: bool
    slack: float
    witness: np.ndarray | None


def _split(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    p = v @ v.T
    q = np.eye(a.shape[0]) - p
    return p @ a @ p + q @ a @ q


def verify_sandwich(a: np.ndarray, basis, eps: float) -> SandwichCheck:
    """Check ``(1-eps) B <= A <= (1+eps) B`` with ``B = PAP + (I-P)A(I-P)``.

    ``basis`` may be an :class:`EigenBasis` or a matrix with orthonormal
    columns. The witness is the eigenvector of the most violated side.
    """
    a = np.asarray(a, dtype=np.float64)
    v = basis.V if isinstance(basis, EigenBasis) else np.asarray(basis)
    b = _split(a, v)
    tol = 1e-8 * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    worst = (math.inf, None)
    for m in (a - (1 - eps) * b, (1 + eps) * b - a):
        m = 0.5 * (m + m.T)
        w, vecs = np.linalg.eigh(m)
        if w[0] < worst[0]:
            worst = (float(w[0]), vecs[:, 0])
    ok = worst[0] >= -tol
    return SandwichCheck(ok, worst[0], None if ok else worst[1])


def sandwich_eps(a: np.ndarray, basis) -> float:
    """Smallest eps for which the sandwich holds (``a`` positive definite)."""
    a = np.asarray(a, dtype=np.float64)
    v = basis.V if isinstance(basis, EigenBasis) else np.asarray(basis)
    b = _split(a, v)
    b = 0.5 * (b + b.T)
    w = scipy.linalg.eigh(a - b, b, eigvals_only=True)
    return float(np.max(np.abs(w)))
