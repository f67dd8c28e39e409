"""Soft filtering by whitened top-k scores.

Each round takes the approximate top-``k`` eigenspace of the weighted
covariance, scores every point by its whitened squared distance to the
weighted mean inside that space, and shrinks weights in proportion to the
scores. The loop stops once the ``k``-th eigenvalue drops below
``c / sqrt(total mass)``. The output list samples points uniformly and keeps
their component inside the final subspace, completing it with the weighted
mean outside.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core_stats import CovOperator, Data, Weights, as_points, as_weight_array, mass
from .counters import RunCounters
from .errors import DegenerateWeights, NonTermination, ValidationError, WhiteningSingularWarning
from .estimates import Candidate, Decomposition, EstimateList, safe_ceil
from .kpca import EigenBasis, power_iterate

LAM_FLOOR = 1e-12
OVERSAMPLE = 10


@dataclass(frozen=True)
class SiftConfig:
    alpha: float
    delta: float = 0.05
    termination_c: float = 4.0
    power_eps: float = 0.2
    power_const: float = 10.0
    k_override: int | None = None
    list_size_override: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")

    @property
    def k(self) -> int:
        return self.k_override or safe_ceil(4.0 / self.alpha)

    @property
    def list_size(self) -> int:
        if self.list_size_override:
            return self.list_size_override
        return safe_ceil(2.0 / self.alpha * math.log(2.0 / self.delta))


@dataclass(frozen=True)
class SiftRecord:
    mass: float
    mass_inliers: float | None
    lam_k: float
    threshold: float
    score_mean: float | None = None
    score_max: float | None = None


@dataclass
class SiftTrace:
    records: list[SiftRecord] = field(default_factory=list)
    final_weights: np.ndarray | None = None
    final_basis: EigenBasis | None = None
    weights: list[np.ndarray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return max(len(self.records) - 1, 0)


def is_safe(tau: np.ndarray, w: Weights, inliers: np.ndarray) -> bool:
    """Whether the inlier average of ``tau`` is at most half its overall average."""
    wa = as_weight_array(w)
    tau = np.asarray(tau, dtype=np.float64)
    inliers = np.asarray(inliers, dtype=np.int64)
    m_s = math.fsum(wa[inliers])
    if m_s == 0:
        return False
    lhs = math.fsum(wa[inliers] * tau[inliers]) / m_s
    rhs = 0.5 * math.fsum(wa * tau) / mass(wa)
    return lhs <= rhs * (1 + 1e-12)


def is_saturated(w: Weights, inliers: np.ndarray, alpha: float) -> bool:
    """Entrywise cap ``w <= 1/n`` and ``||w_S||_1 >= alpha * sqrt(||w||_1)``."""
    wa = as_weight_array(w)
    if wa.size and wa.max() > (1.0 + 1e-12) / wa.size:
        return False
    m_s = math.fsum(wa[np.asarray(inliers, dtype=np.int64)])
    return m_s >= alpha * math.sqrt(mass(wa)) * (1 - 1e-12)


class Auditor:
    """Collects saturation and safety checks against ground truth."""

    def __init__(self, inliers: np.ndarray, alpha: float) -> None:
        self.inliers = np.asarray(inliers, dtype=np.int64)
        self.alpha = alpha
        self.checks = {"saturation": 0, "safety": 0}
        self.violations: list[dict] = []

    def bound(self, kind: str, value: float, limit: float, where: str) -> None:
        """Record a check that ``value <= limit``."""
        self.checks[kind] = self.checks.get(kind, 0) + 1
        if not value <= limit:
            self.violations.append({"kind": kind, "where": where, "value": value, "limit": limit})

    def saturation(self, w: Weights, where: str) -> None:
        self.checks["saturation"] += 1
        if not is_saturated(w, self.inliers, self.alpha):
            self.violations.append({"kind": "saturation", "where": where})

    def safety(self, tau: np.ndarray, w: Weights, where: str) -> None:
        self.checks["safety"] += 1
        if not is_safe(tau, w, self.inliers):
            self.violations.append({"kind": "safety", "where": where})

    def for_subset(self, positions: np.ndarray) -> "Auditor":
        """An auditor for the rows ``positions`` that shares this one's tallies.

        Its inlier fraction is the one observed on the subset.
        """
        pos = {int(p): i for i, p in enumerate(positions)}
        local = np.array([pos[int(i)] for i in self.inliers if int(i) in pos], dtype=np.int64)
        sub = Auditor(local, local.size / max(len(pos), 1))
        sub.checks = self.checks
        sub.violations = self.violations
        return sub

    def for_subset_rows(self, local_inliers: np.ndarray, n_rows: int) -> "Auditor":
        """An auditor for another point set whose inlier rows are known."""
        local = np.asarray(local_inliers, dtype=np.int64)
        sub = Auditor(local, local.size / max(n_rows, 1))
        sub.checks = self.checks
        sub.violations = self.violations
        return sub


def sift_scores(
    data: Data, w: Weights, basis: EigenBasis | np.ndarray, sigma_k: np.ndarray
) -> np.ndarray:
    """Whitened scores ``||Sigma^{-1/2} V^T (X_i - mu_w)||^2``.

    Eigenvalues of ``sigma_k`` below ``1e-10`` times the largest are dropped
    (pseudo-inverse) with a ``WhiteningSingularWarning``.
    """
    points = as_points(data)
    wa = as_weight_array(w)
    v = basis.V if isinstance(basis, EigenBasis) else np.asarray(basis)
    mu = _weighted_mean(points, wa)
    lam, q = np.linalg.eigh(0.5 * (sigma_k + sigma_k.T))
    keep = lam > 1e-10 * max(float(lam.max()), 0.0)
    if not np.all(keep):
        warnings.warn(
            "whitening block is singular; using the pseudo-inverse",
            WhiteningSingularWarning,
            stacklevel=2,
        )
    z = (points - mu) @ (v @ q[:, keep])
    return (z * z) @ (1.0 / lam[keep])


def _weighted_mean(points: np.ndarray, wa: np.ndarray) -> np.ndarray:
    m = math.fsum(wa)
    if not m > 0:
        raise DegenerateWeights("all weights are zero")
    mu = (wa @ points) / m
    return mu + (wa @ (points - mu)) / m


def downweight(w: Weights, tau: np.ndarray) -> np.ndarray:
    """``w_i <- (1 - tau_i / tau_max) w_i`` with ``tau_max`` over the support.

    The maximizer with the smallest index is zeroed exactly.
    """
    wa = np.array(as_weight_array(w), dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    support = np.flatnonzero(wa > 0)
    if support.size == 0:
        raise DegenerateWeights("all weights are zero")
    if np.any(tau[support] < 0):
        raise ValidationError("scores must be nonnegative")
    local = tau[support]
    top = int(support[int(np.argmax(local))])
    t_max = float(tau[top])
    if t_max == 0:
        raise DegenerateWeights("all scores vanish on the support")
    out = np.where(wa > 0, (1.0 - tau / t_max) * wa, 0.0)
    out = np.clip(out, 0.0, None)
    out[top] = 0.0
    return out


def top_space(
    cov: CovOperator,
    k: int,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    *,
    const: float = 10.0,
    oversample: int = OVERSAMPLE,
    counters: RunCounters | None = None,
) -> EigenBasis | None:
    """Power iteration with trace and floor bounds on the spectrum.

    The block carries ``oversample`` extra columns, so the call is exact
    once ``k + oversample >= d``. Returns ``None`` for a zero operator.
    """
    lam_max = cov.trace()
    if not lam_max > 0:
        return None
    k = min(k, cov.shape[0])
    return power_iterate(
        cov, k, eps, delta, lam_max, LAM_FLOOR * lam_max, rng,
        const=const, oversample=oversample, counters=counters,
    )


def run_sift(
    data: Data,
    config: SiftConfig,
    rng: np.random.Generator,
    *,
    audit: Auditor | None = None,
    counters: RunCounters | None = None,
    inliers: np.ndarray | None = None,
    cluster_id: int = 0,
    record_weights: bool = False,
) -> tuple[EstimateList, SiftTrace]:
    """Run the soft filter and emit the sampled candidate list.

    Args:
        data: Points (array or Dataset).
        config: Constants of the run.
        rng: Randomness for power iteration and the output sample.
        audit: Optional ground-truth auditor, checked on every round that
            removes weight.
        counters: Optional instrumentation.
        inliers: Inlier indices, recorded in the trace when given.
        cluster_id: Tag stored on every candidate.
        record_weights: Keep the weight vector of every round in the trace.
    """
    points = as_points(data)
    n, d = points.shape
    alpha = config.alpha
    if n * alpha < 1:
        raise ValidationError("n * alpha < 1: no inliers are possible")
    k = min(config.k, d)
    power_delta = config.delta / (2.0 * n)
    w = np.full(n, 1.0 / n)
    trace = SiftTrace()
    basis = None
    for it in range(n + 1):
        beta = mass(w)
        if record_weights:
            trace.weights.append(w)
        cov = CovOperator(points, w)
        basis = top_space(
            cov, k, config.power_eps, power_delta, rng,
            const=config.power_const, counters=counters,
        )
        lam_k = float(basis.rayleigh[k - 1]) if basis is not None and basis.k >= k else 0.0
        threshold = config.termination_c / math.sqrt(beta)
        m_s = math.fsum(w[inliers]) if inliers is not None else None
        if lam_k < threshold:
            trace.records.append(SiftRecord(beta, m_s, lam_k, threshold))
            break
        if it == n:
            raise NonTermination(f"filter did not stop within {n} rounds")
        sigma = basis.V.T @ cov.matmat(basis.V)
        tau = sift_scores(points, w, basis, sigma)
        trace.records.append(
            SiftRecord(beta, m_s, lam_k, threshold, float(w @ tau / beta), float(tau.max()))
        )
        if audit is not None:
            audit.saturation(w, "sift")
            audit.safety(tau, w, "sift")
        w = downweight(w, tau)
        if counters is not None:
            counters.sift_iterations += 1
    trace.final_weights = w
    trace.final_basis = basis

    mu = _weighted_mean(points, w)
    v = basis.V if basis is not None else np.zeros((d, 0))
    fixed = mu - v @ (v.T @ mu)
    picks = rng.integers(0, n, size=config.list_size)
    out = EstimateList(alpha_effective={cluster_id: alpha})
    for i in picks:
        i = int(i)
        out.candidates.append(
            Candidate(fixed + v @ (v.T @ points[i]), Decomposition(fixed, v, i), cluster_id, "sift")
        )
    return out, trace
