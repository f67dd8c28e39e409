"""Good-tuple construction and the fast filtering wrappers.

``produce_good_tuple`` repeatedly calls ``bicriteria_filter`` until it gets
an orthonormal basis ``B`` plus saturated weights such that the weighted
covariance restricted to the complement of ``B`` is small. The filter grows
``B`` through ``decrease_kf_norm``. That routine runs Ky Fan matrix
multiplicative weights on the unnormalized covariances and returns in one
of three ways: the total mass halved, a spectral gap appeared (its top
directions join ``B``), or the Ky Fan norm halved.

``fast_sift`` and ``faster_sift`` then estimate the mean outside ``B`` from
the good weights and handle the ``B`` coordinates on a separate point set,
by soft filtering or by plain sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_stats import CovOperator, Data, Weights, as_points, as_weight_array, mass, weighted_mean
from .counters import RunCounters
from .errors import (
    DegenerateWeights,
    KOverflow,
    LoopCap,
    SaturationViolated,
    ValidationError,
)
from .estimates import Candidate, Decomposition, EstimateList, safe_ceil
from .fantope import dual_quadform
from .kpca import EigenBasis
from .mmw import DEFAULT_DELTA_ACC, MmwState, regret_audit
from .sift import Auditor, SiftConfig, run_sift, top_space

KF_CONSTANT = 612.0
MMW_STEP_CONSTANT = 425.0
GAMMA_CONSTANT = 110.0
GAP_RATIO = 3.5
SCORE_EPS = 0.05
SPECTRUM_EPS = 0.05
GOOD_TUPLE_C = 128.0
REGRET_AUDIT_MAX_D = 200

MASS_HALVED = "MassHalved"
OPERATOR_NORM_DROP = "OperatorNormDrop"
KY_FAN_HALVED = "KyFanHalved"


@dataclass(frozen=True)
class GoodTuple:
    B: np.ndarray
    w: np.ndarray

    @property
    def k(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class CaseResult:
    tag: str
    w: np.ndarray
    V: np.ndarray | None = None
    steps: int = 0


def kf_rank(alpha: float) -> int:
    return safe_ceil(KF_CONSTANT / alpha)


def mmw_horizon(d: int) -> int:
    return max(1, safe_ceil(MMW_STEP_CONSTANT * math.log(d)))


def loop_cap(R: float) -> float:
    """Pass cap of the bicriteria filter, ``5 log(R^2 / 100)`` (at least 1)."""
    return max(1.0, 5.0 * math.log(R * R / 100.0)) if R > 10 else 1.0


def good_tuple_cap(alpha: float) -> float:
    return 2.0 * math.log2(1.0 / alpha) + 1.0


def _decayed(wa: np.ndarray, log_factor: np.ndarray, K: int) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        out = wa * np.exp(K * log_factor)
    out[wa == 0] = 0.0
    return np.nan_to_num(out, nan=0.0)


def find_min_K(
    w: Weights,
    tau: np.ndarray,
    threshold: float,
    beta_bar: float,
    *,
    R: float | None = None,
) -> tuple[int, np.ndarray]:
    """Smallest ``K >= 1`` whose decayed weights halve the mass or push the
    weighted score sum to ``threshold``.

    The decayed weights are ``(1 - tau / tau_max)**K * w`` with ``tau_max``
    over the support, evaluated in log space. Both stopping quantities are
    nonincreasing in ``K``, so a binary search finds the minimum. The search
    range is ``[1, ceil(R^2)]`` when ``R`` is given and otherwise a bound
    that always suffices, ``tau_max * ||w||_1 / (e * threshold)``.
    """
    if not threshold > 0:
        raise ValidationError("threshold must be positive")
    wa = np.asarray(as_weight_array(w), dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise ValidationError("scores must be nonnegative")
    support = wa > 0
    if not support.any():
        raise DegenerateWeights("all weights are zero")
    t_max = float(tau[support].max())
    if t_max <= 0:
        raise ValidationError("scores vanish on the support")
    with np.errstate(divide="ignore"):
        log_factor = np.log1p(-np.minimum(tau / t_max, 1.0))

    def done(K: int) -> tuple[bool, np.ndarray]:
        wk = _decayed(wa, log_factor, K)
        return mass(wk) <= beta_bar / 2 or math.fsum(wk * tau) <= threshold, wk

    if R is not None:
        hi = max(1, math.ceil(R * R))
    else:
        hi = max(1, math.ceil(t_max * mass(wa) / (math.e * threshold)) + 1)
    ok, w_hi = done(hi)
    if not ok:
        raise KOverflow(f"no K <= {hi} meets either stopping condition")
    ok, w_lo = done(1)
    if ok:
        return 1, w_lo
    lo = 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        ok, wk = done(mid)
        if ok:
            hi, w_hi = mid, wk
        else:
            lo = mid
    return hi, w_hi


def _audit_levels(K: int) -> list[int]:
    levels = {0, K - 1}
    p = 1
    while p < K:
        levels.add(p)
        p *= 2
    return sorted(level for level in levels if 0 <= level < K)


def decrease_kf_norm(
    data: Data,
    w: Weights,
    gamma: float,
    delta: float,
    rng: np.random.Generator,
    *,
    alpha: float | None = None,
    k: int | None = None,
    R: float | None = None,
    steps: int | None = None,
    Delta: float = DEFAULT_DELTA_ACC,
    sketch: str = "auto",
    audit: Auditor | None = None,
    counters: RunCounters | None = None,
) -> CaseResult:
    """One win-win-win round on saturated weights.

    Args:
        data: Points, already projected away from the current basis.
        w: Saturated input weights.
        gamma: Approximation of the Ky Fan ``k``-norm of the covariance.
        delta: Failure probability of the round.
        rng: Randomness for every subroutine.
        alpha: Inlier fraction; sets ``k = ceil(612/alpha)`` unless ``k`` is
            given.
        k: Explicit Ky Fan rank.
        R: Diameter bound used to cap the removal search.
        steps: MMW horizon, ``ceil(425 log d)`` by default.
        Delta: Projection accuracy passed to the MMW loop.
        sketch: Sketch mode for the exponential estimates.
        audit: Optional ground-truth auditor for removal rounds.
        counters: Optional instrumentation.

    Returns:
        CaseResult tagged ``MassHalved``, ``OperatorNormDrop`` (with ``V``)
        or ``KyFanHalved``.
    """
    points = as_points(data)
    n, d = points.shape
    if k is None:
        if alpha is None:
            raise ValidationError("pass alpha or k")
        k = kf_rank(alpha)
    k_eff = min(k, d)
    horizon = mmw_horizon(d) if steps is None else steps
    sub_delta = delta / (3.0 * (horizon + 1))
    wcur = np.array(as_weight_array(w), dtype=np.float64)
    beta_bar = mass(wcur)
    threshold = gamma * beta_bar / 12.0

    top = top_space(CovOperator(points, wcur, normalized=False), 1, SPECTRUM_EPS, sub_delta, rng,
                    counters=counters)
    if top is None:
        return CaseResult(OPERATOR_NORM_DROP, wcur, np.zeros((d, 0)))
    rho = 1.05 * float(top.rayleigh[0])
    state = MmwState(d, k_eff, 1.0 / (2.1 * rho), rng, Delta=Delta, delta=delta / 3.0,
                     horizon=horizon, sketch=sketch, tight_lam_max=True, counters=counters)
    # dense gains are kept only for the regret audit
    gains = [] if audit is not None and d <= REGRET_AUDIT_MAX_D else None
    result = None
    for t in range(horizon):
        cov = CovOperator(points, wcur)
        basis = top_space(cov, k_eff, SPECTRUM_EPS, sub_delta, rng, counters=counters)
        if basis is None:
            result = CaseResult(OPERATOR_NORM_DROP, wcur, np.zeros((d, 0)), t)
            break
        lam_1 = float(basis.rayleigh[0])
        lam_k = float(basis.rayleigh[k_eff - 1]) if basis.k >= k_eff else 0.0
        if lam_1 >= GAP_RATIO * lam_k:
            result = CaseResult(OPERATOR_NORM_DROP, wcur, basis.V, t)
            break
        cert = state.certificate()
        tau = dual_quadform(cert, points - cov.center, SCORE_EPS, sub_delta, rng, sketch=sketch)
        tau = np.maximum(tau, 0.0)
        if float(wcur @ tau) > threshold:
            K, w_next = find_min_K(wcur, tau, threshold, beta_bar, R=R)
            if audit is not None:
                _audit_removal(audit, wcur, tau, K)
            wcur = w_next
            if mass(wcur) <= beta_bar / 2:
                result = CaseResult(MASS_HALVED, wcur, None, t)
                break
        gain = CovOperator(points, wcur, normalized=False)
        state.push(gain)
        if gains is not None:
            gains.append(gain.dense())
    if result is None:
        result = CaseResult(KY_FAN_HALVED, wcur, None, horizon)
    if gains:
        rep = regret_audit(state, gains)
        audit.bound("regret", rep.lhs, rep.rhs + 1e-9 * max(1.0, abs(rep.rhs)), "decrease_kf_norm")
    if counters is not None:
        counters.max_mmw_steps = max(counters.max_mmw_steps, result.steps)
    return result


def _audit_removal(audit: Auditor, w: np.ndarray, tau: np.ndarray, K: int) -> None:
    t_max = float(tau[w > 0].max())
    with np.errstate(divide="ignore"):
        log_factor = np.log1p(-np.minimum(tau / t_max, 1.0))
    for level in _audit_levels(K):
        wl = _decayed(w, log_factor, level)
        audit.saturation(wl, "decrease_kf_norm")
        audit.safety(tau, wl, "decrease_kf_norm")


def _project_out(points: np.ndarray, basis: np.ndarray) -> np.ndarray:
    if basis.shape[1] == 0:
        return points
    out = points - (points @ basis) @ basis.T
    return out - (out @ basis) @ basis.T


def _append(basis: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if cols.shape[1] == 0:
        return basis
    if basis.shape[1]:
        cols = cols - basis @ (basis.T @ cols)
        cols = cols - basis @ (basis.T @ cols)
    q, r = np.linalg.qr(cols)
    keep = np.abs(np.diag(r)) > 1e-10
    return np.hstack([basis, q[:, keep]])


def ky_fan_estimate(
    cov: CovOperator, k: int, delta: float, rng: np.random.Generator,
    counters: RunCounters | None = None,
) -> tuple[float, EigenBasis | None]:
    """Sum of the ``k`` Rayleigh quotients from power iteration."""
    basis = top_space(cov, k, SPECTRUM_EPS, delta, rng, counters=counters)
    if basis is None:
        return 0.0, None
    return float(basis.rayleigh.sum()), basis


def bicriteria_filter(
    data: Data,
    delta: float,
    w: Weights,
    rng: np.random.Generator,
    *,
    alpha: float,
    R: float,
    k: int | None = None,
    steps: int | None = None,
    sketch: str = "auto",
    audit: Auditor | None = None,
    counters: RunCounters | None = None,
) -> CaseResult | GoodTuple:
    """Grow a basis until the complement covariance is certified small, or
    return early once the mass has halved."""
    points = as_points(data)
    n, d = points.shape
    k = kf_rank(alpha) if k is None else k
    horizon = mmw_horizon(d) if steps is None else steps
    cap = loop_cap(R)
    sub_delta = delta / cap
    gamma_delta = sub_delta / (3.0 * (horizon + 1))
    wcur = np.array(as_weight_array(w), dtype=np.float64)
    beta_bar = mass(wcur)
    B = np.zeros((d, 0))
    passes = 0
    try:
        while True:
            if mass(wcur) <= beta_bar / 2:
                return CaseResult(MASS_HALVED, wcur)
            passes += 1
            if passes > cap:
                raise LoopCap(f"bicriteria filter exceeded {cap:.1f} passes")
            proj = _project_out(points, B)
            cov = CovOperator(proj, wcur)
            gamma, basis = ky_fan_estimate(cov, min(k, d), gamma_delta, rng, counters)
            if gamma < GAMMA_CONSTANT * k / math.sqrt(mass(wcur)):
                if basis is not None:
                    B = _append(B, basis.V)
                return GoodTuple(B, wcur)
            res = decrease_kf_norm(
                proj, wcur, gamma, sub_delta, rng, k=k, R=R, steps=steps,
                sketch=sketch, audit=audit, counters=counters,
            )
            wcur = res.w
            if res.tag == MASS_HALVED:
                return res
            if res.tag == OPERATOR_NORM_DROP:
                B = _append(B, res.V)
    finally:
        if counters is not None:
            counters.bicriteria_passes += passes
            counters.max_bicriteria_passes = max(counters.max_bicriteria_passes, passes)


def produce_good_tuple(
    data: Data,
    delta: float,
    rng: np.random.Generator,
    *,
    alpha: float,
    R: float,
    k: int | None = None,
    steps: int | None = None,
    sketch: str = "auto",
    audit: Auditor | None = None,
    counters: RunCounters | None = None,
) -> GoodTuple:
    """Restart the bicriteria filter from its own output until it yields a
    good tuple."""
    points = as_points(data)
    n = points.shape[0]
    w = np.full(n, 1.0 / n)
    sub_delta = delta / max(1.0, 2.0 * math.log2(1.0 / alpha))
    calls = 0
    try:
        while True:
            calls += 1
            res = bicriteria_filter(
                points, sub_delta, w, rng, alpha=alpha, R=R, k=k, steps=steps,
                sketch=sketch, audit=audit, counters=counters,
            )
            if isinstance(res, GoodTuple):
                return res
            w = res.w
            if mass(w) < alpha * alpha:
                raise SaturationViolated(
                    f"mass {mass(w):.3e} fell below alpha^2 without a good tuple"
                )
    finally:
        if counters is not None:
            counters.good_tuple_calls += calls
            counters.max_good_tuple_calls = max(counters.max_good_tuple_calls, calls)


def complement_norm(data: Data, tup: GoodTuple) -> float:
    """``||(I - BB^T) Cov_w (I - BB^T)||_op`` computed densely."""
    proj = _project_out(as_points(data), tup.B)
    cov = CovOperator(proj, tup.w).dense()
    return float(np.linalg.eigvalsh(cov)[-1]) if cov.size else 0.0


def _fast_part(points: np.ndarray, tup: GoodTuple) -> np.ndarray:
    mu = weighted_mean(points, tup.w)
    return mu - tup.B @ (tup.B.T @ mu)


def _fill(mu_fast: np.ndarray, B: np.ndarray, size: int, n_slow: int, rng, tag: str,
          cluster_id: int) -> list[Candidate]:
    picks = rng.integers(0, n_slow, size=size)
    return [Candidate(mu_fast.copy(), Decomposition(mu_fast, B, int(i)), cluster_id, tag)
            for i in picks]


def fast_sift(
    T_fast: Data,
    T_slow: Data,
    delta: float,
    rng: np.random.Generator,
    *,
    alpha: float,
    R: float,
    slow_alpha: float | None = None,
    k: int | None = None,
    steps: int | None = None,
    sketch: str = "auto",
    audit: Auditor | None = None,
    slow_audit: Auditor | None = None,
    counters: RunCounters | None = None,
    cluster_id: int = 0,
) -> tuple[EstimateList, GoodTuple]:
    """Good tuple on ``T_fast``, soft filter on ``T_slow`` inside ``span(B)``.

    Candidates are ``mu_fast + B c`` for the filter's candidates ``c`` in
    ``B`` coordinates, with decompositions lifted back to the ambient space.
    """
    fast = as_points(T_fast)
    slow = as_points(T_slow)
    if fast.shape[1] != slow.shape[1]:
        raise ValidationError("fast and slow parts differ in dimension")
    tup = produce_good_tuple(fast, delta / 2, rng, alpha=alpha, R=R, k=k, steps=steps,
                             sketch=sketch, audit=audit, counters=counters)
    mu_fast = _fast_part(fast, tup)
    a_slow = alpha if slow_alpha is None else slow_alpha
    config = SiftConfig(alpha=a_slow, delta=delta / 2)
    out = EstimateList(alpha_effective={cluster_id: alpha})
    if tup.k == 0:
        out.candidates = _fill(mu_fast, tup.B, config.list_size, slow.shape[0], rng,
                               "fast", cluster_id)
        return out, tup
    coords = slow @ tup.B
    inner, _ = run_sift(coords, config, rng, audit=slow_audit, counters=counters,
                        cluster_id=cluster_id)
    for c in inner.candidates:
        dec = c.decomposition
        fixed = mu_fast + tup.B @ dec.fixed
        out.candidates.append(Candidate(
            mu_fast + tup.B @ c.mean,
            Decomposition(fixed, tup.B @ dec.basis, dec.index),
            cluster_id,
            "fast",
        ))
    return out, tup


def faster_list_size(alpha: float, delta: float) -> int:
    return safe_ceil(2.0 / alpha * math.log(4.0 / (delta * alpha)))


def faster_sift(
    T_fast: Data,
    T_slow: Data,
    delta: float,
    rng: np.random.Generator,
    *,
    alpha: float,
    R: float,
    k: int | None = None,
    steps: int | None = None,
    sketch: str = "auto",
    audit: Auditor | None = None,
    counters: RunCounters | None = None,
    cluster_id: int = 0,
) -> tuple[EstimateList, GoodTuple]:
    """Good tuple on ``T_fast``, then uniform samples of ``T_slow`` projected
    onto ``span(B)``."""
    fast = as_points(T_fast)
    slow = as_points(T_slow)
    if fast.shape[1] != slow.shape[1]:
        raise ValidationError("fast and slow parts differ in dimension")
    tup = produce_good_tuple(fast, delta / 2, rng, alpha=alpha, R=R, k=k, steps=steps,
                             sketch=sketch, audit=audit, counters=counters)
    mu_fast = _fast_part(fast, tup)
    out = EstimateList(alpha_effective={cluster_id: alpha})
    size = faster_list_size(alpha, delta)
    picks = rng.integers(0, slow.shape[0], size=size)
    for i in picks:
        i = int(i)
        x = slow[i]
        out.candidates.append(Candidate(
            mu_fast + tup.B @ (tup.B.T @ x),
            Decomposition(mu_fast, tup.B, i),
            cluster_id,
            "faster",
        ))
    return out, tup
