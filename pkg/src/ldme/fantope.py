r"""Bregman projection onto the k-Fantope ``{0 <= Y <= I, Tr Y = k}``.

Under the matrix-entropy regularizer ``r(Y) = <Y, log Y> - Tr Y`` the
projection of a symmetric ``S`` with eigenpairs ``(lam_j, v_j)`` is

    Y = sum_j k * exp(min(tau, lam_j)) / N * v_j v_j^T,
    N = sum_j exp(min(tau, lam_j)),

where the truncation level ``tau`` is the largest value satisfying
``k * exp(tau) <= N``. The projection is invariant under ``S -> S + cI``.

The approximate projection never forms ``S``. It keeps the top of the
spectrum explicitly (power iteration plus Rayleigh-Ritz). The deflated
remainder ``(1 - c)(I-P) S (I-P)`` is kept only implicitly. Its
exponential is touched only through the products
``p(A/2) X``, where ``p`` is a polynomial approximant of the exponential and
``X`` is either a random sign sketch or, when the sketch would be at least
as wide as the dimension, the deflating projector itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .counters import RunCounters
from .errors import EstimatorFailure, ValidationError
from .kpca import power_iterate
from .linop import RemainderOperator, as_operator, dense_of

# ---------------------------------------------------------------------------
# exact projection (dense oracle path)
# ---------------------------------------------------------------------------


def truncation_level(top: np.ndarray, k: int, log_tail: float = -math.inf) -> float:
    """Largest ``tau`` with ``k e^tau <= sum_j e^{min(tau, top_j)} + e^{log_tail}``.

    ``top`` holds the eigenvalues that may be truncated and ``log_tail`` the
    log of an untruncated remainder mass. The equation is piecewise
    closed-form in the number ``l`` of truncated entries, so the scan below
    is exact.
    """
    lam = np.sort(np.asarray(top, dtype=np.float64))[::-1]
    m = lam.size
    if m == 0:
        raise ValidationError("need at least one eigenvalue")
    # suffix log-sum-exp of lam[l:] merged with the tail
    suffix = np.empty(m + 1)
    suffix[m] = log_tail
    for j in range(m - 1, -1, -1):
        suffix[j] = np.logaddexp(lam[j], suffix[j + 1])
    if k > m and log_tail == -math.inf:
        raise ValidationError("k exceeds the number of eigenvalues")

    def slack(x: float) -> float:
        return 1e-12 * max(1.0, abs(x))

    for ell in range(min(k - 1, m) + 1):
        tau = suffix[ell] - math.log(k - ell)
        upper_ok = ell == 0 or tau <= lam[ell - 1] + slack(lam[ell - 1])
        lower_ok = ell == m or tau >= lam[ell] - slack(lam[ell])
        if upper_ok and lower_ok:
            return float(tau)
    # only reachable through rounding when k == m: every entry sits at the cap
    return float(lam[min(k, m) - 1])


def solve_tau(eigs, k: int) -> float:
    """Truncation level of the exact Fantope projection."""
    lam = np.asarray(eigs, dtype=np.float64)
    if not 1 <= k <= lam.size:
        raise ValidationError(f"k must lie in [1, {lam.size}]")
    return truncation_level(lam, k)


def solve_tau_bisection(eigs, k: int, tol: float = 1e-13) -> float:
    """Reference solver: bisection on ``k e^tau - sum e^{min(tau, lam)}``."""
    lam = np.asarray(eigs, dtype=np.float64)
    if k == lam.size:
        return float(lam.min())
    shift = lam.max()
    lam = lam - shift

    def gap(t: float) -> float:
        return k * math.exp(t) - float(np.exp(np.minimum(t, lam)).sum())

    lo, hi = float(lam.min()) - 1.0, math.log(lam.size) + 1.0
    while gap(lo) > 0:
        lo -= 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            hi = mid
        else:
            lo = mid
    return lo + shift


def fantope_profile(eigs, k: int) -> np.ndarray:
    """Eigenvalues of the projection, in the order of ``eigs``."""
    lam = np.asarray(eigs, dtype=np.float64)
    tau = solve_tau(lam, k)
    logs = np.minimum(tau, lam)
    return k * np.exp(logs - logsumexp(logs))


@dataclass(frozen=True)
class FantopePoint:
    Y: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    tau: float
    k: int


def _eigh_sym(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    return np.linalg.eigh(0.5 * (s + s.T))


def exact_project(s: np.ndarray, k: int) -> FantopePoint:
    """Dense Bregman projection ``grad r*(S)`` (oracle path, ``d <= 512``)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[0] > 512:
        raise ValidationError("the dense projection is limited to d <= 512")
    lam, vecs = _eigh_sym(s)
    y = fantope_profile(lam, k)
    return FantopePoint((vecs * y) @ vecs.T, y, vecs, solve_tau(lam, k), k)


def entropy(y: np.ndarray) -> float:
    """``r(Y) = <Y, log Y> - Tr Y`` on a dense matrix or an eigenvalue vector."""
    y = np.asarray(y, dtype=np.float64)
    vals = _eigh_sym(y)[0] if y.ndim == 2 else y
    vals = np.clip(vals, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogx = np.where(vals > 0, vals * np.log(vals), 0.0)
    return float(xlogx.sum() - vals.sum())


def conjugate(s: np.ndarray, k: int) -> float:
    """``r*(S) = max_{Y in Fantope} <S, Y> - r(Y)``, evaluated at the maximizer."""
    lam = _eigh_sym(s)[0]
    y = fantope_profile(lam, k)
    return float(lam @ y) - entropy(y)


def dual_divergence(s: np.ndarray, s_new: np.ndarray, k: int) -> float:
    """Bregman divergence of ``r*`` from ``S`` to ``S_new``."""
    grad = exact_project(s, k).Y
    return conjugate(s_new, k) - conjugate(s, k) - float(np.sum(grad * (s_new - s)))


def primal_divergence(y_from: np.ndarray, y_to: np.ndarray) -> float:
    """Bregman divergence of ``r`` from ``Y_from`` (positive definite) to ``Y_to``."""
    lam, vecs = _eigh_sym(y_from)
    log_from = (vecs * np.log(lam)) @ vecs.T
    return entropy(y_to) - entropy(y_from) - float(np.sum(log_from * (y_to - y_from)))


def truncated_profile(top_exp: np.ndarray, tail: float, k: int) -> tuple[np.ndarray, float]:
    """Projected weights of exponentiated values ``top_exp`` plus a tail mass.

    Returns the per-entry weights and the total weight of the tail. This is
    the diagonal profile whose stability under tail perturbations is
    property-tested.
    """
    top_exp = np.asarray(top_exp, dtype=np.float64)
    log_tail = math.log(tail) if tail > 0 else -math.inf
    tau = truncation_level(np.log(top_exp), k, log_tail)
    logs = np.minimum(tau, np.log(top_exp))
    log_norm = logsumexp(np.append(logs, log_tail))
    return k * np.exp(logs - log_norm), k * math.exp(log_tail - log_norm)


# ---------------------------------------------------------------------------
# polynomial exponential and sketches
# ---------------------------------------------------------------------------


def taylor_schedule(half_bound: float, rel_tol: float) -> tuple[int, int]:
    """Steps ``s`` and per-step degree ``m`` for ``exp(x)`` on ``[0, half_bound]``.

    ``exp`` is applied as ``s`` successive truncated Taylor series on
    ``[0, h]`` with ``h = half_bound / s <= 1``. Each factor has relative error
    at most ``rel_tol / s``, so the composed polynomial (degree ``s * m``)
    has uniform relative error about ``rel_tol``.
    """
    s = max(1, math.ceil(half_bound))
    h = half_bound / s
    target = rel_tol / s
    m, term = 0, 1.0
    while True:
        term *= h / (m + 1)
        m += 1
        if term <= target or m >= 60:
            return s, m


def apply_exp_half(a, block: np.ndarray, lam_max: float, rel_tol: float) -> tuple[np.ndarray, float]:
    """``p(A/2) @ block`` up to a common factor ``exp(log_scale)``.

    ``A`` must satisfy ``0 <= A <= lam_max I``. Returns ``(K, log_scale)``
    with ``K * exp(log_scale)`` approximating ``exp(A/2) block``. The block is
    renormalized after every step, so large ``lam_max`` never overflows.
    """
    a = as_operator(a)
    s, m = taylor_schedule(max(lam_max, 0.0) / 2.0, rel_tol)
    x = np.array(block, dtype=np.float64, copy=True)
    log_scale = 0.0
    for _ in range(s):
        term = x
        acc = x.copy()
        for i in range(1, m + 1):
            term = a.matmat(term) / (2.0 * s * i)
            acc += term
        nrm = float(np.max(np.linalg.norm(acc, axis=0))) if acc.size else 0.0
        if nrm == 0.0:
            return acc, 0.0
        x = acc / nrm
        log_scale += math.log(nrm)
    return x, log_scale


def sketch_width(rows: int, d: int, eps: float, delta: float) -> int:
    return math.ceil(9.0 * math.log(2.0 * rows * d / delta) / eps**2)


def sign_sketch(d: int, r: int, rng: np.random.Generator) -> np.ndarray:
    return (2.0 * rng.integers(0, 2, size=(d, r)) - 1.0) / math.sqrt(r)


def _probe(d: int, basis: np.ndarray | None, r: int, mode: str, rng) -> tuple[np.ndarray, bool]:
    """Probe block, either a sign sketch or the (deflated) identity."""
    exact = mode == "exact" or (mode == "auto" and r >= d)
    if mode not in ("auto", "exact", "jl"):
        raise ValidationError(f"unknown sketch mode {mode!r}")
    x = np.eye(d) if exact else sign_sketch(d, r, rng)
    if basis is not None and basis.shape[1]:
        x = x - basis @ (basis.T @ x)
    return x, exact


def log_trace_exp_estimate(
    a, lam_max: float, gamma: float, delta: float, rng: np.random.Generator,
    *, sketch: str = "auto", deflate: np.ndarray | None = None,
) -> float:
    """Log of an estimate of ``Tr exp(A)``.

    With ``deflate`` (orthonormal ``d x k``) the trace is taken over the
    orthogonal complement of its span only.
    """
    a = as_operator(a)
    d = a.shape[0]
    r = sketch_width(1, d, gamma, delta)
    x, _ = _probe(d, deflate, r, sketch, rng)
    k_mat, log_scale = apply_exp_half(a, x, lam_max, gamma / 6.0)
    total = float(np.sum(k_mat * k_mat))
    if not total > 0:
        raise EstimatorFailure("trace estimate is not positive")
    return math.log(total) + 2.0 * log_scale


def trace_exp_estimate(
    a, lam_max: float, gamma: float, delta: float, rng: np.random.Generator,
    *, sketch: str = "auto",
) -> float:
    """``(1 +- gamma)`` estimate of ``Tr exp(A)`` for ``0 <= A <= lam_max I``.

    Args:
        a: PSD operator or array.
        lam_max: Upper bound on the spectrum of ``a``.
        gamma: Relative accuracy.
        delta: Failure probability of the sign sketch.
        rng: Randomness for the sketch.
        sketch: ``"jl"`` forces the random sketch, ``"exact"`` probes with
            the identity, ``"auto"`` picks the identity when the sketch would
            be at least ``d`` columns wide.
    """
    return math.exp(log_trace_exp_estimate(a, lam_max, gamma, delta, rng, sketch=sketch))


# ---------------------------------------------------------------------------
# approximate projection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DualCertificate:
    """Compressed approximate projection ``Y_hat``.

    ``Y_hat = k / N * (sum_j e^{min(tau_hat, lam_j)} u_j u_j^T
    + (I-P) exp(A) (I-P))`` with ``A = (1 - scale_delta)(I-P) S (I-P)``,
    ``P = V V^T`` and ``N = norm_const``. Columns of ``V`` are the ``u_j``.
    """

    V: np.ndarray
    top_eigs: np.ndarray
    tau_hat: float
    log_T_hat: float
    scale_delta: float
    log_norm: float
    base_op: object
    lam_max: float
    k: int
    remainder_zero: bool = False
    certified: bool = True
    power_iterations: int = 0
    probe: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def T_hat(self) -> float:
        return math.exp(self.log_T_hat)

    @property
    def norm_const(self) -> float:
        return math.exp(self.log_norm)

    @property
    def top_weights(self) -> np.ndarray:
        return self.k * np.exp(np.minimum(self.tau_hat, self.top_eigs) - self.log_norm)

    def remainder(self) -> RemainderOperator:
        return RemainderOperator(self.base_op, self.V, 1.0 - self.scale_delta)

    def remainder_bound(self) -> float:
        return (1.0 - self.scale_delta) * self.lam_max

    def dense(self) -> np.ndarray:
        """Materialize ``Y_hat`` with the remainder exponentiated exactly."""
        d, v = self.d, self.V
        out = (v * self.top_weights) @ v.T
        q_full, _ = np.linalg.qr(np.hstack([v, np.eye(d)]))
        comp = q_full[:, v.shape[1]:d]
        if self.remainder_zero:
            mu = np.zeros(comp.shape[1])
            w = np.eye(comp.shape[1])
        else:
            a = dense_of(self.remainder())
            mu, w = _eigh_sym(comp.T @ a @ comp)
        basis = comp @ w
        out += (basis * (self.k * np.exp(mu - self.log_norm))) @ basis.T
        return 0.5 * (out + out.T)


def _is_zero(op, rng: np.random.Generator) -> bool:
    probe = rng.standard_normal((op.shape[0], 2))
    return not np.any(op.matmat(probe))


def _zero_certificate(op, k: int, lam_max: float, delta_acc: float, rng) -> DualCertificate:
    d = op.shape[0]
    v, _ = np.linalg.qr(rng.standard_normal((d, k)))
    lam = np.zeros(k)
    log_t = math.log(d - k) if d > k else -math.inf
    tau = truncation_level(lam, k, log_t)
    log_norm = float(logsumexp(np.append(np.minimum(tau, lam), log_t)))
    return DualCertificate(
        v, lam, tau, log_t, delta_acc / (4.0 * lam_max), log_norm, op, lam_max, k,
        remainder_zero=True,
    )


def approx_project(
    s,
    lam_max: float,
    lam_min: float,
    k: int,
    Delta: float,
    delta: float,
    rng: np.random.Generator,
    *,
    sketch: str = "auto",
    max_power_iters: int = 20000,
    oversample: int = 10,
    retries: int = 3,
    counters: RunCounters | None = None,
) -> DualCertificate:
    """Certificate for an approximate Bregman projection of ``S``.

    The top-``k`` space comes from power iteration at accuracy
    ``Delta / (8 lam_max)``. The iteration stops early once the
    off-diagonal block is certified below ``Delta / 8``, which is the
    property the trace-norm bound consumes. The deflated remainder is scaled
    by ``1 - Delta / (4 lam_max)`` and its exponential trace is estimated to
    ``1 +- Delta / 8``.
    """
    op = as_operator(s)
    d = op.shape[0]
    if not 1 <= k <= d:
        raise ValidationError(f"k must lie in [1, {d}]")
    if not 0 < Delta < 1:
        raise ValidationError("Delta must lie in (0, 1)")
    if _is_zero(op, rng):
        return _zero_certificate(op, k, max(lam_max, 1.0), Delta, rng)

    last_error: Exception | None = None
    for attempt in range(retries):
        if attempt and counters is not None:
            counters.retries += 1
        basis = power_iterate(
            op, k, Delta / (8.0 * lam_max), delta / 2.0, lam_max, lam_min, rng,
            residual_tol=Delta / 8.0, max_iters=max_power_iters,
            oversample=oversample, counters=counters,
        )
        v, lam = basis.V, basis.rayleigh
        c = Delta / (4.0 * lam_max)
        rem = RemainderOperator(op, v, 1.0 - c)
        gamma = Delta / 8.0
        r = sketch_width(1, d, gamma, delta / 2.0)
        x, exact = _probe(d, v, r, sketch, rng)
        k_mat, log_scale = apply_exp_half(rem, x, (1.0 - c) * lam_max, gamma / 6.0)
        total = float(np.sum(k_mat * k_mat))
        if not total > 0:
            last_error = EstimatorFailure("trace estimate is not positive")
            continue
        log_t = math.log(total) + 2.0 * log_scale
        tau = truncation_level(lam, k, log_t)
        log_norm = float(logsumexp(np.append(np.minimum(tau, lam), log_t)))
        certified = basis.residual is not None and basis.residual <= Delta / 8.0
        probe = (k_mat, log_scale, gamma / 6.0) if exact else None
        return DualCertificate(
            v, lam, tau, log_t, c, log_norm, op, lam_max, k,
            certified=certified, power_iterations=basis.iterations, probe=probe,
        )
    raise last_error  # type: ignore[misc]


def dual_quadform(
    cert: DualCertificate,
    vectors: np.ndarray,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    *,
    sketch: str = "auto",
) -> np.ndarray:
    """``v^T Y_hat v`` for each row ``v`` of ``vectors`` to relative ``eps``."""
    vec = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    proj = vec @ cert.V
    out = (proj * proj) @ cert.top_weights
    if cert.remainder_zero:
        resid = vec - proj @ cert.V.T
        return out + cert.k * math.exp(-cert.log_norm) * np.einsum("ij,ij->i", resid, resid)
    if cert.probe is not None and cert.probe[2] <= eps / 6.0:
        k_mat, log_scale, _ = cert.probe
    else:
        d = cert.d
        r = sketch_width(vec.shape[0], d, eps, delta)
        x, _ = _probe(d, cert.V, r, sketch, rng)
        k_mat, log_scale = apply_exp_half(cert.remainder(), x, cert.remainder_bound(), eps / 6.0)
    z = vec @ k_mat
    rem = np.einsum("ij,ij->i", z, z)
    return out + cert.k * np.exp(2.0 * log_scale - cert.log_norm) * rem
