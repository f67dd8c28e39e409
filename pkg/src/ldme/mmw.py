"""Ky Fan-k matrix multiplicative weights.

The dual iterate starts at ``S_0 = log(k/d) I`` and accumulates
``eta * G_t`` after every gain. The primal play is the Fantope projection of
the dual iterate. ``MmwState`` is the approximate, certificate-based loop.
``certificate()`` returns the play for the current round from the gains
pushed so far, and ``push`` consumes the next gain. ``mmw_exact_run`` is the
dense reference loop used by the audits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .counters import RunCounters
from .errors import MonotonicityWarning, StepSizeViolation, ValidationError
from .fantope import DualCertificate, FantopePoint, approx_project, exact_project
from .linop import SumOperator, as_operator, dense_of

DEFAULT_DELTA_ACC = 1.0 / 200.0


def _top_eig_lower(op, rng: np.random.Generator, iters: int = 20) -> float:
    """A lower bound on the top eigenvalue from a short power run."""
    v = rng.standard_normal(op.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        y = op.matmat(v)
        est = float(v @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        v = y / nrm
    return est


@dataclass
class StepRecord:
    t: int
    certificate: DualCertificate | None = None
    lam_max: float | None = None


@dataclass
class MmwState:
    """Approximate Ky Fan MMW loop over gains given as operators.

    ``S_accum`` equals ``S_0 + eta * sum_{s<t} G_s`` with the gains kept by
    reference. Projections are taken of ``S_accum + (1 + log(d/k)) I``,
    whose spectrum lies in ``[1, t + 2]`` when every ``eta G_s <= I``.
    """

    d: int
    k: int
    eta: float
    rng: np.random.Generator
    Delta: float = DEFAULT_DELTA_ACC
    delta: float = 0.01
    horizon: int = 1
    sketch: str = "auto"
    tight_lam_max: bool = False
    counters: RunCounters | None = None
    S_accum: SumOperator = field(init=False)
    t: int = field(init=False, default=0)
    history: list[StepRecord] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        if not 1 <= self.k <= self.d:
            raise ValidationError(f"k must lie in [1, {self.d}]")
        if not self.eta > 0:
            raise ValidationError("eta must be positive")
        self.S_accum = SumOperator(self.d, shift=math.log(self.k / self.d))
        self._prev = None
        self._trace_sum = 0.0
        self.history.append(StepRecord(0))

    def certificate(self) -> DualCertificate:
        """Play for round ``t``; depends only on gains ``0 .. t-1``."""
        rec = self.history[self.t]
        if rec.certificate is None:
            shifted = self.S_accum.snapshot(1.0 + math.log(self.d / self.k))
            lam_max = float(self.t + 2)
            if self.tight_lam_max:
                lam_max = min(lam_max, 1.0 + self.eta * self._trace_sum)
            rec.lam_max = lam_max
            rec.certificate = approx_project(
                shifted, lam_max, 1.0, self.k, self.Delta,
                self.delta / max(self.horizon, 1), self.rng,
                sketch=self.sketch, counters=self.counters,
            )
        return rec.certificate

    def push(self, gain) -> None:
        """Consume gain ``G_t``, advancing to round ``t + 1``."""
        op = as_operator(gain)
        if op.shape != (self.d, self.d):
            raise ValidationError("gain dimension mismatch")
        top = _top_eig_lower(op, self.rng)
        if self.eta * top > 0.5 + 1e-9:
            raise StepSizeViolation(f"eta * ||G_t|| >= {self.eta * top:.6f} exceeds 1/2")
        if self._prev is not None:
            probe = self.rng.standard_normal((self.d, 3))
            now = np.einsum("ij,ij->j", probe, op.matmat(probe))
            before = np.einsum("ij,ij->j", probe, self._prev.matmat(probe))
            if np.any(now > before * (1 + 1e-9) + 1e-12):
                warnings.warn(
                    f"gain {self.t} is not below its predecessor on a sampled vector",
                    MonotonicityWarning,
                    stacklevel=2,
                )
        self.S_accum.add(self.eta, op)
        if self.tight_lam_max:
            self._trace_sum += _trace_bound(op)
        self._prev = op
        self.t += 1
        self.history.append(StepRecord(self.t))
        if self.counters is not None:
            self.counters.mmw_steps += 1


def _trace_bound(op) -> float:
    if hasattr(op, "trace"):
        return float(op.trace())
    return float(np.trace(dense_of(op)))


def mmw_approx_step(state: MmwState, gain) -> DualCertificate:
    """Push ``G_t`` and return the certificate for round ``t + 1``."""
    state.push(gain)
    return state.certificate()


def ky_fan(matrix: np.ndarray, k: int) -> float:
    """Sum of the ``k`` largest eigenvalues."""
    m = np.asarray(matrix, dtype=np.float64)
    return float(np.sort(np.linalg.eigvalsh(0.5 * (m + m.T)))[::-1][:k].sum())


@dataclass(frozen=True)
class RegretReport:
    lhs: float
    play_term: float
    entropy_term: float
    approx_term: float
    T: int

    @property
    def rhs(self) -> float:
        return self.play_term + self.entropy_term + self.approx_term

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def mmw_exact_run(gains, k: int, eta: float) -> tuple[list[FantopePoint], RegretReport]:
    """Dense Ky Fan MMW on ``gains`` with the regret bound audited."""
    gains = [np.asarray(g, dtype=np.float64) for g in gains]
    if not gains:
        raise ValidationError("need at least one gain")
    d = gains[0].shape[0]
    s = math.log(k / d) * np.eye(d)
    plays, inner = [], []
    for g in gains:
        if eta * np.linalg.eigvalsh(g).max() > 0.5 + 1e-9:
            raise StepSizeViolation("eta * G_t exceeds I/2")
        y = exact_project(s, k)
        plays.append(y)
        inner.append(float(np.sum(g * y.Y)))
        s = s + eta * g
    T = len(gains)
    lhs = ky_fan(sum(gains), k) / T
    report = RegretReport(lhs, 2.0 / T * math.fsum(inner), k * math.log(d) / (eta * T), 0.0, T)
    return plays, report


def regret_audit(
    state: MmwState, gains, k: int | None = None, final_gain=None
) -> RegretReport:
    """Audit ``||G_T||_k <= 2/T sum <G_t, Y_t> + k log d/(eta T) + k Delta/eta``.

    ``gains`` are the dense forms of the ``T`` gains pushed into ``state``.
    The final gain defaults to the last one, as the loop that produced the
    gains never sees a later one.
    """
    k = state.k if k is None else k
    gains = [np.asarray(g, dtype=np.float64) for g in gains]
    T = len(gains)
    if T == 0 or T > state.t:
        raise ValidationError("gains must be the ones already pushed into the state")
    inner = []
    for t, g in enumerate(gains):
        cert = state.history[t].certificate
        if cert is None:
            raise ValidationError(f"no certificate was issued for round {t}")
        inner.append(float(np.sum(g * cert.dense())))
    last = gains[-1] if final_gain is None else np.asarray(final_gain, dtype=np.float64)
    return RegretReport(
        ky_fan(last, k),
        2.0 / T * math.fsum(inner),
        k * math.log(state.d) / (state.eta * T),
        k * state.Delta / state.eta,
        T,
    )
