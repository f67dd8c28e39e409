"""Dense-oracle checks of the spectral building blocks on random matrices.

Each trial draws its own random instance, runs the implicit routine and
compares it with a dense eigendecomposition. Trials return plain dicts so
that the CLI can serialize them and the tests can assert on them.
"""

from __future__ import annotations

import math

import numpy as np

from .fantope import approx_project, dual_divergence, exact_project, trace_exp_estimate
from .kpca import power_iterate, verify_sandwich
from .linop import DenseOperator
from .mmw import MmwState, regret_audit


def random_psd(rng: np.random.Generator, d: int, rows: int | None = None) -> np.ndarray:
    """Wishart-type matrix ``M^T M / rows`` with a random scale in ``[0.5, 5]``."""
    rows = rows or int(rng.integers(d, 3 * d + 1))
    m = rng.standard_normal((rows, d))
    return float(rng.uniform(0.5, 5.0)) * (m.T @ m) / rows


def trace_norm(a: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(0.5 * (a + a.T))).sum())


def fantope_trial(rng: np.random.Generator, d: int = 40, k: int = 5, Delta: float = 0.05) -> dict:
    """Approximate projection of ``I + W`` against the dense projection."""
    s = np.eye(d) + random_psd(rng, d)
    lam_max = 1.0 + float(np.linalg.norm(s - np.eye(d)))
    cert = approx_project(s, lam_max, 1.0, k, Delta, 0.05, rng)
    err = trace_norm(cert.dense() - exact_project(s, k).Y)
    return {"error": err, "limit": k * Delta, "ok": err <= k * Delta}


def divergence_trial(rng: np.random.Generator, d_max: int = 30) -> dict:
    """Divergence of the conjugate along ``eta G`` against its linear bound."""
    d = int(rng.integers(2, d_max + 1))
    k = int(rng.integers(1, d + 1))
    a = rng.standard_normal((d, d))
    s = float(rng.uniform(0.1, 10.0)) * 0.5 * (a + a.T)
    g = random_psd(rng, d)
    eta = float(rng.uniform(0.0, 0.5)) / float(np.linalg.eigvalsh(g)[-1])
    lhs = dual_divergence(s, s + eta * g, k)
    rhs = float(np.sum(eta * g * exact_project(s, k).Y))
    return {"d": d, "k": k, "lhs": lhs, "rhs": rhs, "ok": lhs <= rhs + 1e-7}


def decreasing_gains(rng: np.random.Generator, d: int, T: int, rows: int = 60) -> list[np.ndarray]:
    """Second-moment matrices of a fixed sample under entrywise shrinking weights."""
    m = rng.standard_normal((rows, d)) * rng.uniform(0.2, 2.0, size=d)
    w = np.full(rows, 1.0 / rows)
    gains = []
    for _ in range(T):
        gains.append((m.T * w) @ m)
        w = w * rng.uniform(0.8, 1.0, size=rows)
    return gains


def regret_trial(
    rng: np.random.Generator, d: int = 30, k: int = 3, T: int = 40, Delta: float = 1.0 / 200.0
) -> dict:
    """Approximate MMW on weakly decreasing gains with the regret bound audited."""
    gains = decreasing_gains(rng, d, T)
    eta = 1.0 / (2.1 * float(np.linalg.eigvalsh(gains[0])[-1]))
    state = MmwState(d, k, eta, rng, Delta=Delta, horizon=T)
    for g in gains:
        state.certificate()
        state.push(DenseOperator(g))
    rep = regret_audit(state, gains)
    return {"slack": rep.slack, "lhs": rep.lhs, "rhs": rep.rhs, "ok": rep.slack >= 0}


def sandwich_trial(rng: np.random.Generator, d: int = 30, k: int = 5, eps: float = 0.05) -> dict:
    """Plain power iteration against the sandwich and the true top eigenvalues."""
    a = random_psd(rng, d)
    tr = float(np.trace(a))
    basis = power_iterate(a, k, eps, 0.05, tr, 1e-12 * tr, rng)
    check = verify_sandwich(a, basis, eps)
    true_top = np.linalg.eigvalsh(a)[::-1][: basis.k]
    ratio = basis.rayleigh / true_top
    rayleigh_ok = bool(np.all((ratio >= 1 - eps) & (ratio <= 1 + eps)))
    return {"ok": check.ok, "slack": check.slack, "rayleigh_ok": rayleigh_ok}


TRACE_EXP_CASES = {
    "zero": (np.zeros((7, 7)), 1.0, 7.0),
    "e+1": (np.diag([1.0, 0.0]), 1.0, math.e + 1.0),
    "3e^3": (np.diag([3.0, 3.0, 3.0]), 3.0, 3.0 * math.e**3),
}


def trace_exp_trial(rng: np.random.Generator, case: str, gamma: float) -> dict:
    """Sketched ``Tr exp(A)`` on a closed-form diagonal case."""
    a, lam_max, truth = TRACE_EXP_CASES[case]
    est = trace_exp_estimate(a, lam_max, gamma, 0.05, rng, sketch="jl")
    ratio = est / truth
    return {"ratio": ratio, "ok": 1 - gamma <= ratio <= 1 + gamma}


def run_suite(trials: int, seed: int) -> dict:
    """All oracle families, ``trials`` draws each, from one seed."""
    root = np.random.SeedSequence(seed)
    streams = iter(root.spawn(64))

    def family(fn, **kw) -> dict:
        rng = np.random.default_rng(next(streams))
        outs = [fn(rng, **kw) for _ in range(trials)]
        return {"passed": sum(bool(o["ok"]) for o in outs), "trials": trials}

    report = {
        "divergence": family(divergence_trial),
        "regret": family(regret_trial),
        "sandwich": family(sandwich_trial),
    }
    for k in (2, 5, 10):
        report[f"fantope_k{k}"] = family(fantope_trial, k=k)
    for case in TRACE_EXP_CASES:
        for gamma in (0.1, 0.05):
            report[f"trace_exp_{case}_g{gamma}"] = family(trace_exp_trial, case=case, gamma=gamma)
    return report
