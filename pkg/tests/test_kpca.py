import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldme.core_stats import CovOperator
from ldme.errors import NotPSD, ValidationError
from ldme.kpca import iteration_count, power_iterate, sandwich_eps, verify_sandwich
from ldme.oracles import random_psd


def run(a, k, eps, rng, **kw):
    tr = float(np.trace(a))
    return power_iterate(a, k, eps, 0.05, tr, 1e-12 * tr, rng, **kw)


def test_two_by_two_diagonal(rng):
    b = power_iterate(np.diag([4.0, 1.0]), 1, 0.05, 0.1, 4.0, 1.0, rng)
    assert abs(abs(b.V[0, 0]) - 1) < 1e-6
    assert 3.8 <= b.rayleigh[0] <= 4.2


@pytest.mark.parametrize("k", [1, 3, 6])
def test_isotropic_operator(rng, k):
    b = run(2.5 * np.eye(6), k, 0.05, rng)
    assert b.k == k
    assert np.all(np.abs(b.rayleigh - 2.5) <= 0.05 * 2.5)


def test_rank_deficient_operator_reduces_k(rng):
    x = rng.standard_normal((3, 10))
    op = CovOperator(x, np.full(3, 1 / 3))
    b = power_iterate(op, 5, 0.1, 0.05, op.trace(), 1e-12 * op.trace(), rng)
    assert b.reduced and b.k == 2


def test_negative_operator_is_detected(rng):
    with pytest.raises(NotPSD):
        run(np.diag([3.0, 1.0, -2.0]), 2, 0.1, rng)


def test_argument_validation(rng):
    with pytest.raises(ValidationError):
        power_iterate(np.eye(3), 4, 0.1, 0.1, 1.0, 1.0, rng)
    with pytest.raises(ValidationError):
        power_iterate(np.eye(3), 1, 0.1, 0.1, 1.0, 2.0, rng)


def test_iteration_count_formula():
    # ceil(10 / 0.1 * log(30 / (0.05 * 0.1) * 100))
    assert iteration_count(30, 0.1, 0.05, 100.0, 1.0) == 1331


def test_sandwich_with_exact_eigenvectors(rng):
    a = random_psd(rng, 12)
    v = np.linalg.eigh(a)[1][:, ::-1][:, :4]
    for eps in (0.0, 0.01, 0.3):
        assert verify_sandwich(a, v, eps).ok


def test_sandwich_fails_away_from_the_top_direction():
    a = np.diag([10.0, 1.0])
    # a basis tilted away from e1 leaves a cross term the sandwich cannot absorb
    theta = 1.2
    v = np.array([[np.cos(theta)], [np.sin(theta)]])
    check = verify_sandwich(a, v, 0.1)
    assert not check.ok
    assert check.witness is not None and check.slack < 0


def test_sandwich_of_zero_matrix():
    assert verify_sandwich(np.zeros((4, 4)), np.eye(4)[:, :2], 0.1).ok


def test_sandwich_passes_on_random_instances():
    passed = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a = random_psd(rng, 30)
        b = run(a, 5, 0.05, rng)
        passed += verify_sandwich(a, b, 0.05).ok
    assert passed >= 19


@pytest.mark.parametrize("seed", range(5))
def test_more_iterations_never_worsen_the_sandwich(seed):
    a = random_psd(np.random.default_rng(seed), 30)
    before = sandwich_eps(a, run(a, 5, 0.2, np.random.default_rng(100 + seed)))
    after = sandwich_eps(a, run(a, 5, 0.1, np.random.default_rng(100 + seed)))
    assert after <= before + 1e-9


def test_outputs_stay_in_the_projected_subspace(rng):
    x = rng.standard_normal((200, 15))
    B, _ = np.linalg.qr(rng.standard_normal((15, 4)))
    proj = x - (x @ B) @ B.T
    op = CovOperator(proj, np.full(200, 1 / 200))
    b = power_iterate(op, 5, 0.1, 0.05, op.trace(), 1e-12 * op.trace(), rng)
    assert np.abs(B.T @ b.V).max() <= 1e-8


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(0, 6))
def test_basis_is_orthonormal_with_sorted_quotients(seed, k, oversample):
    rng = np.random.default_rng(seed)
    a = random_psd(rng, 8)
    b = run(a, k, 0.2, rng, oversample=oversample)
    assert np.abs(b.V.T @ b.V - np.eye(b.k)).max() <= 1e-8
    assert np.all(np.diff(b.rayleigh) <= 1e-8)
