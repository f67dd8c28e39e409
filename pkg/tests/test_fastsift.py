import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ldme.core_stats import CovOperator
from ldme.counters import RunCounters
from ldme.datagen import InstanceSpec, gen_instance
from ldme.errors import KOverflow, MonotonicityWarning
from ldme.fastsift import (
    KY_FAN_HALVED,
    MASS_HALVED,
    OPERATOR_NORM_DROP,
    GoodTuple,
    _decayed,
    bicriteria_filter,
    complement_norm,
    decrease_kf_norm,
    fast_sift,
    faster_list_size,
    faster_sift,
    find_min_K,
    good_tuple_cap,
    kf_rank,
    loop_cap,
    mmw_horizon,
    produce_good_tuple,
)
from ldme.mmw import ky_fan
from ldme.pipeline import diameter_bound
from ldme.sift import Auditor, is_saturated


def test_constants():
    assert kf_rank(0.1) == 6120
    assert mmw_horizon(10) == math.ceil(425 * math.log(10))
    assert loop_cap(1e4) == pytest.approx(5 * math.log(1e6))
    assert good_tuple_cap(0.125) == pytest.approx(7.0)


def test_min_K_single_step():
    K, w = find_min_K(np.array([0.5, 0.5]), np.array([4.0, 2.0]), 0.5, 0.1)
    assert K == 1
    assert np.allclose(w, [0.0, 0.25])


def test_min_K_several_steps():
    # after K steps the second weight is 0.5 ** (K + 1), so the score sum is 2 * 0.5 ** (K + 1)
    K, w = find_min_K(np.array([0.5, 0.5]), np.array([4.0, 2.0]), 0.2, 0.1)
    assert K == 3
    assert w[1] == pytest.approx(0.0625)


def test_min_K_uniform_scores_remove_everything():
    K, w = find_min_K(np.full(4, 0.25), np.full(4, 3.0), 1e-9, 1.0)
    assert K == 1 and w.sum() == 0.0


def test_min_K_overflow():
    with pytest.raises(KOverflow):
        find_min_K(np.array([0.5, 0.5]), np.array([4.0, 1e-6]), 1e-12, 0.1, R=1.0)


@given(
    arrays(np.float64, 10, elements=st.floats(0.0, 0.1)),
    arrays(np.float64, 10, elements=st.floats(0.0, 50.0)),
    st.floats(1e-3, 10.0),
)
def test_min_K_is_minimal_and_scores_decay(w, tau, threshold):
    if not np.any(tau[w > 0] > 0):
        return
    t_max = tau[w > 0].max()
    with np.errstate(divide="ignore"):
        lf = np.log1p(-np.minimum(tau / t_max, 1.0))
    sums = [float(_decayed(w, lf, K) @ tau) for K in range(0, 30)]
    assert all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(sums, sums[1:]))
    beta = w.sum()
    K, wk = find_min_K(w, tau, threshold, beta)
    assert wk.sum() <= beta / 2 or wk @ tau <= threshold
    if K > 1:
        prev = _decayed(w, lf, K - 1)
        assert prev.sum() > beta / 2 and prev @ tau > threshold


def flat_instance(seed=0):
    rng = np.random.default_rng(seed)
    d, n = 10, 600
    x = rng.standard_normal((n, d))
    for j in range(6):
        x[j * 10:(j + 1) * 10] = 0.1 * rng.standard_normal((10, d))
        x[j * 10:(j + 1) * 10, j // 2] += (1 if j % 2 else -1) * 30
    return x


def test_flat_spectrum_halves_ky_fan_norm():
    x = flat_instance()
    w = np.full(600, 1 / 600)
    before = ky_fan(CovOperator(x, w).dense(), 3)
    audit = Auditor(np.arange(60, 600), 0.9)
    counters = RunCounters()
    with warnings.catch_warnings():
        warnings.simplefilter("error", MonotonicityWarning)
        res = decrease_kf_norm(x, w, before, 0.1, np.random.default_rng(1), k=3,
                               audit=audit, counters=counters)
    assert res.tag == KY_FAN_HALVED
    assert res.steps <= mmw_horizon(10)
    assert ky_fan(CovOperator(x, res.w).dense(), 3) <= 0.5 * before
    assert audit.checks["regret"] == 1
    assert audit.violations == []
    assert is_saturated(res.w, np.arange(60, 600), 0.9)


def test_dominant_direction_drops_operator_norm(rng):
    x = rng.standard_normal((400, 10))
    x[:, 0] *= 10
    w = np.full(400, 1 / 400)
    res = decrease_kf_norm(x, w, 1.0, 0.1, rng, k=3)
    assert res.tag == OPERATOR_NORM_DROP and res.steps == 0
    cov = CovOperator(x, res.w).dense()
    q = np.eye(10) - res.V @ res.V.T
    top = np.linalg.eigvalsh(CovOperator(x, w).dense())[-1]
    assert np.linalg.eigvalsh(q @ cov @ q)[-1] <= 2 / 3 * top


def sphere(radius=40.0, d=10, copies=5):
    return np.repeat(np.vstack([radius * np.eye(d), -radius * np.eye(d)]), copies, axis=0)


def test_uniform_scores_halve_mass(rng):
    x = sphere()
    w = np.full(len(x), 1 / len(x))
    res = decrease_kf_norm(x, w, 1e-6, 0.1, rng, k=3)
    assert res.tag == MASS_HALVED
    assert res.w.sum() <= 0.5 * w.sum()


def test_bicriteria_forwards_mass_halving(rng):
    x = sphere()
    w = np.full(len(x), 1 / len(x))
    res = bicriteria_filter(x, 0.1, w, rng, alpha=0.5, R=1e4, k=3)
    assert res.tag == MASS_HALVED


def test_bicriteria_on_concentrated_data(rng):
    x = 1e-3 * rng.standard_normal((300, 10))
    counters = RunCounters()
    res = bicriteria_filter(x, 0.1, np.full(300, 1 / 300), rng, alpha=0.5, R=1e4, k=3,
                            counters=counters)
    assert isinstance(res, GoodTuple) and res.k == 3
    assert counters.spectrum_calls == 1 and counters.max_bicriteria_passes == 1
    assert np.abs(res.B.T @ res.B - np.eye(3)).max() <= 1e-8


def test_good_tuple_on_benign_data(rng):
    x = 0.5 * rng.standard_normal((300, 10))
    counters = RunCounters()
    tup = produce_good_tuple(x, 0.1, rng, alpha=0.5, R=1e4, k=3, counters=counters)
    assert counters.max_good_tuple_calls == 1
    assert np.allclose(tup.w, 1 / 300)


def test_good_tuple_on_cluster_adversary(rng):
    data = gen_instance(InstanceSpec(d=30, n=3000, alpha=0.1, seed=4))
    R = diameter_bound(3000, 0.05)
    tup = produce_good_tuple(data.points, 0.05, rng, alpha=0.1, R=R)
    assert np.abs(tup.B.T @ tup.B - np.eye(tup.k)).max() <= 1e-8
    assert complement_norm(data.points, tup) <= 128 / math.sqrt(tup.w.sum())
    assert is_saturated(tup.w, data.truth.inlier_indices, 0.1)


@pytest.mark.parametrize("seed", range(3))
def test_mass_halving_adversary_respects_call_cap(seed):
    rng = np.random.default_rng(seed)
    x = np.vstack([0.5 * rng.standard_normal((20, 10)), sphere(copies=9)])
    audit = Auditor(np.arange(20), 0.1)
    counters = RunCounters()
    tup = produce_good_tuple(x, 0.1, rng, alpha=0.1, R=1e4, k=3, audit=audit, counters=counters)
    assert 2 <= counters.max_good_tuple_calls <= good_tuple_cap(0.1)
    assert counters.max_bicriteria_passes <= loop_cap(1e4)
    assert audit.violations == []
    assert complement_norm(x, tup) <= 128 / math.sqrt(tup.w.sum())


def planted(d, alpha, seed=0):
    n = int(round(10 * d / alpha))
    return gen_instance(InstanceSpec(d=d, n=n, alpha=alpha, seed=seed))


def split(data, size, seed=0):
    idx = np.random.default_rng(seed).permutation(data.n)
    return data.points[idx[size:]], data.points[idx[:size]]


def test_fast_sift_error_bound(rng):
    data = planted(30, 0.1)
    fast, slow = split(data, 800)
    out, tup = fast_sift(fast, slow, 0.05, rng, alpha=0.1, R=diameter_bound(len(fast), 0.05))
    errs = np.sum((out.means() - data.truth.true_mean) ** 2, axis=1)
    assert errs.min() <= 560 / 0.1


def test_full_basis_reduces_to_sift_on_slow_part(rng):
    data = planted(10, 0.2)
    fast, slow = split(data, 300)
    out, tup = fast_sift(fast, slow, 0.05, rng, alpha=0.2, R=diameter_bound(len(fast), 0.05))
    assert tup.k == 10
    for c in out.candidates:
        dec = c.decomposition
        assert np.allclose(c.mean, dec.fixed + dec.basis @ (dec.basis.T @ slow[dec.index]))


def test_faster_list_size_and_exact_hit(rng):
    data = planted(10, 0.2)
    fast, _ = split(data, 300)
    target = np.linspace(-1, 1, 10)
    slow = np.tile(target, (50, 1))
    out, tup = faster_sift(fast, slow, 0.05, rng, alpha=0.2, R=diameter_bound(len(fast), 0.05))
    assert len(out) == faster_list_size(0.2, 0.05) == math.ceil(10 * math.log(4 / 0.01))
    proj = tup.B @ tup.B.T
    assert min(np.linalg.norm(proj @ (m - target)) for m in out.means()) <= 1e-9
