import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldme.core_stats import Dataset, Truth
from ldme.datagen import (
    INLIER_MODELS,
    OUTLIER_MODELS,
    InstanceSpec,
    aggregate,
    assumption_holds,
    check_assumption,
    eval_list,
    gen_instance,
)
from ldme.errors import ValidationError


def test_point_mass_with_two_far_clusters():
    spec = InstanceSpec(d=3, n=100, alpha=0.5, inlier_model="point-mass",
                        outlier_count=2, outlier_spread=0.0, seed=1)
    data = gen_instance(spec)
    pts = data.points
    assert np.all(pts[data.truth.inlier_indices] == 0.0)
    out = np.delete(pts, data.truth.inlier_indices, axis=0)
    centers, counts = np.unique(out, axis=0, return_counts=True)
    assert sorted(counts.tolist()) == [25, 25]
    assert np.allclose(np.linalg.norm(centers, axis=1), 10 * math.sqrt(3))


def test_assumption_on_point_mass_is_zero():
    data = Dataset(np.tile([1.0, 2.0], (4, 1)), Truth(np.array([1.0, 2.0]), np.arange(4), 1.0))
    assert check_assumption(data) == 0.0


def test_assumption_on_symmetric_pair():
    pts = np.array([[1.0, 0.0], [-1.0, 0.0]])
    data = Dataset(pts, Truth(np.zeros(2), np.arange(2), 1.0))
    assert check_assumption(data) == pytest.approx(1.0)


def test_assumption_needs_truth():
    with pytest.raises(ValidationError):
        check_assumption(Dataset(np.zeros((3, 2))))


@pytest.mark.parametrize("model", INLIER_MODELS)
def test_generated_inliers_satisfy_assumption(model):
    ok = sum(
        assumption_holds(gen_instance(InstanceSpec(d=10, n=500, alpha=0.2, inlier_model=model, seed=s)))
        for s in range(50)
    )
    assert ok == 50


@given(
    st.integers(1, 30),
    st.integers(20, 400),
    st.floats(0.05, 1.0),
    st.sampled_from(INLIER_MODELS),
    st.sampled_from(OUTLIER_MODELS),
    st.integers(0, 2**31),
)
def test_instance_structure(d, n, alpha, inl, outl, seed):
    if round(alpha * n) < 1:
        return
    spec = InstanceSpec(d=d, n=n, alpha=alpha, inlier_model=inl, outlier_model=outl,
                        mean_norm=3.0, seed=seed)
    data = gen_instance(spec)
    idx = data.truth.inlier_indices
    assert data.points.shape == (n, d)
    assert idx.size == round(alpha * n) and np.all(np.diff(idx) > 0)
    assert np.linalg.norm(data.truth.true_mean) == pytest.approx(3.0)
    assert check_assumption(data) <= 1.0 + 1e-9


def test_generation_is_deterministic():
    spec = InstanceSpec(d=5, n=200, alpha=0.3, seed=9)
    a, b = gen_instance(spec), gen_instance(spec)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.truth.inlier_indices, b.truth.inlier_indices)


@pytest.mark.parametrize(
    "kw",
    [dict(d=0, n=10, alpha=0.5), dict(d=2, n=10, alpha=0.01), dict(d=2, n=10, alpha=1.5),
     dict(d=2, n=10, alpha=0.5, inlier_model="cauchy"), dict(d=2, n=10, alpha=0.5, outlier_count=0)],
)
def test_spec_validation(kw):
    with pytest.raises(ValidationError):
        InstanceSpec(**kw)


def test_eval_list_example():
    truth = Truth(np.zeros(2), np.arange(1), 0.25)
    m = eval_list(np.array([[3.0, 4.0], [6.0, 8.0]]), truth)
    assert m["min_error"] == 5.0 and m["min_sq_error"] == 25.0
    assert m["list_size"] == 2 and m["best_index"] == 0
    assert m["normalized_error"] == pytest.approx(2.5)


def test_eval_list_rejects_empty():
    with pytest.raises(ValidationError):
        eval_list(np.zeros((0, 2)), Truth(np.zeros(2), np.arange(1), 1.0))


def test_aggregate():
    out = aggregate([{"min_error": v} for v in (1.0, 3.0, 2.0)])
    assert out == {"median": 2.0, "max": 3.0, "count": 3}
