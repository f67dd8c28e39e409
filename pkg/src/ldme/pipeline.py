"""End-to-end list-decodable mean estimation.

The fast and faster modes cluster the data along a random direction so each
cluster has polynomially bounded diameter. They then run the good-tuple
estimators per cluster and prune each cluster's list greedily inside the
candidate subspace. The slow mode runs the soft filter directly. When the
inlier fraction is below ``1/(C d)``, sampling plus greedy pruning in a
random sign sketch already meets the error target, and the driver switches
to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_stats import Data, Dataset, as_points
from .counters import RunCounters
from .errors import UndecomposedList, ValidationError
from .estimates import Candidate, EstimateList, safe_ceil
from .fantope import sign_sketch
from .fastsift import GoodTuple, fast_sift, faster_sift
from .sift import Auditor, SiftConfig, run_sift

MODES = ("fast", "faster", "slow")
SUPPORT_RADIUS = 32.0
SEPARATION = 128.0
SAMPLE_SUPPORT = 8.8
SAMPLE_SEPARATION = 35.2
JL_CONST = 9.0
JL_EPS = 0.1
SLOW_CONST = 4.0


def preprocess_threshold(n: int, delta: float) -> float:
    return 4.0 * math.sqrt(n * math.log(n / delta))


def diameter_bound(n: int, delta: float) -> float:
    """``R = 4 n^4 / delta^2``."""
    return 4.0 * float(n) ** 4 / (delta * delta)


def partition_projections(values: np.ndarray, threshold: float) -> list[np.ndarray]:
    """Classes of the chain relation ``|v_i - v_j| <= threshold``.

    Sort-and-scan; classes come out in increasing order of value and each
    holds sorted indices.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return []
    order = np.argsort(values, kind="stable")
    gaps = np.diff(values[order]) > threshold
    cuts = np.flatnonzero(gaps) + 1
    return [np.sort(part) for part in np.split(order, cuts)]


def preprocess(
    data: Data,
    delta: float,
    rng: np.random.Generator,
    *,
    alpha: float,
    direction: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Clusters of at least ``alpha n`` points along a random Gaussian direction.

    ``direction`` overrides the Gaussian draw (for tests).
    """
    points = as_points(data)
    n, d = points.shape
    if n < 2:
        raise ValidationError("preprocessing needs at least two points")
    g = rng.standard_normal(d) if direction is None else np.asarray(direction, dtype=np.float64)
    parts = partition_projections(points @ g, preprocess_threshold(n, delta))
    return [p for p in parts if p.size >= alpha * n - 1e-9]


def cluster_radius(points: np.ndarray) -> float:
    """Largest distance from a point to the cluster mean."""
    centered = points - points.mean(axis=0)
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", centered, centered))))


def slow_size(n: int, alpha: float, delta: float, c_slow: float = SLOW_CONST) -> int:
    """Rows reserved for the slow part: ``ceil(c log R / alpha^2)``, at most ``n/2``."""
    want = safe_ceil(c_slow * math.log(diameter_bound(n, delta)) / (alpha * alpha))
    return max(1, min(want, n // 2))


def split_slow(
    n: int, alpha: float, delta: float, rng: np.random.Generator, c_slow: float = SLOW_CONST
) -> tuple[np.ndarray, np.ndarray]:
    """Random disjoint (fast, slow) index sets, each sorted."""
    perm = rng.permutation(n)
    m = slow_size(n, alpha, delta, c_slow)
    return np.sort(perm[m:]), np.sort(perm[:m])


def _projected_rows(cand: Candidate, slow: np.ndarray, cache: dict) -> np.ndarray:
    basis = cand.decomposition.basis
    key = id(basis)
    if key not in cache:
        cache[key] = (basis, slow @ basis)
    return cache[key][1]


def postprocess(estimates: EstimateList, T_slow: Data, alpha: float) -> EstimateList:
    """Greedy pruning of one cluster's list.

    A candidate ``fixed + P x_i`` qualifies when at least ``n' alpha / 2`` slow
    points lie within squared distance ``32 s / alpha`` of ``x_i`` after
    projection by ``P``. Qualified candidates are taken in order of support
    (ties by position) and kept when farther than squared distance
    ``128 s / alpha`` from every kept one. The scale ``s`` is
    ``max(1, rank(P) / ceil(4/alpha))``. It is 1 for soft-filter output and
    widens both radii for the higher-rank subspaces of sampled lists.
    """
    slow = as_points(T_slow)
    n_slow = slow.shape[0]
    if any(c.decomposition is None for c in estimates.candidates):
        raise UndecomposedList("every candidate needs its subspace decomposition")
    base_rank = safe_ceil(4.0 / alpha)
    cache: dict = {}
    support = []
    for c in estimates.candidates:
        rows = _projected_rows(c, slow, cache)
        rank = c.decomposition.basis.shape[1]
        scale = max(1.0, rank / base_rank)
        if rows.shape[1] == 0:
            count = n_slow
        else:
            diff = rows - rows[c.decomposition.index]
            count = int(np.sum(np.einsum("ij,ij->i", diff, diff) <= SUPPORT_RADIUS * scale / alpha))
        support.append((count, scale))
    need = n_slow * alpha / 2.0
    order = sorted(
        (i for i, (count, _) in enumerate(support) if count >= need - 1e-9),
        key=lambda i: (-support[i][0], i),
    )
    kept: list[int] = []
    for i in order:
        mean = estimates.candidates[i].mean
        limit = SEPARATION * support[i][1] / alpha
        if all(np.sum((mean - estimates.candidates[j].mean) ** 2) > limit for j in kept):
            kept.append(i)
    kept.sort()
    return EstimateList([estimates.candidates[i] for i in kept], dict(estimates.alpha_effective))


def jl_width(count: int, delta: float) -> int:
    return safe_ceil(JL_CONST * math.log(count * count / delta) / (JL_EPS * JL_EPS))


def sample_postprocess(
    data: Data,
    alpha: float,
    delta: float,
    rng: np.random.Generator,
    *,
    cluster_id: int = 0,
) -> EstimateList:
    """Sample ``ceil(36 log(2/delta) / alpha)`` points and prune them greedily
    in a random sign sketch (the identity when the sketch would not be
    smaller than ``d``)."""
    points = as_points(data)
    n, d = points.shape
    size = safe_ceil(36.0 * math.log(2.0 / delta) / alpha)
    picks = rng.integers(0, n, size=size)
    sample = points[picks]
    width = jl_width(size, delta)
    z = sample if width >= d else sample @ sign_sketch(d, width, rng)
    sq = np.einsum("ij,ij->i", z, z)
    dist = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.maximum(dist, 0.0, out=dist)
    support = np.sum(dist <= SAMPLE_SUPPORT * d, axis=1)
    need = alpha * size / 3.0
    order = sorted((i for i in range(size) if support[i] >= need - 1e-9),
                   key=lambda i: (-int(support[i]), i))
    kept: list[int] = []
    for i in order:
        if all(dist[i, j] > SAMPLE_SEPARATION * d for j in kept):
            kept.append(i)
    kept.sort()
    cands = [Candidate(sample[i].copy(), None, cluster_id, "sample") for i in kept]
    return EstimateList(cands, {cluster_id: alpha})


@dataclass
class PipelineReport:
    """Diagnostics filled in by the driver when requested."""

    mode: str = ""
    clusters: list[np.ndarray] = field(default_factory=list)
    kept_clusters: list[int] = field(default_factory=list)
    tuples: dict[int, GoodTuple] = field(default_factory=dict)
    raw_sizes: dict[int, int] = field(default_factory=dict)
    dispatched_to_sampling: bool = False


def use_sampling(alpha: float, d: int, C: float = 1.0) -> bool:
    return alpha <= 1.0 / (C * d)


def list_decodable_mean_estimation(
    T: Data,
    T_slow: Data | None,
    alpha: float,
    delta: float,
    mode: str,
    rng: np.random.Generator,
    *,
    C: float = 1.0,
    inliers: np.ndarray | None = None,
    slow_inliers: np.ndarray | None = None,
    audit: Auditor | None = None,
    counters: RunCounters | None = None,
    report: PipelineReport | None = None,
    steps: int | None = None,
) -> EstimateList:
    """Run the estimator in ``mode`` (``fast``, ``faster`` or ``slow``).

    Args:
        T: Main point set.
        T_slow: Independent rows for the subspace stage, or ``None`` to
            split them off ``T``.
        alpha: Inlier fraction, in ``(0, 1/2]``.
        delta: Overall failure probability.
        mode: Estimator variant.
        rng: Randomness for every stage.
        C: Sampling regime constant; ``alpha <= 1/(C d)`` selects sampling.
        inliers: Inlier rows of ``T`` for auditing.
        slow_inliers: Inlier rows of ``T_slow`` for auditing.
        audit: Auditor that collects the tallies; requires ``inliers``.
        counters: Optional instrumentation.
        report: Optional diagnostics sink.
        steps: Optional MMW horizon override.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if not 0 < alpha <= 0.5:
        raise ValidationError("alpha must lie in (0, 1/2]")
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    points = as_points(T)
    if isinstance(T, Dataset) and inliers is None and T.truth is not None:
        inliers = T.truth.inlier_indices
    n, d = points.shape
    report = PipelineReport() if report is None else report
    report.mode = mode
    if T_slow is None:
        fast_idx, slow_idx = split_slow(n, alpha, delta, rng)
        slow = points[slow_idx]
        if inliers is not None:
            in_set = set(int(i) for i in inliers)
            slow_inliers = np.array([p for p, i in enumerate(slow_idx) if int(i) in in_set],
                                    dtype=np.int64)
            fast_pos = {int(i): p for p, i in enumerate(fast_idx)}
            inliers = np.array([fast_pos[int(i)] for i in inliers if int(i) in fast_pos],
                               dtype=np.int64)
        points = points[fast_idx]
        n = points.shape[0]
    else:
        slow = as_points(T_slow)
        if slow.shape[1] != d:
            raise ValidationError("slow rows differ in dimension")

    if mode == "slow":
        rows = np.vstack([points, slow])
        sub_audit = None
        if audit is not None and inliers is not None:
            extra = np.asarray([] if slow_inliers is None else slow_inliers, dtype=np.int64)
            sub_audit = audit.for_subset_rows(np.concatenate([inliers, n + extra]), rows.shape[0])
        out, _ = run_sift(rows, SiftConfig(alpha=alpha, delta=delta), rng,
                          audit=sub_audit, counters=counters)
        return out

    if use_sampling(alpha, d, C):
        report.dispatched_to_sampling = True
        return sample_postprocess(np.vstack([points, slow]), alpha, delta, rng)

    clusters = preprocess(points, delta / 2.0, rng, alpha=alpha)
    report.clusters = clusters
    R = diameter_bound(n, delta)
    slow_audit = None
    if audit is not None and slow_inliers is not None:
        slow_audit = audit.for_subset_rows(slow_inliers, slow.shape[0])
    result = EstimateList()
    for j, idx in enumerate(clusters):
        alpha_j = min(1.0, alpha * n / idx.size)
        cl_audit = None
        if audit is not None and inliers is not None:
            cl_audit = audit.for_subset(idx)
            if cl_audit.inliers.size == 0:
                cl_audit = None
        runner = fast_sift if mode == "fast" else faster_sift
        kwargs = dict(alpha=alpha_j, R=R, steps=steps, audit=cl_audit, counters=counters,
                      cluster_id=j)
        if mode == "fast":
            kwargs["slow_audit"] = slow_audit
        raw, tup = runner(points[idx], slow, delta * alpha / 2.0, rng, **kwargs)
        report.tuples[j] = tup
        report.raw_sizes[j] = len(raw)
        pruned = postprocess(raw, slow, alpha_j)
        if len(pruned) <= 2.0 / alpha_j + 1e-9:
            report.kept_clusters.append(j)
            result.extend(pruned)
    return result
