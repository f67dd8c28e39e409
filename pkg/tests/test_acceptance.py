"""Acceptance suite: one PASS/FAIL line per criterion.

Runs under pytest (lines go straight to the terminal) or as a script:
``python3 tests/test_acceptance.py``.
"""

import math
import os
import subprocess
import sys
from functools import lru_cache

import numpy as np
import pytest

from ldme.cli import audit_run, make_instance
from ldme.counters import RunCounters
from ldme.datagen import InstanceSpec, eval_list, gen_instance
from ldme.fantope import exact_project
from ldme.fastsift import fast_sift, good_tuple_cap, loop_cap, mmw_horizon
from ldme.io import Instance
from ldme.oracles import (
    TRACE_EXP_CASES,
    divergence_trial,
    fantope_trial,
    regret_trial,
    sandwich_trial,
    trace_exp_trial,
)
from ldme.pipeline import cluster_radius, diameter_bound, preprocess

GRID_D = (10, 20, 50)
GRID_ALPHA = (0.1, 0.2)
GRID_SEEDS = range(20)
DELTA = 0.05
MODES = ("slow", "fast", "faster")


RESULTS: list[str] = []


@pytest.fixture
def emit(capsys):
    def emit_line(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        RESULTS.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit_line


def grid_instance(d: int, alpha: float, seed: int, **kw) -> Instance:
    spec = InstanceSpec(d=d, n=int(round(10 * d / alpha)), alpha=alpha, seed=seed, **kw)
    data, slow = make_instance(spec, DELTA)
    return Instance(data, slow, {})


@lru_cache(maxsize=2)
def grid_runs(outliers: str = "far-clusters", modes: tuple = MODES) -> tuple:
    """Audited runs of every mode on the planted grid."""
    rows = []
    for d in GRID_D:
        for alpha in GRID_ALPHA:
            for seed in GRID_SEEDS:
                inst = grid_instance(d, alpha, seed, outlier_model=outliers)
                for mode in modes:
                    body = audit_run(inst, mode, DELTA, seed)
                    rows.append({"d": d, "alpha": alpha, "seed": seed, "mode": mode,
                                 "n_fast": int(inst.fast_indices.size), **body})
    return tuple(rows)


def runs(mode: str) -> list[dict]:
    return [r for r in grid_runs() if r["mode"] == mode]


def test_criterion_01_sift_error(emit):
    rs = runs("slow")
    worst = max(r["metrics"]["min_sq_error"] * r["alpha"] / 22 for r in rs)
    ok = worst <= 1
    emit(1, ok, f"slow-mode min sq error <= 22/alpha in all {len(rs)} runs "
                f"(worst ratio {worst:.4f})")
    assert ok


def test_criterion_02_fast_error_and_list_size(emit):
    rs = runs("fast")
    bad_size = [r for r in rs if r["metrics"]["list_size"] > 2 / r["alpha"]]
    worst = max(r["metrics"]["min_sq_error"] * r["alpha"] / 1052 for r in rs)
    norm = max(r["metrics"]["normalized_error"] for r in rs)
    ok = not bad_size and worst <= 1
    emit(2, ok, f"fast mode |L| <= 2/alpha ({len(bad_size)} over), min sq error <= 1052/alpha "
                f"(worst ratio {worst:.4f}), max sqrt(alpha)*error {norm:.3f}")
    assert ok


def faster_envelope(alpha: float) -> float:
    return math.sqrt(1052 / alpha) * math.sqrt(1 + math.log(1 / (DELTA * alpha)) / math.log(2))


def test_criterion_03_faster_error_and_list_size(emit):
    rs = runs("faster")
    bad_size = [r for r in rs if r["metrics"]["list_size"] > 2 / r["alpha"]]
    ratios = [r["metrics"]["min_error"] / faster_envelope(r["alpha"]) for r in rs]
    flagged = sum(x > 0.25 for x in ratios)
    ok = not bad_size and max(ratios) <= 1
    emit(3, ok, f"faster mode |L| <= 2/alpha ({len(bad_size)} over), error within envelope "
                f"(worst ratio {max(ratios):.4f}); {flagged} runs flagged above 0.25x")
    assert ok


def test_criterion_04_saturation_and_safety(emit):
    # far clusters stop the filter at once, so the in-ball grid supplies live rounds
    kinds = ("saturation", "safety")
    rows = grid_runs() + grid_runs("random-uniform-in-ball", ("slow", "fast"))
    checks = {k: sum(r["checks"].get(k, 0) for r in rows) for k in kinds}
    bad = [v for r in rows for v in r["violations"] if v["kind"] in kinds]
    ok = not bad and checks["saturation"] > 0
    emit(4, ok, f"{len(rows)} runs: {checks['saturation']} saturation and "
                f"{checks['safety']} safety checks, {len(bad)} violations")
    assert ok


def test_criterion_05_fantope_oracle(emit):
    passed = {}
    for k in (2, 5, 10):
        rng = np.random.default_rng([5, k])
        passed[k] = sum(fantope_trial(rng, d=40, k=k, Delta=0.05)["ok"] for _ in range(100))
    y1 = exact_project(np.diag([10.0, 0.0, 0.0]), 2).Y
    y2 = exact_project(np.zeros((6, 6)), 2).Y
    exact_ok = (np.max(np.abs(y1 - np.diag([1.0, 0.5, 0.5]))) <= 1e-9
                and np.max(np.abs(y2 - np.eye(6) / 3)) <= 1e-9)
    ok = all(p >= 95 for p in passed.values()) and exact_ok
    emit(5, ok, f"approximate projection within k*Delta: {passed} of 100; "
                f"closed-form examples {'match' if exact_ok else 'differ'}")
    assert ok


def test_criterion_06_divergence_bound(emit):
    rng = np.random.default_rng(6)
    outs = [divergence_trial(rng, d_max=30) for _ in range(200)]
    worst = max(o["lhs"] - o["rhs"] for o in outs)
    ok = all(o["ok"] for o in outs)
    emit(6, ok, f"divergence bound holds in {sum(o['ok'] for o in outs)}/200 "
                f"(max excess {worst:.2e})")
    assert ok


def test_criterion_07_regret_bound(emit):
    rng = np.random.default_rng(7)
    outs = [regret_trial(rng, d=30, k=3, T=40, Delta=1 / 200) for _ in range(30)]
    ok = all(o["ok"] for o in outs)
    emit(7, ok, f"regret slack >= 0 in {sum(o['ok'] for o in outs)}/30 "
                f"(min slack {min(o['slack'] for o in outs):.3f})")
    assert ok


def test_criterion_08_power_sandwich(emit):
    rng = np.random.default_rng(8)
    outs = [sandwich_trial(rng, d=30, k=5, eps=0.05) for _ in range(100)]
    passed = [o for o in outs if o["ok"]]
    rayleigh = all(o["rayleigh_ok"] for o in passed)
    ok = len(passed) >= 95 and rayleigh
    emit(8, ok, f"sandwich passes in {len(passed)}/100; Rayleigh quotients within 1+-eps "
                f"in {'all' if rayleigh else 'not all'} passing runs")
    assert ok


def test_criterion_09_trace_exponential(emit):
    fails = {}
    for case in TRACE_EXP_CASES:
        for gamma in (0.1, 0.05):
            n_fail = 0
            for seed in range(50):
                rng = np.random.default_rng([9, seed])
                n_fail += not trace_exp_trial(rng, case, gamma)["ok"]
            fails[f"{case}@{gamma}"] = n_fail
    ok = all(f <= 0.05 * 50 for f in fails.values())
    emit(9, ok, f"failures per configuration out of 50: {fails}")
    assert ok


def test_criterion_10_preprocess(emit):
    delta = 0.01
    together, radius_ok = {}, True
    for d in GRID_D:
        for alpha in GRID_ALPHA:
            hits = 0
            for seed in range(100):
                n = int(round(10 * d / alpha))
                data = gen_instance(InstanceSpec(d=d, n=n, alpha=alpha, seed=seed))
                rng = np.random.default_rng([10, seed])
                clusters = preprocess(data.points, delta, rng, alpha=alpha)
                S = set(data.truth.inlier_indices.tolist())
                hits += any(S <= set(c.tolist()) for c in clusters)
                if d <= 20:
                    R = diameter_bound(n, delta)
                    radius_ok &= all(cluster_radius(data.points[c]) <= R for c in clusters)
            together[(d, alpha)] = hits
    ok = all(h >= 99 for h in together.values()) and radius_ok
    emit(10, ok, f"inliers in one cluster (of 100 seeds) per (d, alpha): "
                 f"{ {f'{d},{a}': h for (d, a), h in together.items()} }; "
                 f"radii <= 4n^4/delta^2: {radius_ok}")
    assert ok


def test_criterion_11_sampling_regime(emit):
    d, alpha = 5, 0.05
    sizes, errs = [], []
    for seed in range(20):
        inst = grid_instance(d, alpha, seed)
        m = audit_run(inst, "fast", DELTA, seed)["metrics"]
        sizes.append(m["list_size"])
        errs.append(m["min_sq_error"])
    ok = max(sizes) <= 3 / alpha and max(errs) <= 84 * d
    emit(11, ok, f"|L| max {max(sizes)} <= {3 / alpha:.0f}; min sq error max {max(errs):.3f} "
                 f"<= {84 * d}")
    assert ok


def spiked_points(seed: int, n: int = 600, d: int = 10, spike: float = 100.0) -> np.ndarray:
    """Gaussian bulk plus six tight clumps at +-spike along three axes."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    for j in range(6):
        x[j * 10:(j + 1) * 10] = 0.1 * rng.standard_normal((10, d))
        x[j * 10:(j + 1) * 10, j // 2] += (1 if j % 2 else -1) * spike
    return x


def explicit_k_runs() -> list[dict]:
    """Fast filter with a small explicit k so the MMW and bicriteria loops run."""
    out = []
    for seed in range(2):
        c = RunCounters()
        fast_sift(spiked_points(seed), spiked_points(seed + 100), DELTA,
                  np.random.default_rng([12, seed]), alpha=0.9,
                  R=diameter_bound(600, DELTA), k=3, counters=c)
        out.append({"d": 10, "alpha": 0.9, "n_fast": 600, "counters": c.as_dict()})
    return out


def test_criterion_12_iteration_caps(emit):
    rows = [{"d": r["d"], "alpha": r["alpha"], "n_fast": r["n_fast"],
             "counters": r["metrics"]["counters"]} for r in grid_runs() if r["mode"] != "slow"]
    rows += explicit_k_runs()
    over = 0
    for r in rows:
        c = r["counters"]
        over += c["max_mmw_steps"] > mmw_horizon(r["d"])
        over += c["max_bicriteria_passes"] > loop_cap(diameter_bound(r["n_fast"], DELTA))
        over += c["max_good_tuple_calls"] > good_tuple_cap(r["alpha"])
    steps = max(r["counters"]["max_mmw_steps"] for r in rows)
    ok = over == 0
    emit(12, ok, f"{len(rows)} runs, {over} cap violations (largest MMW step count {steps})")
    assert ok


def run_cli(*args: str) -> None:
    subprocess.run([sys.executable, "-m", "ldme", *args], check=True,
                   stdout=subprocess.DEVNULL, env={**os.environ, "LDME_THREADS": "2"})


def test_criterion_13_determinism(emit, tmp_path):
    same = {}
    inst = tmp_path / "inst"
    for tag in ("a", "b"):
        run_cli("gen", "--d", "20", "--n", "2000", "--alpha", "0.1", "--seed", "13",
                "--out", str(inst))
        for f in ("points.bin", "manifest.json"):
            (tmp_path / f"{tag}_{f}").write_bytes((inst / f).read_bytes())
        run_cli("estimate", "--in", str(inst), "--mode", "fast", "--seed", "13",
                "--out", str(tmp_path / "est.json"))
        (tmp_path / f"{tag}_result.json").write_bytes((tmp_path / "est.json").read_bytes())
        run_cli("bench", "--d", "10", "--alpha", "0.2", "--seeds", "2", "--seed", "13",
                "--out", str(tmp_path / "bench.json"), "--csv", str(tmp_path / "bench.csv"))
        for f in ("bench.json", "bench.csv"):
            (tmp_path / f"{tag}_{f}").write_bytes((tmp_path / f).read_bytes())
    for f in ("points.bin", "manifest.json", "result.json", "bench.json", "bench.csv"):
        same[f] = (tmp_path / f"a_{f}").read_bytes() == (tmp_path / f"b_{f}").read_bytes()
    ok = all(same.values())
    emit(13, ok, f"byte-identical reruns: {same}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
