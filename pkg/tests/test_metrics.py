"""Metric oracles: OSPA, RMSE, eCDF, cardinality, and run records."""

import itertools

import numpy as np
import pytest

from mpslam.metrics import (
    ECDF,
    RunRecord,
    StepRecord,
    cardinality_error,
    detected_count,
    ecdf,
    ospa,
    ospa_series,
    rmse,
    summarize,
)


def make_run(errors, durations=None, map_counts=None, visible_counts=None,
             algorithm="sp", seed=0, failed=False):
    """Straight-line truth with the given per-step position errors."""
    n = len(errors)
    durations = durations or [0.01] * n
    map_counts = map_counts or [0] * n
    visible_counts = visible_counts or [0] * n
    rec = RunRecord(algorithm=algorithm, seed=seed, failed=failed,
                    all_va=np.array([[0.0, 6.0], [6.0, 0.0]]))
    for i in range(n):
        truth = np.array([float(i), 0.0, 1.0, 0.0, 0.0])
        est = truth.copy()
        est[0] += errors[i]
        rec.steps.append(StepRecord(
            true_state=truth,
            est_state=est,
            map_positions=np.zeros((map_counts[i], 2)),
            map_existences=np.ones(map_counts[i]),
            visible_va=np.zeros((visible_counts[i], 2)),
            duration=durations[i],
        ))
    return rec


def test_ospa_identical_sets_zero():
    x = np.array([[0.0, 0.0], [1.0, 2.0], [5.0, 5.0]])
    assert ospa(x, x, 5.0, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert ospa(np.zeros((0, 2)), np.zeros((0, 2)), 5.0, 2.0) == 0.0


def test_ospa_pure_cardinality_penalty():
    assert ospa(np.zeros((0, 2)), np.array([[1.0, 1.0]]), 5.0, 2.0) == 5.0
    assert ospa(np.array([[1.0, 1.0]]), np.zeros((0, 2)), 5.0, 2.0) == 5.0


def test_ospa_worked_example():
    x = np.array([[0.0, 0.0]])
    y = np.array([[3.0, 0.0], [100.0, 0.0]])
    want = np.sqrt((3.0 ** 2 + 5.0 ** 2) / 2.0)
    assert ospa(x, y, 5.0, 2.0) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(np.sqrt(17.0))


def test_ospa_bounded_by_cutoff_and_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.uniform(-10, 10, size=(rng.integers(0, 6), 2))
        y = rng.uniform(-10, 10, size=(rng.integers(0, 6), 2))
        c = float(rng.uniform(0.5, 8.0))
        p = float(rng.choice([1.0, 2.0]))
        d_xy = ospa(x, y, c, p)
        assert 0.0 <= d_xy <= c + 1e-12
        assert d_xy == pytest.approx(ospa(y, x, c, p), abs=1e-9)


def test_ospa_triangle_inequality():
    rng = np.random.default_rng(1)
    for _ in range(200):
        sets = [rng.uniform(-5, 5, size=(rng.integers(1, 6), 2))
                for _ in range(3)]
        c = float(rng.uniform(1.0, 6.0))
        for p in (1.0, 2.0):
            ab = ospa(sets[0], sets[1], c, p)
            bc = ospa(sets[1], sets[2], c, p)
            ac = ospa(sets[0], sets[2], c, p)
            assert ac <= ab + bc + 1e-9


def test_ospa_hungarian_matches_enumeration():
    # Force the Hungarian path (n > 6) and check it against brute force.
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform(0, 10, size=(5, 2))
        y = rng.uniform(0, 10, size=(7, 2))
        c, p = 4.0, 2.0
        got = ospa(x, y, c, p)
        d = np.linalg.norm(x[:, None] - y[None, :], axis=2)
        cost = np.minimum(d, c) ** p
        best = min(sum(cost[i, perm[i]] for i in range(5))
                   for perm in itertools.permutations(range(7), 5))
        want = ((best + c ** p * 2) / 7) ** (1 / p)
        assert got == pytest.approx(want, rel=1e-9)


def test_ospa_validates_parameters():
    x = np.zeros((1, 2))
    with pytest.raises(ValueError):
        ospa(x, x, 0.0, 2.0)
    with pytest.raises(ValueError):
        ospa(x, x, 5.0, 0.5)


def test_rmse_perfect_and_single_run():
    rec = make_run([0.0, 0.0, 0.0])
    series, excluded = rmse([rec])
    assert np.allclose(series, 0.0)
    assert excluded == 0
    series, _ = rmse([make_run([0.3, 0.4])])
    assert np.allclose(series, [0.3, 0.4])


def test_rmse_two_runs_definition():
    e = 0.6
    series, _ = rmse([make_run([0.0, 0.0]), make_run([e, e])])
    assert np.allclose(series, e / np.sqrt(2.0))


def test_rmse_excludes_lost_runs():
    good = make_run([0.05, 0.04])
    bad = make_run([0.05, 7.0])   # final error beyond the loss bound
    series, excluded = rmse([good, bad])
    assert excluded == 1
    assert np.allclose(series, good.errors())
    # every run lost: NaN series, everything excluded
    series, excluded = rmse([bad])
    assert excluded == 1
    assert np.all(np.isnan(series))


def test_lost_flags():
    assert not make_run([0.05, 0.2]).lost
    assert make_run([0.05, 1.2]).lost
    assert make_run([0.05, 0.05], failed=True).lost


def test_ecdf_basic_fractions():
    f = ecdf([1.0, 2.0, 3.0])
    assert f(2.0) == pytest.approx(2.0 / 3.0)
    assert f(0.5) == 0.0
    assert f(3.0) == 1.0
    assert f(10.0) == 1.0
    # fraction above a threshold
    assert 1.0 - f(0.1) == pytest.approx(1.0)


def test_ecdf_single_jump():
    f = ecdf([2.0, 2.0, 2.0])
    assert f(1.999999) == 0.0
    assert f(2.0) == 1.0


def test_ecdf_rejects_empty():
    with pytest.raises(ValueError):
        ecdf([])


def test_cardinality_error_oracle():
    exact = make_run([0.0] * 2, map_counts=[3, 3], visible_counts=[3, 3])
    assert np.allclose(cardinality_error([exact]), 0.0)
    off = make_run([0.0] * 2, map_counts=[3, 3], visible_counts=[4, 4])
    assert np.allclose(cardinality_error([off]), 1.0)
    mean = cardinality_error([exact, make_run([0.0] * 2, map_counts=[2, 2],
                                              visible_counts=[4, 4])])
    assert np.allclose(mean, 1.0)


def test_ospa_series_uses_visible_or_all():
    rec = RunRecord(algorithm="sp", seed=0,
                    all_va=np.array([[0.0, 6.0], [6.0, 0.0]]))
    rec.steps.append(StepRecord(
        true_state=np.zeros(5), est_state=np.zeros(5),
        map_positions=np.array([[0.0, 6.0]]),
        map_existences=np.array([1.0]),
        visible_va=np.array([[0.0, 6.0]]),
        duration=0.0,
    ))
    assert ospa_series([rec], visible_only=True)[0] == pytest.approx(0.0)
    # against the full map, the second image is missing: pure penalty term
    want = np.sqrt(25.0 / 2.0)
    assert ospa_series([rec], visible_only=False)[0] == pytest.approx(want)


def test_detected_count_radius():
    rec = RunRecord(algorithm="sp", seed=0,
                    all_va=np.array([[0.0, 6.0], [6.0, 0.0]]))
    rec.steps.append(StepRecord(
        true_state=np.zeros(5), est_state=np.zeros(5),
        map_positions=np.array([[0.2, 6.1], [5.0, 1.0]]),
        map_existences=np.array([1.0, 1.0]),
        visible_va=np.zeros((0, 2)),
        duration=0.0,
    ))
    assert detected_count(rec, radius=0.5) == 1
    assert detected_count(rec, radius=5.0) == 2


def test_run_record_json_round_trip():
    rec = make_run([0.1, 0.2], durations=[0.5, 0.25],
                   map_counts=[1, 2], visible_counts=[2, 2], seed=17)
    rec.failure_reason = ""
    clone = RunRecord.from_json(rec.to_json())
    assert clone.algorithm == rec.algorithm
    assert clone.seed == 17
    assert clone.n_steps == 2
    assert np.allclose(clone.errors(), rec.errors())
    assert np.allclose(clone.durations(), rec.durations())
    assert np.allclose(clone.all_va, rec.all_va)
    assert clone.to_json() == rec.to_json()


def test_step_record_validation():
    with pytest.raises(ValueError):
        StepRecord(true_state=np.zeros(5), est_state=np.zeros(5),
                   map_positions=np.zeros((2, 2)),
                   map_existences=np.ones(1),
                   visible_va=np.zeros((0, 2)), duration=0.0)
    with pytest.raises(ValueError):
        StepRecord(true_state=np.zeros(5), est_state=np.zeros(5),
                   map_positions=np.zeros((0, 2)),
                   map_existences=np.zeros(0),
                   visible_va=np.zeros((0, 2)), duration=-1.0)


def test_summarize_bookkeeping():
    runs = [make_run([0.05, 0.04], durations=[0.1, 0.1]),
            make_run([0.05, 2.0], durations=[0.3, 0.3])]
    out = summarize(runs)
    assert out["runs"] == 2
    assert out["lost"] == 1
    assert out["lost_rate"] == 0.5
    assert out["mean_step_seconds"] == pytest.approx(0.2)
    assert out["final_error_below_0p1"] == pytest.approx(0.5)
    assert out["rmse_last"] == pytest.approx(0.04)
