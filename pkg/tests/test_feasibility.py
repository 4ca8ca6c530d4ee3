from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from demoscore import env, feasibility, invdyn
from demoscore.feasibility import CalibrationError, FeasibilityCalibration, feasibility_from_distance
from demoscore.traj import TrajectorySet


@pytest.fixture(scope="module")
def slow():
    return env.make_spec("driving2d", "slow")


@pytest.fixture(scope="module")
def feasible(slow):
    return env.collect(slow, "random", 40, True, seed=11)


def test_boundary_values_exact():
    assert feasibility_from_distance(0.25, 0.25, 0.75) == 1.0
    assert feasibility_from_distance(0.5, 0.25, 0.75) == 0.5
    assert feasibility_from_distance(0.75, 0.25, 0.75) == 0.0
    assert feasibility_from_distance(0.1, 0.25, 0.75) == 1.0
    assert feasibility_from_distance(9.0, 0.25, 0.75) == 0.0


def test_vectorised_matches_scalar():
    F = np.array([0.0, 0.3, 0.5, 0.7, 1.0])
    w = feasibility_from_distance(F, 0.25, 0.75)
    assert [feasibility_from_distance(float(f), 0.25, 0.75) for f in F] == list(w)


pos = st.floats(1e-6, 1e3, allow_nan=False)


@given(st.floats(0, 1e3), pos, st.floats(0, 2e3))
def test_score_in_unit_interval(d_min, width, F):
    w = feasibility_from_distance(F, d_min, d_min + width)
    assert 0.0 <= w <= 1.0


@given(st.floats(0, 10), pos, st.floats(0, 20), st.floats(0, 5))
def test_non_increasing_and_lipschitz(d_min, width, F, eps):
    d_max = d_min + width
    a = feasibility_from_distance(F, d_min, d_max)
    b = feasibility_from_distance(F + eps, d_min, d_max)
    assert b <= a + 1e-12
    assert a - b <= eps / width + 1e-9


@given(st.floats(0, 10), st.floats(1e-3, 10), st.floats(0, 20), st.floats(1e-3, 1e3))
def test_scale_coherence(d_min, width, F, c):
    d_max = d_min + width
    assume(abs(F - d_min) > 1e-9 and abs(F - d_max) > 1e-9)
    a = feasibility_from_distance(F, d_min, d_max)
    b = feasibility_from_distance(c * F, c * d_min, c * d_max)
    assert b == pytest.approx(a, abs=1e-9)


def test_calibration_record_validated():
    with pytest.raises(CalibrationError):
        FeasibilityCalibration(0.5, 0.5, 0.001, 0)
    with pytest.raises(CalibrationError):
        FeasibilityCalibration(-0.1, 0.5, 0.001, 0)


def test_zero_perturbation_is_degenerate(slow, feasible):
    with pytest.raises(CalibrationError) as err:
        feasibility.calibrate(invdyn.AnalyticInverse(slow), slow, feasible, 0.0, seed=1)
    assert "d_min" in str(err.value) and "d_max" in str(err.value)


def test_perturbed_calibration_orders_thresholds(slow, feasible):
    cal = feasibility.calibrate(invdyn.AnalyticInverse(slow), slow, feasible, 0.001, seed=1)
    assert cal.d_min == 0.0  # exact inverse replays target rollouts perfectly
    assert 0.0 < cal.d_max < np.inf
    assert cal.source == feasible.fingerprint()
    again = feasibility.calibrate(invdyn.AnalyticInverse(slow), slow, feasible, 0.001, seed=1)
    assert again == cal


def test_calibration_needs_data(slow):
    with pytest.raises(CalibrationError):
        feasibility.calibrate(invdyn.AnalyticInverse(slow), slow,
                              TrajectorySet((), "feasible-samples"), 0.001, seed=0)


class _ZeroModel:
    family, variant = "driving2d", "slow"

    def check_target(self, target):
        pass

    def predict(self, s, s_next):
        return np.zeros((len(s), 1))


def test_perturbation_bounded_per_coordinate(slow, feasible):
    demos = [t.states for t in feasible]
    rep = invdyn.replay_states(_ZeroModel(), slow, demos, perturb=0.01, seed=3)
    for d, r in zip(demos, rep):
        np.testing.assert_array_equal(d[0], r[0])  # the first state is never perturbed
        clean, _ = env.step(slow, r[:-1], np.zeros((len(r) - 1, 1)))
        noise = r[1:] - clean
        assert np.all(np.abs(noise) <= 0.01) and np.any(noise != 0)


def test_target_rollouts_score_one_with_exact_inverse(slow):
    demos = env.collect(slow, "optimal", 10, False, seed=4)
    cal = FeasibilityCalibration(0.01, 0.05, 0.001, 0)
    res = feasibility.score_set(invdyn.AnalyticInverse(slow), slow, cal, demos)
    assert [r.w_f for r in res] == [1.0] * 10
    assert all(r.distance == 0.0 for r in res)
    assert feasibility.feasibility_score(invdyn.AnalyticInverse(slow), slow, cal, demos[3]) == 1.0


def test_other_dynamics_scores_lower(slow, feasible):
    model = invdyn.AnalyticInverse(slow)
    cal = feasibility.calibrate(model, slow, feasible, 0.001, seed=2)
    own = feasibility.score_set(model, slow, cal, env.collect(slow, "optimal", 20, False, seed=5))
    fast = slow.with_variant("fast")
    other = feasibility.score_set(model, slow, cal, env.collect(fast, "optimal", 20, False, seed=5))
    assert np.mean([r.w_f for r in own]) > np.mean([r.w_f for r in other])


def test_duplicates_score_identically_and_order_kept(slow):
    demos = list(env.collect(slow, "suboptimal", 5, False, seed=6))
    demos.insert(3, demos[1])
    cal = FeasibilityCalibration(0.0, 0.02, 0.001, 0)
    fast_model = invdyn.AnalyticInverse(slow)
    res = feasibility.score_set(fast_model, slow, cal, demos)
    assert [r.index for r in res] == list(range(6))
    assert res[1].w_f == res[3].w_f and res[1].distance == res[3].distance


def test_empty_set_rejected(slow):
    with pytest.raises(ValueError):
        feasibility.score_set(invdyn.AnalyticInverse(slow), slow,
                              FeasibilityCalibration(0.0, 1.0, 0.001, 0), [])
