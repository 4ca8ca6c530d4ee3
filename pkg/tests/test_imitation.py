from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from demoscore import densenet, env, imitation as im, invdyn


@pytest.fixture(scope="module")
def slow():
    return env.make_spec("driving2d", "slow")


@pytest.fixture(scope="module")
def optimal_demos(slow):
    return list(env.collect(slow, "optimal", 300, True, seed=3))


@pytest.fixture(scope="module")
def optimal_report(slow):
    return im.evaluate(env.demo_policy(slow, "optimal"), slow, 100, 1)


def uniform(demos, variant="none"):
    ones = np.ones(len(demos))
    return im.variant_distribution(variant, demos, ones, ones, ones)


def short_cfg(epochs=2, seed=0):
    return im.ImitationConfig(batches_per_epoch=4, train=densenet.TrainConfig(epochs=epochs, seed=seed))


@pytest.mark.parametrize("family,variant", [("driving2d", "slow"), ("reacher1j", "ccw"),
                                            ("reacher1j", "cw")])
def test_outputs_stay_in_action_box(family, variant):
    spec = env.make_spec(family, variant)
    policy = im.init_policy(spec, im.ImitationConfig(train=densenet.TrainConfig(seed=5)))
    for layer in policy.net.layers:  # saturate the output to probe the edges
        layer.weight *= 25.0
    axes = [np.linspace(-30, 30, 15)] * spec.state_dim
    grid = np.array(list(itertools.product(*axes)))
    a = policy.act(grid)
    lo, hi = spec.action_box
    assert np.all((a >= lo) & (a <= hi))
    assert a.min() <= lo[0] + 1e-6 and a.max() >= hi[0] - 1e-6


def test_zero_epochs_returns_initial_policy(slow, optimal_demos):
    cfg = short_cfg(epochs=0, seed=4)
    policy, hist = im.train_policy(uniform(optimal_demos), optimal_demos,
                                   invdyn.AnalyticInverse(slow), slow, cfg)
    assert hist == []
    fresh = im.init_policy(slow, cfg)
    for a, b in zip(policy.net.params(), fresh.net.params()):
        np.testing.assert_array_equal(a, b)


def test_training_is_deterministic(slow, optimal_demos):
    model = invdyn.AnalyticInverse(slow)
    a, ha = im.train_policy(uniform(optimal_demos), optimal_demos, model, slow, short_cfg(seed=2))
    b, hb = im.train_policy(uniform(optimal_demos), optimal_demos, model, slow, short_cfg(seed=2))
    assert ha == hb
    assert densenet.dumps(a.net) == densenet.dumps(b.net)


def test_policy_checkpoint_roundtrip(slow, optimal_demos, tmp_path):
    policy, _ = im.train_policy(uniform(optimal_demos), optimal_demos,
                                invdyn.AnalyticInverse(slow), slow, short_cfg())
    policy.save(tmp_path / "pi.net")
    back = im.Policy.load(tmp_path / "pi.net")
    s = np.stack([t.states[0] for t in optimal_demos[:20]])
    np.testing.assert_array_equal(back.act(s), policy.act(s))


def test_none_variant_is_uniform(optimal_demos):
    dist = uniform(optimal_demos)
    total = sum(len(t.states) - 1 for t in optimal_demos)
    np.testing.assert_allclose(dist.probs, 1.0 / total, rtol=1e-12)


def test_variant_weights():
    w_f, w_o, w_n = np.array([1.0, 0.0, 0.5]), np.array([0.5, 1.0, 1.0]), np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(im.variant_weights("ours", w_f, w_o, w_n), [0.5, 0.0, 0.5])
    np.testing.assert_array_equal(im.variant_weights("feasibility_only", w_f, w_o, w_n), w_f)
    np.testing.assert_array_equal(im.variant_weights("optimality_only", w_f, w_o, w_n), w_o)
    np.testing.assert_array_equal(im.variant_weights("naive", w_f, w_o, w_n), [0.1, 0.0, 0.15])
    np.testing.assert_array_equal(im.variant_weights("none", w_f, w_o, w_n), [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        im.variant_weights("best", w_f, w_o, w_n)


def test_feasibility_only_support_excludes_infeasible(optimal_demos):
    demos = optimal_demos[:6]
    w_f = np.array([1.0, 0.0, 0.4, 0.0, 1.0, 0.2])
    dist = im.variant_distribution("feasibility_only", demos, w_f, np.ones(6), np.ones(6))
    sampled = set(dist.traj_index[dist.probs > 0].tolist())
    assert sampled == {0, 2, 4, 5}


def test_single_episode_report(slow):
    rep = im.evaluate(env.demo_policy(slow, "optimal"), slow, 1, 0)
    assert rep.n == 1 and rep.std == 0.0 and rep.mean == rep.returns[0]


def test_report_validation():
    with pytest.raises(ValueError):
        im.EvalReport(0.0, 0.0, 0, (), {})


def test_evaluation_reproducible(slow):
    a = im.evaluate(env.demo_policy(slow, "suboptimal"), slow, 20, 9)
    b = im.evaluate(env.demo_policy(slow, "suboptimal"), slow, 20, 9)
    assert a == b
    assert a.mean == pytest.approx(np.mean(a.returns), abs=1e-9)
    assert sum(a.causes.values()) == 20


def test_returns_are_undiscounted(slow):
    rep = im.evaluate(env.demo_policy(slow, "optimal"), slow, 3, 4)
    ro = env.rollout(slow, "optimal", env.episode_seeds(4, 3))
    for i, r in enumerate(rep.returns):
        n = int(ro.lengths[i])
        manual = sum(float(env.reward(slow, ro.states[i, t], ro.states[i, t + 1])) for t in range(n))
        assert r == pytest.approx(manual, rel=1e-12)


def test_optimal_policy_reaches_goal(optimal_report):
    assert optimal_report.causes.get("goal", 0) / optimal_report.n > 0.95


def test_random_below_optimal(slow, optimal_report):
    assert im.evaluate(env.demo_policy(slow, "random"), slow, 100, 1).mean < optimal_report.mean


def test_pooled_se():
    assert im.pooled_se([1.0, 3.0], [2.0, 2.0]) == pytest.approx(1.0)
    assert im.pooled_se([1.0], [2.0]) == 0.0
    a, b = [1.0, 2.0, 4.0], [0.0, 5.0, 1.0]
    expect = math.sqrt(np.var(a, ddof=1) / 3 + np.var(b, ddof=1) / 3)
    assert im.pooled_se(a, b) == pytest.approx(expect, rel=1e-12)


@pytest.fixture(scope="module")
def learned_inverse(slow):
    feas = env.collect(slow, "random", 500, True, seed=1)
    return invdyn.fit_inverse_dynamics(feas, slow, invdyn.InvDynConfig())[0]


def test_cloning_optimal_demos_matches_expert(slow, optimal_demos, optimal_report, learned_inverse):
    cfg = im.ImitationConfig(train=densenet.TrainConfig(epochs=200, seed=0))
    policy, _ = im.train_policy(uniform(optimal_demos), optimal_demos, learned_inverse, slow, cfg)
    rep = im.evaluate(policy, slow, 100, 1)
    assert abs(rep.mean - optimal_report.mean) <= 0.15 * abs(optimal_report.mean)


def test_recovered_actions_match_true_actions(slow, optimal_demos, learned_inverse):
    dist = uniform(optimal_demos)
    true_actions = np.concatenate([t.actions for t in optimal_demos])
    s = np.concatenate([t.states[:-1] for t in optimal_demos])
    s_next = np.concatenate([t.states[1:] for t in optimal_demos])
    recovered = im.recover_actions(learned_inverse, slow, s, s_next)
    assert np.mean(np.abs(recovered - true_actions)) < 0.05 * slow.params.steer_limit

    cfg = im.ImitationConfig(train=densenet.TrainConfig(epochs=200, seed=1))
    a = im.evaluate(im.train_policy(dist, optimal_demos, learned_inverse, slow, cfg)[0], slow, 100, 1)
    b = im.evaluate(im.train_policy(dist, optimal_demos, learned_inverse, slow, cfg,
                                    actions=true_actions)[0], slow, 100, 1)
    assert abs(a.mean - b.mean) <= 0.05 * abs(b.mean)
