import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from frozen_pi.env import TabularMdp, TabularState, figure1_env, random_realizable_mdp
from frozen_pi.oracle import (
    count_policies,
    empirical_kappa,
    enumerate_policies,
    expected_gap,
    optimal,
    policy_q,
    regret_series,
    trajectory,
)


def test_figure1_optimal():
    mdp, _ = figure1_env()
    values, pi = optimal(mdp)
    assert values.value(TabularState(0, 0)) == pytest.approx(1.0)
    assert pi[0][0] == 0  # tie between a1 and a2 goes to a1


def test_horizon_one():
    mdp = TabularMdp([], [[[0.2, 0.7], [0.4, 0.1]]], [0.5, 0.5])
    q = policy_q(mdp, [np.array([0, 1])])
    np.testing.assert_array_equal(q.q[0], mdp.reward_mean[0])


def test_zero_rewards():
    mdp = TabularMdp([[[0, 1], [1, 0]]], [np.zeros((2, 2)), np.zeros((2, 2))], [1.0, 0.0])
    q = policy_q(mdp, [np.array([0, 0]), np.array([1, 1])])
    assert all(not qh.any() for qh in q.q)


def test_single_action_optimal_equals_policy_q():
    mdp = TabularMdp([[[0], [1]]], [[[0.3], [0.6]], [[0.2], [0.9]]], [0.5, 0.5])
    values, _ = optimal(mdp)
    q = policy_q(mdp, [np.zeros(2, int), np.zeros(2, int)])
    for a, b in zip(values.v, q.v):
        np.testing.assert_array_equal(a, b)


def test_optimal_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(10):
        mdp, _ = random_realizable_mdp(2, 2, 2, 0.0, rng)
        values, pi_star = optimal(mdp)
        best = max(
            (policy_q(mdp, pi) for pi in enumerate_policies(mdp)),
            key=lambda t: float(np.sum(t.v[0] * mdp.init_dist)),
        )
        np.testing.assert_allclose(best.v[0], values.v[0])
        # optimal dominates every policy pointwise
        for pi in enumerate_policies(mdp):
            q = policy_q(mdp, pi)
            for vo, vp in zip(values.v, q.v):
                assert np.all(vo >= vp - 1e-12)
        q_star = policy_q(mdp, pi_star)
        for a, b in zip(q_star.v, values.v):
            np.testing.assert_allclose(a, b)


def test_dominant_action_selected():
    mdp = TabularMdp([[[0, 1], [1, 0]]], [[[0.1, 0.9], [0.8, 0.2]], [[0.5, 0.6], [0.3, 0.7]]], [0.5, 0.5])
    _, pi = optimal(mdp)
    np.testing.assert_array_equal(pi[1], [1, 1])
    # stage 0: state 0 -> a1 gives 0.9 + 0.7, a0 gives 0.1 + 0.6
    assert pi[0][0] == 1


def test_values_in_range_and_bellman_consistency():
    rng = np.random.default_rng(1)
    mdp, _ = random_realizable_mdp(4, 3, 2, 0.3, rng)
    for _ in range(20):
        pi = [rng.integers(0, 2, size=3) for _ in range(4)]
        t = policy_q(mdp, pi)
        for h in range(4):
            assert np.all(t.q[h] >= 0) and np.all(t.q[h] <= 4)
            np.testing.assert_array_equal(t.v[h], t.q[h][np.arange(3), pi[h]])
            if h < 3:
                resid = t.q[h] - mdp.reward_mean[h] - t.v[h + 1][mdp.transition[h]]
                assert np.all(np.abs(resid) < 1e-12)


def test_kappa_examples():
    mdp, fmap = figure1_env()
    assert count_policies(mdp) == 2 ** 3
    assert empirical_kappa(mdp, fmap) < 1e-10


def test_kappa_overflow():
    mdp, fmap = random_realizable_mdp(4, 5, 3, 0.0, np.random.default_rng(0))
    with pytest.raises(OverflowError):
        empirical_kappa(mdp, fmap)


def test_regret_series_definitions():
    mdp, _ = figure1_env()
    s1 = TabularState(0, 0)
    recs = [SimpleNamespace(initial_state=s1, rewards=[0.0, 0.3]),
            SimpleNamespace(initial_state=s1, rewards=[1.0, 1.0])]
    np.testing.assert_allclose(regret_series(mdp, recs), [0.7, -0.3])


def test_optimal_play_zero_regret_deterministic_rewards():
    mdp, _ = random_realizable_mdp(3, 2, 2, 0.0, np.random.default_rng(2), noise="none")
    values, pi = optimal(mdp)
    recs = []
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = mdp.reset(rng)
        path = trajectory(mdp, s, int(pi[0][s.index]), pi)
        recs.append(SimpleNamespace(initial_state=s,
                                    rewards=[mdp.step(st, a, rng)[0] for st, a in path]))
        assert expected_gap(mdp, s, [a for _, a in path], values) == pytest.approx(0.0)
    np.testing.assert_allclose(regret_series(mdp, recs), 0.0, atol=1e-12)
