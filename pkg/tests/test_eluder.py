import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frozen_pi.env import TabularMdp, TabularState
from frozen_pi.eluder import (ClassDataset, EluderConfig, EluderFpi, FiniteFunctionClass,
                              beta_star, confidence_set, covering_number, eluder_dimension,
                              eps_dependent, load_function_class, q_function_class,
                              save_function_class, width)
from frozen_pi.oracle import optimal


def cls(rows):
    rows = np.asarray(rows, dtype=float)
    return FiniteFunctionClass(rows, [(0, j, 0) for j in range(rows.shape[1])])


# --- independent reference for the eluder dimension ------------------------

def reference_independent(x, history, eps, fc):
    """Literal definition: some f, f' agree within eps on history yet differ by > eps at x."""
    m = len(fc)
    for i in range(m):
        for j in range(m):
            close = math.sqrt(sum((fc.values[i, c] - fc.values[j, c]) ** 2 for c in history))
            if close <= eps and abs(fc.values[i, x] - fc.values[j, x]) > eps:
                return True
    return False


def reference_eluder(fc, eps):
    """Max over eps' >= eps of the longest independent sequence, by brute force.

    Both predicates of independence only switch at values sqrt(sum of squared
    gaps over a subset) or |gap at a pair|, so checking eps itself and every
    such value above it visits every distinct regime.
    """
    P, m = len(fc.pairs), len(fc)
    cands = {eps}
    for i in range(m):
        for j in range(m):
            g = (fc.values[i] - fc.values[j]) ** 2
            for r in range(P + 1):
                for sub in itertools.combinations(range(P), r):
                    cands.add(math.sqrt(sum(g[list(sub)])))
            cands.update(np.sqrt(g).tolist())
    best = 0
    for e in sorted(c for c in cands if c >= eps):
        def longest(seq):
            out = len(seq)
            for x in range(P):
                if x not in seq and reference_independent(x, seq, e, fc):
                    out = max(out, longest(seq + [x]))
            return out
        best = max(best, longest([]))
        if best == P:
            break
    return best


class TestDependence:
    def test_examples(self):
        fc = cls([[0, 0], [1, 1]])
        assert not eps_dependent(1, [], 0.5, fc)
        assert eps_dependent(1, [0], 0.5, fc)
        assert eps_dependent(0, [], 0.5, cls([[0.3, 0.1]]))

    def test_agrees_with_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            fc = cls(rng.choice([0.0, 0.5, 1.0], size=(4, 4)))
            hist = list(rng.choice(4, size=int(rng.integers(0, 4)), replace=False))
            x, eps = int(rng.integers(4)), float(rng.choice([0.25, 0.5, 0.7]))
            assert eps_dependent(x, hist, eps, fc) == (not reference_independent(x, hist, eps, fc))


class TestEluderDimension:
    def test_examples(self):
        assert eluder_dimension(cls([[0.2, 0.7]]), 0.1) == 0
        binary = cls(list(itertools.product([0, 1], repeat=2)))
        assert eluder_dimension(binary, 0.5) == 2
        const = cls([[c] * 5 for c in (0.0, 0.4, 0.9)])
        assert eluder_dimension(const, 0.1) == 1

    def test_matches_reference_on_binary_subclasses(self):
        table = np.array(list(itertools.product([0, 1], repeat=2)), dtype=float)
        for r in range(1, 5):
            for rows in itertools.combinations(range(4), r):
                fc = cls(table[list(rows)])
                for eps in (0.3, 0.5, 0.9, 1.0):
                    assert eluder_dimension(fc, eps) == reference_eluder(fc, eps)

    def test_matches_reference_on_random_grid_classes(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            m, P = int(rng.integers(2, 5)), int(rng.integers(1, 5))
            fc = cls(rng.choice([0.0, 0.5, 1.0], size=(m, P)))
            eps = float(rng.choice([0.2, 0.4, 0.6]))
            assert eluder_dimension(fc, eps) == reference_eluder(fc, eps)

    def test_refuses_large_universes(self):
        with pytest.raises(ValueError):
            eluder_dimension(cls(np.zeros((2, 13))), 0.1)


class TestConfidence:
    def test_width(self):
        assert width([0.1, 0.5, 0.3], [True, True, True]) == pytest.approx(0.4)
        assert width([0.1, 0.5, 0.3], [True, False, False]) == 0.0
        with pytest.raises(ValueError):
            width([0.1], [False])

    def test_beta_star_example(self):
        assert beta_star(5, 2, 0.5, 0.0, 4) == pytest.approx(16 * math.log(8))
        assert beta_star(5, 2, 0.5, 0.0, 4) == pytest.approx(33.27, abs=0.01)

    def test_covering_number(self):
        fc = cls([[0, 0], [0, 0], [1, 0], [1.05, 0]])
        assert covering_number(fc, 0.0) == 3
        assert covering_number(fc, 0.1) == 2
        assert covering_number(fc, 2.0) == 1

    def test_confidence_set_examples(self):
        fc = cls([[0.1], [0.85], [0.5]])
        empty = confidence_set([], [], fc, 1.0)
        assert empty.members.all() and empty.minimizer == 0
        cs = confidence_set([0], [0.9], fc, 0.0)
        assert cs.minimizer == 1 and cs.indices() == [1]
        tie = confidence_set([0], [0.3], cls([[0.1], [0.5]]), 0.0)
        assert tie.minimizer == 0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000))
    def test_minimizer_in_set_and_shrinks_with_data(self, seed):
        rng = np.random.default_rng(seed)
        fc = cls(rng.uniform(0, 1, size=(5, 4)))
        cols = list(rng.integers(0, 4, size=6))
        targets = rng.uniform(0, 1, size=6)
        beta = float(rng.uniform(0, 1))
        prev = None
        for k in range(7):
            cs = confidence_set(cols[:k], targets[:k], fc, beta)
            assert cs.members[cs.minimizer]
            if prev is not None and prev.minimizer == cs.minimizer:
                assert not (cs.members & ~prev.members).any()
            prev = cs


class TestClassDataset:
    def test_cover_table_matches_direct_definition(self):
        rng = np.random.default_rng(3)
        fc = cls(rng.choice([0.0, 0.3, 0.6, 1.0], size=(5, 4)))
        beta = lambda k: 0.2 * k
        ds = ClassDataset(fc, beta)
        cols, targets = [], []
        for _ in range(6):
            c = int(rng.integers(4))
            q = float(rng.uniform())
            ds.append(TabularState(0, c), 0, c, q)
            cols.append(c)
            targets.append(q)
        eps = 0.35
        table = ds.cover_table(range(4), eps)
        for k in range(len(ds) + 1):
            cs = confidence_set(cols[:k], targets[:k], fc, beta(k) if k else math.inf)
            assert ds.confidence_set(k).indices() == cs.indices()
            for x in range(4):
                want = (eps_dependent(x, cols[:k], eps, fc)
                        and width(fc.at(x), cs.members) <= eps)
                assert table[k, x] == want


def small_mdp():
    return TabularMdp([[[0, 0]]], [[[0.3, 0.5]], [[0.2, 0.8]]], [1.0], noise="none")


class TestAgent:
    def test_schedules(self):
        fc, _ = q_function_class(small_mdp())
        ag = EluderFpi(fc, 2, 2, EluderConfig(T=1000))
        assert ag.Delta(3) == 0.125
        assert ag.lbar == 10
        assert ag.initial_level(5000) == 10
        assert ag.beta(1, 0) == math.inf
        assert ag.beta(2, 3) > ag.beta(1, 3)

    def test_true_functions_recovered(self):
        mdp = small_mdp()
        fc, n_true = q_function_class(mdp)
        # the stage-1 choice changes stage-0 values only through V, so 2 distinct tables
        assert n_true == len(fc) == 2
        star, _ = optimal(mdp)
        assert any(np.allclose(row, np.concatenate([q.ravel() for q in star.q]))
                   for row in fc.values)

    def test_singleton_class_plays_greedy(self):
        mdp = small_mdp()
        fc, _ = q_function_class(mdp)
        star, _ = optimal(mdp)
        row = [i for i in range(len(fc))
               if np.allclose(fc.values[i], np.concatenate([q.ravel() for q in star.q]))][0]
        ag = EluderFpi(fc.subclass([row]), 2, 2, EluderConfig(T=100))
        rng = np.random.default_rng(0)
        recs = [ag.run_episode(mdp, rng) for _ in range(30)]
        assert all(r.actions == [1, 1] for r in recs[-10:])

    def test_empty_dataset_everything_uncovered(self):
        fc, _ = q_function_class(small_mdp())
        ag = EluderFpi(fc, 2, 2, EluderConfig(T=100))
        view = ag.level_view(TabularState(0, 0), 1, (0, 1))
        assert not view.covered.any() and not view.indicator

    def test_full_indicator_mode_runs(self):
        mdp = small_mdp()
        fc, _ = q_function_class(mdp, 2, np.random.default_rng(0))
        ag = EluderFpi(fc, 2, 2, EluderConfig(T=200, indicator="full"))
        rng = np.random.default_rng(1)
        for _ in range(200):
            ag.run_episode(mdp, rng)
        assert sum(ag.dataset_sizes().values()) > 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EluderConfig(T=0)
        with pytest.raises(ValueError):
            EluderConfig(T=10, indicator="sometimes")


def test_function_class_roundtrip(tmp_path):
    fc, _ = q_function_class(small_mdp(), 2, np.random.default_rng(0))
    path = tmp_path / "class.txt"
    save_function_class(path, fc)
    back = load_function_class(path)
    np.testing.assert_array_equal(back.values, fc.values)
    assert back.pairs == fc.pairs and back.ids == fc.ids


def test_values_outside_range_rejected():
    with pytest.raises(ValueError):
        FiniteFunctionClass([[3.0]], [(0, 0, 0)], H=2)
