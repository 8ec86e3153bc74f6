"""Exact ground truth on tabular instances.

Policies are lists of integer arrays: ``policy[h][s]`` is the action taken
in state ``s`` of stage ``h``. These routines are for evaluation only; no
agent calls them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .env import TabularMdp, TabularState

MAX_POLICIES = 10 ** 6


@dataclass
class ValueTable:
    q: list  # q[h]: (S_h, A)
    v: list  # v[h]: (S_h,)

    def value(self, state: TabularState) -> float:
        return float(self.v[state.stage][state.index])


def policy_q(mdp: TabularMdp, policy) -> ValueTable:
    """Backward induction of Q^pi using reward means."""
    H = mdp.horizon
    q = [None] * H
    v = [None] * H
    for h in reversed(range(H)):
        qh = mdp.reward_mean[h].copy()
        if h < H - 1:
            qh += v[h + 1][mdp.transition[h]]
        q[h] = qh
        act = np.asarray(policy[h], dtype=int)
        v[h] = qh[np.arange(qh.shape[0]), act]
    return ValueTable(q, v)


def optimal(mdp: TabularMdp) -> tuple[ValueTable, list]:
    """Optimal values and the greedy policy (ties to the smallest action)."""
    H = mdp.horizon
    q = [None] * H
    v = [None] * H
    policy = [None] * H
    for h in reversed(range(H)):
        qh = mdp.reward_mean[h].copy()
        if h < H - 1:
            qh += v[h + 1][mdp.transition[h]]
        q[h] = qh
        policy[h] = np.argmax(qh, axis=1)  # first maximiser
        v[h] = qh.max(axis=1)
    return ValueTable(q, v), policy


def count_policies(mdp: TabularMdp) -> int:
    return mdp.num_actions ** sum(mdp.states_per_stage)


def enumerate_policies(mdp: TabularMdp, limit: int = MAX_POLICIES):
    """Yield every deterministic policy."""
    if count_policies(mdp) > limit:
        raise OverflowError(f"{count_policies(mdp)} policies exceed the limit of {limit}")
    sizes = mdp.states_per_stage
    total = sum(sizes)
    splits = np.cumsum(sizes)[:-1]
    for flat in itertools.product(range(mdp.num_actions), repeat=total):
        yield np.split(np.array(flat, dtype=int), splits)


def stage_design(mdp: TabularMdp, fmap, h: int) -> np.ndarray:
    """Feature rows for every (state, action) of stage ``h`` in row-major order."""
    return np.vstack([fmap(TabularState(h, s), a)
                      for s in range(mdp.states_per_stage[h])
                      for a in range(mdp.num_actions)])


def empirical_kappa(mdp: TabularMdp, fmap, policies="all") -> float:
    """Largest linear-fit residual of Q^pi over the given policies.

    Each stage is fitted with the minimum-norm least-squares solution.
    """
    if isinstance(policies, str):
        if policies != "all":
            raise ValueError("policies must be a list or 'all'")
        policies = enumerate_policies(mdp)
    designs = [stage_design(mdp, fmap, h) for h in range(mdp.horizon)]
    pinvs = [np.linalg.pinv(X) for X in designs]
    worst = 0.0
    for pi in policies:
        table = policy_q(mdp, pi)
        for X, P, qh in zip(designs, pinvs, table.q):
            y = qh.ravel()
            resid = np.max(np.abs(X @ (P @ y) - y))
            worst = max(worst, float(resid))
    return worst


def trajectory(mdp: TabularMdp, state: TabularState, action: int, policy) -> list:
    """Deterministic (state, action) path from ``(state, action)`` following ``policy``."""
    path = [(state, int(action))]
    nxt = mdp.next_state(state, action)
    while nxt is not None:
        a = int(policy[nxt.stage][nxt.index])
        path.append((nxt, a))
        nxt = mdp.next_state(nxt, a)
    return path


def regret_series(mdp: TabularMdp, records) -> np.ndarray:
    """Cumulative realized regret ``sum_t V*(s_1^t) - sum_h r_h^t``."""
    values, _ = optimal(mdp)
    inc = [values.value(rec.initial_state) - float(np.sum(rec.rewards)) for rec in records]
    return np.cumsum(inc)


def expected_gap(mdp: TabularMdp, initial_state: TabularState, actions, values=None) -> float:
    """``V*(s_1) - V^pi(s_1)`` for the open-loop action sequence ``actions``.

    With deterministic transitions the mean return of the executed policy is the
    sum of reward means along the realized path.
    """
    if values is None:
        values, _ = optimal(mdp)
    total, state = 0.0, initial_state
    for a in actions:
        total += mdp.mean_reward(state, a)
        state = mdp.next_state(state, a)
    return values.value(initial_state) - total
