"""Episodic environments with deterministic transitions and rewards in [0, 1].

Stages are 0-based: ``reset`` returns a stage-0 state and stepping from the
last stage (``horizon - 1``) returns ``None`` as the next state.

Every environment exposes ``horizon``, ``num_actions``, ``reset(rng)``,
``step(state, action, rng) -> (reward, next_state)`` and ``stage(state)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.stats import truncnorm

from .features import TabularFeatureMap, TileCoding, figure1_map

INSTANCE_FORMAT = "frozen-pi-tabular-mdp"
INSTANCE_VERSION = 1


class TabularState(NamedTuple):
    stage: int
    index: int


@dataclass
class TabularMdp:
    """Layered deterministic MDP.

    ``transition[h]`` has shape ``(S_h, A)`` and holds successor indices into
    stage ``h + 1``; the last stage has no transition table. ``reward_mean[h]``
    has shape ``(S_h, A)``.
    """

    transition: list
    reward_mean: list
    init_dist: np.ndarray
    noise: str = "bernoulli"
    noise_scale: float = 0.1
    states_per_stage: list = field(init=False)

    def __post_init__(self):
        self.reward_mean = [np.asarray(r, dtype=float) for r in self.reward_mean]
        self.transition = [np.asarray(t, dtype=int) for t in self.transition]
        self.init_dist = np.asarray(self.init_dist, dtype=float)
        self.states_per_stage = [r.shape[0] for r in self.reward_mean]
        self._validate()

    def _validate(self):
        H = len(self.reward_mean)
        if H < 1:
            raise ValueError("horizon must be at least 1")
        A = self.reward_mean[0].shape[1]
        if A < 1:
            raise ValueError("need at least one action")
        if len(self.transition) != H - 1:
            raise ValueError(f"expected {H - 1} transition tables, got {len(self.transition)}")
        for h, r in enumerate(self.reward_mean):
            if r.ndim != 2 or r.shape[1] != A:
                raise ValueError(f"stage {h}: reward table must have shape (S_h, {A})")
            if np.any(r < 0) or np.any(r > 1):
                raise ValueError(f"stage {h}: reward means must lie in [0, 1]")
        for h, t in enumerate(self.transition):
            if t.shape != self.reward_mean[h].shape:
                raise ValueError(f"stage {h}: transition table shape mismatch")
            if np.any(t < 0) or np.any(t >= self.states_per_stage[h + 1]):
                raise ValueError(f"stage {h}: successor out of range")
        if self.init_dist.shape != (self.states_per_stage[0],):
            raise ValueError("init_dist must cover the stage-0 states")
        if np.any(self.init_dist < 0) or abs(self.init_dist.sum() - 1.0) > 1e-12:
            raise ValueError("init_dist must be a probability vector")
        if self.noise not in ("bernoulli", "truncnorm", "none"):
            raise ValueError(f"unknown reward noise {self.noise!r}")

    @property
    def horizon(self) -> int:
        return len(self.reward_mean)

    @property
    def num_actions(self) -> int:
        return self.reward_mean[0].shape[1]

    def stage(self, state: TabularState) -> int:
        return state.stage

    def states(self, h: int | None = None):
        """All states, or those of stage ``h``."""
        stages = range(self.horizon) if h is None else [h]
        return [TabularState(g, s) for g in stages for s in range(self.states_per_stage[g])]

    def reset(self, rng: np.random.Generator) -> TabularState:
        s = int(rng.choice(self.states_per_stage[0], p=self.init_dist))
        return TabularState(0, s)

    def next_state(self, state: TabularState, action: int) -> TabularState | None:
        h, s = state
        if h == self.horizon - 1:
            return None
        return TabularState(h + 1, int(self.transition[h][s, action]))

    def mean_reward(self, state: TabularState, action: int) -> float:
        return float(self.reward_mean[state.stage][state.index, action])

    def sample_reward(self, mean: float, rng: np.random.Generator) -> float:
        if self.noise == "bernoulli":
            return float(rng.random() < mean)
        if self.noise == "none" or self.noise_scale == 0:
            return mean
        return _truncnorm_with_mean(mean, self.noise_scale, rng)

    def step(self, state: TabularState, action: int, rng: np.random.Generator):
        if not 0 <= action < self.num_actions:
            raise ValueError(f"action {action} out of range")
        reward = self.sample_reward(self.mean_reward(state, action), rng)
        return reward, self.next_state(state, action)


def _truncnorm_with_mean(mean: float, scale: float, rng) -> float:
    # symmetric truncation around the mean keeps it exact and stays in [0, 1]
    half = min(mean, 1.0 - mean)
    if half <= 0.0:
        return mean
    bound = half / scale
    return float(truncnorm.rvs(-bound, bound, loc=mean, scale=scale, random_state=rng))


def figure1_env(noise: str = "bernoulli") -> tuple[TabularMdp, TabularFeatureMap]:
    """The two-stage example MDP and its feature map.

    Stage 0 has one state ``s1`` with ``a1`` (mean 0.1, to ``s2``) and ``a2``
    (mean 0.2, to ``s3``). Stage 1 has ``s2`` (mean 0.9) and ``s3`` (mean 0.8)
    whose only action ``a3`` is available under both action indices.
    """
    mdp = TabularMdp(
        transition=[[[0, 1]]],
        reward_mean=[[[0.1, 0.2]], [[0.9, 0.9], [0.8, 0.8]]],
        init_dist=[1.0],
        noise=noise,
    )
    return mdp, figure1_map()


def random_realizable_mdp(H: int, states_per_stage: int, num_actions: int,
                          merge_fraction: float, rng: np.random.Generator,
                          reward_levels: int = 3, noise: str = "bernoulli"):
    """Random layered MDP with an exactly realizable (kappa = 0) feature map.

    Starts from one coordinate per (stage, state, action) and merges pairs at
    the same stage that share successor and reward mean; such pairs have equal
    Q^pi under every policy. Each eligible pair is merged into its group's first
    member with probability ``merge_fraction``. Reward means are drawn from
    ``reward_levels`` evenly spaced values in [0.1, 0.9] so that ties occur.
    """
    if H < 1 or states_per_stage < 1 or num_actions < 2:
        raise ValueError("need H >= 1, states_per_stage >= 1 and num_actions >= 2")
    if not 0.0 <= merge_fraction <= 1.0:
        raise ValueError("merge_fraction must lie in [0, 1]")
    S, A = states_per_stage, num_actions
    grid = np.linspace(0.1, 0.9, reward_levels) if reward_levels > 1 else np.array([0.5])
    reward_mean = [grid[rng.integers(0, len(grid), size=(S, A))] for _ in range(H)]
    transition = [rng.integers(0, S, size=(S, A)) for _ in range(H - 1)]
    init_dist = rng.dirichlet(np.ones(S))
    init_dist = init_dist / init_dist.sum()
    mdp = TabularMdp(transition, reward_mean, init_dist, noise=noise)

    coord = 0
    assignment = []
    for h in range(H):
        table = np.empty((S, A), dtype=int)
        groups: dict = {}
        for s in range(S):
            for a in range(A):
                succ = int(transition[h][s, a]) if h < H - 1 else -1
                key = (succ, float(reward_mean[h][s, a]))
                if key in groups and rng.random() < merge_fraction:
                    table[s, a] = groups[key]
                else:
                    groups.setdefault(key, coord)
                    table[s, a] = coord
                    coord += 1
        assignment.append(table)
    return mdp, TabularFeatureMap(coord, assignment)


def save_instance(path, mdp: TabularMdp, fmap: TabularFeatureMap) -> None:
    """Write a versioned plain-text instance file."""
    lines = [
        f"{INSTANCE_FORMAT} v{INSTANCE_VERSION}",
        f"horizon {mdp.horizon}",
        f"actions {mdp.num_actions}",
        f"noise {mdp.noise} {mdp.noise_scale!r}",
        "states " + " ".join(str(n) for n in mdp.states_per_stage),
        "init " + " ".join(repr(float(p)) for p in mdp.init_dist),
        f"features {fmap.dim}",
        "# stage state action next mean coordinate",
    ]
    for h in range(mdp.horizon):
        for s in range(mdp.states_per_stage[h]):
            for a in range(mdp.num_actions):
                nxt = int(mdp.transition[h][s, a]) if h < mdp.horizon - 1 else -1
                mean = float(mdp.reward_mean[h][s, a])
                lines.append(f"{h} {s} {a} {nxt} {mean!r} {int(fmap.assignment[h][s, a])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_instance(path) -> tuple[TabularMdp, TabularFeatureMap]:
    """Read a file written by :func:`save_instance`."""
    raw = Path(path).read_text(encoding="utf-8").splitlines()
    lines = [ln for ln in raw if ln.strip() and not ln.startswith("#")]
    header = lines[0].split()
    if header[0] != INSTANCE_FORMAT:
        raise ValueError(f"not a tabular instance file: {path}")
    if header[1] != f"v{INSTANCE_VERSION}":
        raise ValueError(f"unsupported instance version {header[1]}")
    meta = {}
    body = []
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0].isdigit():
            body.append(tok)
        else:
            meta[tok[0]] = tok[1:]
    H, A = int(meta["horizon"][0]), int(meta["actions"][0])
    sizes = [int(v) for v in meta["states"]]
    if len(sizes) != H:
        raise ValueError("states line does not match horizon")
    reward = [np.full((n, A), np.nan) for n in sizes]
    trans = [np.full((n, A), -1, dtype=int) for n in sizes[:-1]]
    assign = [np.full((n, A), -1, dtype=int) for n in sizes]
    for h, s, a, nxt, mean, c in body:
        h, s, a = int(h), int(s), int(a)
        reward[h][s, a] = float(mean)
        assign[h][s, a] = int(c)
        if h < H - 1:
            trans[h][s, a] = int(nxt)
    if any(np.isnan(r).any() for r in reward) or any((t < 0).any() for t in trans):
        raise ValueError("instance file does not define every (stage, state, action)")
    mdp = TabularMdp(trans, reward, [float(p) for p in meta["init"]],
                     noise=meta["noise"][0], noise_scale=float(meta["noise"][1]))
    return mdp, TabularFeatureMap(int(meta["features"][0]), assign)


# --- CartPole -------------------------------------------------------------

class CartPoleState(NamedTuple):
    stage: int
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    terminal: bool = False

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


CARTPOLE_BOUNDS = [(-2.4, 2.4), (-3.0, 3.0), (-0.2095, 0.2095), (-3.5, 3.5)]


class CartPole:
    """Cart-pole balancing with explicit Euler steps and an absorbing failure state.

    Each step from a live state pays reward 1. When the pole leaves +-12 degrees
    or the cart leaves +-2.4 the next state is absorbing: it pays 0 forever and
    has an all-zero feature.
    """

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def __init__(self, max_steps: int = 500):
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.horizon = int(max_steps)
        self.num_actions = 2
        self.total_mass = self.masspole + self.masscart
        self.polemass_length = self.masspole * self.length

    def stage(self, state: CartPoleState) -> int:
        return state.stage

    def is_absorbing(self, state: CartPoleState) -> bool:
        return bool(state.terminal)

    def reset(self, rng: np.random.Generator) -> CartPoleState:
        x, x_dot, theta, theta_dot = (float(v) for v in rng.uniform(-0.05, 0.05, size=4))
        return CartPoleState(0, x, x_dot, theta, theta_dot)

    def dynamics(self, state: CartPoleState, action: int):
        force = self.force_mag if action == 1 else -self.force_mag
        costheta, sintheta = math.cos(state.theta), math.sin(state.theta)
        temp = (force + self.polemass_length * state.theta_dot ** 2 * sintheta) / self.total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta ** 2 / self.total_mass))
        xacc = temp - self.polemass_length * thetaacc * costheta / self.total_mass
        x = state.x + self.tau * state.x_dot
        x_dot = state.x_dot + self.tau * xacc
        theta = state.theta + self.tau * state.theta_dot
        theta_dot = state.theta_dot + self.tau * thetaacc
        return x, x_dot, theta, theta_dot

    def step(self, state: CartPoleState, action: int, rng=None):
        if action not in (0, 1):
            raise ValueError(f"action {action} out of range")
        h = state.stage + 1
        if state.terminal:
            nxt = CartPoleState(h, state.x, state.x_dot, state.theta, state.theta_dot, True)
            reward = 0.0
        else:
            x, x_dot, theta, theta_dot = self.dynamics(state, action)
            failed = (abs(x) > self.x_threshold) or (abs(theta) > self.theta_threshold)
            nxt = CartPoleState(h, x, x_dot, theta, theta_dot, failed)
            reward = 1.0
        return reward, (nxt if h < self.horizon else None)


class CartPoleFeatures(TileCoding):
    """Tile coding of the cart-pole state; the absorbing state maps to zero."""

    def __init__(self, tiles_per_dim: int = 4, num_tilings: int = 4, bounds=None):
        super().__init__(bounds or CARTPOLE_BOUNDS, tiles_per_dim, num_tilings, 2,
                         state_of=lambda st: (st.x, st.x_dot, st.theta, st.theta_dot))

    def __call__(self, state, action: int) -> np.ndarray:
        if state.terminal:
            return np.zeros(self.dim)
        return super().__call__(state, action)


def cartpole_env(max_steps: int = 500, tiles_per_dim: int = 4, num_tilings: int = 4):
    return CartPole(max_steps), CartPoleFeatures(tiles_per_dim, num_tilings)
