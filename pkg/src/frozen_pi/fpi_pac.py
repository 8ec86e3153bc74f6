"""Frozen Policy Iteration, PAC variant.

One append-only dataset per stage. A state is played greedily only when every
action is covered (elliptical norm <= epsilon) by the stage dataset, and its
Q-estimate is then computed from the shortest dataset prefix that already
covered it. Later data can never change that prefix, so the greedy action of a
covered state is frozen and every stored return stays on-policy.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .linalg import PrefixCovariance
from .records import EpisodeRecord

CHECKPOINT_FORMAT = "frozen-pi-checkpoint"
CHECKPOINT_VERSION = 1


def d_bound(d: int, epsilon: float, lam: float) -> float:
    """Maximum size of any stage dataset: ``(2d / eps^2) ln(1 + 4 eps^-4 / lam^2)``."""
    if epsilon <= 0 or lam <= 0:
        raise ValueError("epsilon and lambda must be positive")
    return 2.0 * d / epsilon ** 2 * math.log1p(4.0 / (epsilon ** 4 * lam ** 2))


def alpha_pac(d: int, H: int, epsilon: float, lam: float, delta: float,
              kappa: float = 0.0) -> float:
    """Confidence radius of the ridge estimates; used by tests only."""
    D = d_bound(d, epsilon, lam)
    return (math.sqrt(2 * H * (d / 2 * math.log1p(D / (lam * d)) + math.log(H / delta)))
            + math.sqrt(D) * kappa + math.sqrt(lam * d) * H)


def pac_suboptimality(d: int, H: int, epsilon: float, lam: float, delta: float,
                      kappa: float = 0.0) -> float:
    """Per-episode gap guaranteed once all datasets stop growing: ``2H(alpha eps + kappa)``."""
    return 2 * H * (alpha_pac(d, H, epsilon, lam, delta, kappa) * epsilon + kappa)


class StageDataset:
    """Ordered ``(state, action, q)`` entries with their ridge design."""

    def __init__(self, dim: int, lam: float, cache_cap: int | None = None,
                 backend: str = "auto"):
        self.cov = PrefixCovariance(dim, lam, cache_cap=cache_cap, backend=backend)
        self.entries: list = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def lam(self) -> float:
        return self.cov.lam

    def append(self, state, action: int, phi, qhat: float) -> int:
        self.cov.push(phi, qhat)
        self.entries.append((state, int(action), float(qhat)))
        return len(self.entries)

    def norms(self, phis, k: int | None = None) -> np.ndarray:
        return np.array([self.cov.elliptical_norm(p, k) for p in phis])

    def is_covered(self, phi, epsilon: float, k: int | None = None) -> bool:
        return self.cov.elliptical_norm(phi, k) <= epsilon

    def covered(self, phis, epsilon: float) -> np.ndarray:
        """Cover test of each row at the full prefix."""
        return self.norms(phis) <= epsilon

    def freeze_index(self, phis, epsilon: float) -> int:
        """First prefix covering every row of ``phis``, or the dataset size."""
        phis = np.atleast_2d(phis)
        if not phis.any():
            return 0
        return self.cov.first_covered_prefix(phis, epsilon)

    def estimates(self, phis, k: int) -> np.ndarray:
        if k == 0:
            return np.zeros(len(phis))
        return np.array([self.cov.least_squares_estimate(p, k) for p in phis])


@dataclass
class PacConfig:
    epsilon: float
    lam: float | None = None  # None -> 1 / H
    delta: float = 0.1
    freeze_enabled: bool = True
    prefix_cache_cap: int | None = None
    backend: str = "auto"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")

    def resolved_lambda(self, horizon: int) -> float:
        return 1.0 / horizon if self.lam is None else float(self.lam)


class Decision(NamedTuple):
    action: int
    explored: bool
    covered: np.ndarray  # per-action cover test at the full prefix
    k: int  # prefix used for q
    q: np.ndarray | None  # Q_t(s, .) when greedy


def smallest_uncovered(covered, allowed=None) -> int | None:
    for a, ok in enumerate(covered):
        if not ok and (allowed is None or a in allowed):
            return a
    return None


class FpiPac:
    """PAC agent.

    Parameters
    ----------
    fmap : feature map with ``dim`` and ``matrix(state, actions)``
    horizon, num_actions : int
    config : PacConfig
    memoize : bool
        Cache the frozen decision per state. Only sound for hashable,
        recurring states (tabular environments); the cached values are exactly
        what recomputation would give.
    """

    def __init__(self, fmap, horizon: int, num_actions: int, config: PacConfig,
                 memoize: bool = False):
        self.fmap = fmap
        self.horizon = int(horizon)
        self.num_actions = int(num_actions)
        self.config = config
        self.lam = config.resolved_lambda(self.horizon)
        self.actions = list(range(self.num_actions))
        self.datasets = [StageDataset(fmap.dim, self.lam, config.prefix_cache_cap, config.backend)
                         for _ in range(self.horizon)]
        self.episodes = 0
        self.memoize = memoize
        self._frozen: dict = {}

    @property
    def epsilon(self) -> float:
        return self.config.epsilon

    def dataset_sizes(self) -> dict:
        return {h: len(ds) for h, ds in enumerate(self.datasets)}

    def decide(self, state) -> Decision:
        if self.memoize:
            hit = self._frozen.get(state)
            if hit is not None:
                return hit
        ds = self.datasets[state.stage]
        phis = self.fmap.matrix(state, self.actions)
        covered = ds.covered(phis, self.epsilon)
        if not covered.all():
            return Decision(smallest_uncovered(covered), True, covered, len(ds), None)
        if self.config.freeze_enabled:
            k = ds.freeze_index(phis, self.epsilon)
        else:
            k = len(ds)
        q = ds.estimates(phis, k)
        dec = Decision(int(np.argmax(q)), False, covered, k, q)
        if self.memoize and self.config.freeze_enabled:
            self._frozen[state] = dec
        return dec

    def act(self, state) -> tuple[int, bool]:
        dec = self.decide(state)
        return dec.action, dec.explored

    def q_values(self, state) -> np.ndarray:
        """``Q_t(s, .)`` at the freeze index (or the full prefix when freezing is off)."""
        ds = self.datasets[state.stage]
        phis = self.fmap.matrix(state, self.actions)
        k = ds.freeze_index(phis, self.epsilon) if self.config.freeze_enabled else len(ds)
        return ds.estimates(phis, k)

    def run_episode(self, env, rng, reward_rng=None) -> EpisodeRecord:
        start = time.perf_counter()
        reward_rng = rng if reward_rng is None else reward_rng
        t = self.episodes + 1
        state = env.reset(rng)
        rec = EpisodeRecord(t, state, [], [], [], [])
        absorbing = getattr(env, "is_absorbing", None)
        while state is not None:
            # an absorbing state has zero features and pays nothing from here on,
            # so every remaining step is covered and cannot affect the update
            if absorbing is not None and absorbing(state):
                break
            dec = self.decide(state)
            reward, nxt = env.step(state, dec.action, reward_rng)
            rec.states.append(state)
            rec.actions.append(dec.action)
            rec.rewards.append(float(reward))
            rec.explored.append(dec.explored)
            state = nxt
        self._finish(rec)
        rec.dataset_sizes = self.dataset_sizes()
        rec.wall_time = time.perf_counter() - start
        return rec

    def _finish(self, rec: EpisodeRecord) -> None:
        steps = [i for i, e in enumerate(rec.explored) if e]
        self.episodes += 1
        if not steps:
            return
        i = steps[-1]
        st, a = rec.states[i], rec.actions[i]
        h = st.stage
        qhat = float(sum(rec.rewards[i:]))
        self.datasets[h].append(st, a, self.fmap(st, a), qhat)
        rec.h_t = h
        rec.mutation = (h,)

    # --- checkpoints ------------------------------------------------------

    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "algorithm": "pac",
            "config": asdict(self.config),
            "horizon": self.horizon,
            "num_actions": self.num_actions,
            "episodes": self.episodes,
            "datasets": {str(h): [_encode_entry(e) for e in ds.entries]
                         for h, ds in enumerate(self.datasets)},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.checkpoint(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path, fmap, state_type, memoize: bool = False) -> "FpiPac":
        data = read_checkpoint(path, "pac")
        agent = cls(fmap, data["horizon"], data["num_actions"], PacConfig(**data["config"]),
                    memoize=memoize)
        for h, entries in data["datasets"].items():
            for raw in entries:
                st, a, q = _decode_entry(raw, state_type)
                agent.datasets[int(h)].append(st, a, fmap(st, a), q)
        agent.episodes = data["episodes"]
        return agent


def _encode_entry(entry) -> list:
    state, action, q = entry
    return [list(state), action, q]


def _decode_entry(raw, state_type):
    state, action, q = raw
    return state_type(*state), int(action), float(q)


def read_checkpoint(path, algorithm: str) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint file")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    if data.get("algorithm") != algorithm:
        raise ValueError(f"checkpoint holds a {data.get('algorithm')!r} agent, not {algorithm!r}")
    return data
