"""Frozen Policy Iteration, regret variant.

Accuracy level ``l`` runs its own copy of the PAC machinery with cover
threshold ``2^-l`` and one dataset per stage. Actions whose level ``l - 1``
estimate trails the level ``l - 1`` greedy value by more than ``2 H Delta_{l-1}``
are removed from level ``l``. An episode starts at the finest level allowed
and drops to the coarsest level whose indicator fails; the trajectory's last
exploratory pair is stored at the level reached at the end of the episode.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .fpi_pac import (CHECKPOINT_FORMAT, CHECKPOINT_VERSION, StageDataset, _decode_entry,
                      _encode_entry, read_checkpoint)
from .records import EpisodeRecord, InvariantViolation


@dataclass(frozen=True)
class LevelConstants:
    d: int
    H: int
    kappa: float
    delta: float
    lbar: float  # int, or math.inf when kappa == 0
    log_base: float = 2.0

    @property
    def lam(self) -> float:
        return 1.0 / self.H

    def D(self, l: int) -> float:
        lam = self.lam
        return 2 * self.d * 4.0 ** l * math.log1p(2.0 ** (4 * l + 2) / lam ** 2)

    def alpha(self, l: int) -> float:
        d, H, lam = self.d, self.H, self.lam
        D = self.D(l)
        conf = d / 2 * math.log1p(D / (lam * d)) + math.log(2 * H * l ** 2 / self.delta)
        return math.sqrt(2 * H * conf) + math.sqrt(D) * self.kappa + math.sqrt(lam * d) * H

    def Delta(self, l: int) -> float:
        return self.alpha(l) * 2.0 ** -l + self.kappa

    def table(self, levels: int) -> list:
        return [{"level": l, "D": self.D(l), "alpha": self.alpha(l), "Delta": self.Delta(l)}
                for l in range(1, levels + 1)]


def level_cap(H: int, kappa: float, log_base: float = 2.0) -> float:
    """``floor(log(sqrt(H) / kappa)) + 1``; unbounded when kappa is zero."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if kappa == 0:
        return math.inf
    return math.floor(math.log(math.sqrt(H) / kappa, log_base)) + 1


def level_constants(d: int, H: int, kappa: float = 0.0, delta: float = 0.1,
                    T: int | None = None, log_base: float = 2.0) -> LevelConstants:
    """Constant schedule of the regret agent (``T`` does not enter it)."""
    if H < 1:
        raise ValueError("H must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if log_base not in (2.0, math.e):
        raise ValueError("log_base must be 2 or e")
    return LevelConstants(int(d), int(H), float(kappa), float(delta),
                          level_cap(H, kappa, log_base), float(log_base))


class LevelView(NamedTuple):
    level: int
    actions: tuple  # A^(l)(s), ascending
    covered: np.ndarray  # per action in ``actions``, at the full prefix
    indicator: bool
    k: int | None  # freeze index when the indicator holds
    q: np.ndarray | None  # Q^(l)(s, .) over ``actions`` when the indicator holds

    @property
    def policy(self) -> int:
        if not self.actions:
            raise InvariantViolation(f"empty action set at level {self.level}")
        return self.actions[int(np.argmax(self.q))]

    def q_of(self, a: int) -> float:
        return float(self.q[self.actions.index(a)])


class LevelAgent:
    """Episode loop shared by the linear and the function-class agents.

    Subclasses define ``lbar``, ``Delta(l)``, ``_new_dataset(l, h)`` and
    ``_assess(state, l, actions, ds)``; the last returns the per-action cover
    mask, the indicator, the freeze index and the estimates.
    """

    algorithm = "level"

    def __init__(self, horizon: int, num_actions: int, memoize: bool = False):
        self.horizon = int(horizon)
        self.num_actions = int(num_actions)
        self.all_actions = tuple(range(self.num_actions))
        self.datasets: dict = {}  # (l, h) -> dataset
        self.episodes = 0
        self.memoize = memoize
        self._frozen: dict = {}

    lbar: float

    def Delta(self, l: int) -> float:
        raise NotImplementedError

    def _new_dataset(self, l: int, h: int):
        raise NotImplementedError

    def _assess(self, state, l: int, actions: tuple, ds):
        raise NotImplementedError

    def _stable(self) -> bool:
        return True

    @staticmethod
    def threshold(l: int) -> float:
        return 2.0 ** -l

    def dataset(self, l: int, h: int):
        ds = self.datasets.get((l, h))
        if ds is None:
            ds = self.datasets[(l, h)] = self._new_dataset(l, h)
        return ds

    def dataset_sizes(self) -> dict:
        return {key: len(ds) for key, ds in sorted(self.datasets.items()) if len(ds)}

    def level_view(self, state, l: int, actions: tuple) -> LevelView:
        key = (state, l)
        if self.memoize:
            hit = self._frozen.get(key)
            if hit is not None:
                return hit
        ds = self.dataset(l, state.stage)
        covered, indicator, k, q = self._assess(state, l, actions, ds)
        view = LevelView(l, actions, covered, indicator, k, q)
        # frozen once every level up to l holds; callers only ask for l after l - 1 held
        if self.memoize and indicator and self._stable():
            self._frozen[key] = view
        return view

    def views(self, state, upto: int) -> list:
        """Level views 1, 2, ... up to ``upto`` or the first failing indicator."""
        out = []
        actions = self.all_actions
        for l in range(1, upto + 1):
            if out:
                prev = out[-1]
                if prev.actions:
                    best = prev.q_of(prev.policy)
                    cut = best - 2 * self.horizon * self.Delta(l - 1)
                    actions = tuple(a for a in prev.actions if prev.q_of(a) >= cut)
                else:
                    actions = ()
            view = self.level_view(state, l, actions)
            out.append(view)
            if not view.indicator:
                break
        return out

    def action_set(self, state, l: int) -> tuple:
        views = self.views(state, l)
        if len(views) < l:
            raise ValueError(f"indicator fails below level {l}; A^({l}) is undefined here")
        return views[l - 1].actions

    def accuracy_indicator(self, state, l: int) -> bool:
        views = self.views(state, l)
        return len(views) == l and views[-1].indicator

    def level_policy(self, state, l: int) -> int:
        views = self.views(state, l)
        if len(views) < l or not views[-1].indicator:
            raise ValueError(f"indicators 1..{l} do not all hold")
        return views[-1].policy

    def initial_level(self, t: int) -> int:
        return int(min(t, self.lbar))

    def run_episode(self, env, rng, reward_rng=None) -> EpisodeRecord:
        start = time.perf_counter()
        reward_rng = rng if reward_rng is None else reward_rng
        t = self.episodes + 1
        l = self.initial_level(t)
        state = env.reset(rng)
        rec = EpisodeRecord(t, state, [], [], [], [], levels=[])
        absorbing = getattr(env, "is_absorbing", None)
        while state is not None:
            if absorbing is not None and absorbing(state):
                break
            views = self.views(state, l)
            last = views[-1]
            if last.indicator:
                action, explored = last.policy, False
            else:
                l = last.level
                uncovered = [a for a, ok in zip(last.actions, last.covered) if not ok]
                if not uncovered:
                    raise InvariantViolation(
                        f"episode {t}: level {l} indicator fails at {state} "
                        "but every action of A^(l) is covered")
                action, explored = uncovered[0], True
                rec.h_t = state.stage
            reward, nxt = env.step(state, action, reward_rng)
            rec.states.append(state)
            rec.actions.append(action)
            rec.rewards.append(float(reward))
            rec.explored.append(explored)
            rec.levels.append(l)
            state = nxt
        self.episodes += 1
        if rec.h_t is not None and l < self.lbar:
            i = max(i for i, e in enumerate(rec.explored) if e)
            st, a = rec.states[i], rec.actions[i]
            self.dataset(l, rec.h_t).append(st, a, *self._entry_payload(st, a, rec.rewards[i:]))
            rec.mutation = (l, rec.h_t)
        rec.dataset_sizes = self.dataset_sizes()
        rec.wall_time = time.perf_counter() - start
        return rec

    def _entry_payload(self, state, action, rewards) -> tuple:
        raise NotImplementedError


@dataclass
class RegretConfig:
    delta: float = 0.1
    kappa: float = 0.0
    log_base: float = 2.0
    prefix_cache_cap: int | None = None
    backend: str = "auto"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")


class FpiRegret(LevelAgent):
    """Regret agent over a linear feature map."""

    algorithm = "regret"

    def __init__(self, fmap, horizon: int, num_actions: int, config: RegretConfig | None = None,
                 memoize: bool = False):
        super().__init__(horizon, num_actions, memoize)
        self.fmap = fmap
        self.config = config or RegretConfig()
        self.constants = level_constants(fmap.dim, self.horizon, self.config.kappa,
                                         self.config.delta, log_base=self.config.log_base)
        self.lam = self.constants.lam
        self.lbar = self.constants.lbar
        self._delta_cache: dict = {}

    def Delta(self, l: int) -> float:
        v = self._delta_cache.get(l)
        if v is None:
            v = self._delta_cache[l] = self.constants.Delta(l)
        return v

    def _new_dataset(self, l: int, h: int) -> StageDataset:
        return StageDataset(self.fmap.dim, self.lam, self.config.prefix_cache_cap,
                            self.config.backend)

    def _assess(self, state, l, actions, ds):
        eps = self.threshold(l)
        if not actions:
            return np.zeros(0, dtype=bool), True, 0, np.zeros(0)
        phis = self.fmap.matrix(state, actions)
        covered = ds.covered(phis, eps)
        if not covered.all():
            return covered, False, None, None
        k = ds.freeze_index(phis, eps)
        return covered, True, k, ds.estimates(phis, k)

    def _entry_payload(self, state, action, rewards) -> tuple:
        return self.fmap(state, action), float(sum(rewards))

    # --- checkpoints ------------------------------------------------------

    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "algorithm": self.algorithm,
            "config": asdict(self.config),
            "horizon": self.horizon,
            "num_actions": self.num_actions,
            "episodes": self.episodes,
            "grid": [list(key) for key in sorted(self.datasets)],
            "datasets": {f"{l},{h}": [_encode_entry(e) for e in ds.entries]
                         for (l, h), ds in sorted(self.datasets.items())},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.checkpoint(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path, fmap, state_type, memoize: bool = False) -> "FpiRegret":
        data = read_checkpoint(path, cls.algorithm)
        agent = cls(fmap, data["horizon"], data["num_actions"], RegretConfig(**data["config"]),
                    memoize=memoize)
        for key, entries in data["datasets"].items():
            l, h = (int(v) for v in key.split(","))
            ds = agent.dataset(l, h)
            for raw in entries:
                st, a, q = _decode_entry(raw, state_type)
                ds.append(st, a, fmap(st, a), q)
        agent.episodes = data["episodes"]
        return agent
