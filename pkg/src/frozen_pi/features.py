"""Feature maps phi(state, action) -> R^d with ||phi||_2 <= 1.

States are environment-specific objects exposing a ``stage`` attribute
(tabular states are :class:`~frozen_pi.env.TabularState`). Every map is
immutable after construction.
"""

from __future__ import annotations

import numpy as np


class FeatureMap:
    """Base class. Subclasses implement :meth:`__call__`."""

    dim: int

    def __call__(self, state, action: int) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, state, actions) -> np.ndarray:
        """Stack ``phi(state, a)`` for each action into an ``(len(actions), d)`` array."""
        return np.vstack([self(state, a) for a in actions])


class TabularFeatureMap(FeatureMap):
    """One-hot features over a per-stage ``(state, action) -> coordinate`` table.

    ``assignment[h]`` is an integer array of shape ``(S_h, A)``. Pairs sharing
    a coordinate get identical features.
    """

    def __init__(self, dim: int, assignment):
        self.dim = int(dim)
        self.assignment = [np.asarray(a, dtype=int) for a in assignment]
        for h, table in enumerate(self.assignment):
            if table.ndim != 2:
                raise ValueError(f"stage {h}: assignment must be 2-d (states x actions)")
            if table.size and (table.min() < 0 or table.max() >= self.dim):
                raise ValueError(f"stage {h}: coordinate out of range [0, {self.dim})")
        self._basis = np.eye(self.dim)
        self._basis.setflags(write=False)

    def coordinate(self, state, action: int) -> int:
        h, s = state.stage, state.index
        try:
            if h < 0 or s < 0 or action < 0:
                raise IndexError
            return int(self.assignment[h][s, action])
        except IndexError:
            raise KeyError(f"no feature defined for stage={h} state={s} action={action}") from None

    def __call__(self, state, action: int) -> np.ndarray:
        return self._basis[self.coordinate(state, action)]


def tabular_onehot(dim: int, assignment) -> TabularFeatureMap:
    """Build a one-hot map; distinct coordinates per pair make it exactly realizable."""
    return TabularFeatureMap(dim, assignment)


def figure1_map() -> TabularFeatureMap:
    """Features of the two-stage example: phi(s1, a1) = phi(s1, a2) = e1,
    phi(s2, a3) = e2, phi(s3, a3) = e3.

    Both action indices at stage 2 stand for ``a3``.
    """
    return TabularFeatureMap(3, [[[0, 0]], [[1, 1], [2, 2]]])


class TileCoding(FeatureMap):
    """Uniformly offset grid tilings over a bounded box, one block per action.

    Each tiling activates exactly one tile; active entries are
    ``1 / sqrt(num_tilings)`` so every feature has unit norm. Tiling ``j`` is
    shifted by ``j / num_tilings`` of a tile width along every dimension.
    States outside the box are clamped to it.

    ``state_of`` extracts the continuous vector from a state object; by default
    the state itself is converted with ``np.asarray``.
    """

    def __init__(self, state_bounds, tiles_per_dim: int = 4, num_tilings: int = 4,
                 num_actions: int = 2, state_of=None):
        bounds = np.asarray(state_bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise ValueError("state_bounds must be a sequence of (low, high) pairs")
        if not np.all(bounds[:, 1] > bounds[:, 0]):
            raise ValueError("every interval needs high > low")
        if tiles_per_dim < 1 or num_tilings < 1 or num_actions < 1:
            raise ValueError("tiles_per_dim, num_tilings and num_actions must be >= 1")
        self.low = bounds[:, 0]
        self.high = bounds[:, 1]
        self.n_dims = bounds.shape[0]
        self.tiles_per_dim = int(tiles_per_dim)
        self.num_tilings = int(num_tilings)
        self.num_actions = int(num_actions)
        self.width = (self.high - self.low) / self.tiles_per_dim
        self.tiles_per_tiling = self.tiles_per_dim ** self.n_dims
        self.block = self.num_tilings * self.tiles_per_tiling
        self.dim = self.block * self.num_actions
        self.value = 1.0 / np.sqrt(self.num_tilings)
        self._offsets = np.arange(self.num_tilings)[:, None] / self.num_tilings
        self._strides = self.tiles_per_dim ** np.arange(self.n_dims)[::-1]
        self.state_of = state_of

    def active_indices(self, state, action: int) -> np.ndarray:
        """Indices of the ``num_tilings`` active entries."""
        if not 0 <= action < self.num_actions:
            raise KeyError(f"action {action} out of range")
        x = np.asarray(self.state_of(state) if self.state_of else state, dtype=float)
        if x.shape != (self.n_dims,):
            raise ValueError(f"expected a state of shape ({self.n_dims},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("state has non-finite components")
        x = np.clip(x, self.low, self.high)
        cells = np.floor((x - self.low) / self.width + self._offsets).astype(int)
        cells = np.minimum(cells, self.tiles_per_dim - 1)
        flat = cells @ self._strides
        return action * self.block + np.arange(self.num_tilings) * self.tiles_per_tiling + flat

    def __call__(self, state, action: int) -> np.ndarray:
        phi = np.zeros(self.dim)
        phi[self.active_indices(state, action)] = self.value
        return phi


def tile_coding(state_bounds, tiles_per_dim: int, num_tilings: int,
                num_actions: int, state_of=None) -> TileCoding:
    return TileCoding(state_bounds, tiles_per_dim, num_tilings, num_actions, state_of)
