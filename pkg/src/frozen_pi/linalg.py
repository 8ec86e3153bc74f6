"""Regularized feature covariance with prefix queries.

``PrefixCovariance`` maintains ``Sigma_k = lam * I + sum_{i<=k} phi_i phi_i^T``
for every prefix length ``k`` of an append-only list of feature rows and
answers elliptical-norm and ridge least-squares queries at any prefix.

Two interchangeable backends are provided:

``"primal"``
    Sherman-Morrison rank-one updates of ``Sigma_k^{-1}``; one ``d x d``
    inverse (and ridge solution) is cached per prefix, optionally capped to
    the most recent ``cache_cap`` prefixes. Cheap when ``d`` is small.

``"dual"``
    Cholesky factor of the regularized Gram matrix ``lam * I + Phi Phi^T``.
    The leading ``k x k`` block of that factor is the factor of prefix
    ``k``, so every prefix is available without any per-prefix storage.
    Cheap when ``d`` is large and the number of rows is modest.

Both are checked against :func:`direct_elliptical_norm` and
:func:`direct_least_squares`, which solve the dense system from scratch.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

MIN_LAMBDA = 1e-12
NORM_TOL = 1e-9
# backend="auto" picks "primal" up to this dimension
PRIMAL_MAX_DIM = 64


def as_feature(x, dim: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a 1-d float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"feature must be 1-d, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ValueError(f"feature has dimension {x.shape[0]}, expected {dim}")
    return x


def direct_elliptical_norm(rows, lam: float, x) -> float:
    """Dense reference for ``sqrt(x^T (lam I + R^T R)^{-1} x)``."""
    x = np.asarray(x, dtype=float)
    rows = np.asarray(rows, dtype=float).reshape(-1, x.shape[0])
    sigma = lam * np.eye(x.shape[0]) + rows.T @ rows
    u = np.linalg.solve(sigma, x)
    return float(np.sqrt(max(float(x @ u), 0.0)))


def direct_least_squares(rows, targets, lam: float, x) -> float:
    """Dense reference for ``<x, (lam I + R^T R)^{-1} R^T q>``."""
    x = np.asarray(x, dtype=float)
    rows = np.asarray(rows, dtype=float).reshape(-1, x.shape[0])
    targets = np.asarray(targets, dtype=float)[: rows.shape[0]]
    if rows.shape[0] == 0:
        return 0.0
    sigma = lam * np.eye(x.shape[0]) + rows.T @ rows
    theta = np.linalg.solve(sigma, rows.T @ targets)
    return float(x @ theta)


class PrefixCovariance:
    """Append-only ridge design with queries at every prefix length.

    Parameters
    ----------
    dim : int
        Ambient feature dimension ``d``.
    lam : float
        Ridge regularizer; must exceed ``1e-12``.
    cache_cap : int or None
        Primal backend only: keep the inverses of at most this many of the
        most recent prefixes. Older prefixes are recomputed from the stored
        rows on demand. ``None`` keeps every prefix.
    backend : {"auto", "primal", "dual"}
    """

    def __init__(self, dim: int, lam: float, cache_cap: int | None = None,
                 backend: str = "auto"):
        if dim < 1:
            raise ValueError("dim must be positive")
        if not np.isfinite(lam) or lam <= MIN_LAMBDA:
            raise ValueError(f"lambda must exceed {MIN_LAMBDA}, got {lam}")
        if cache_cap is not None and cache_cap < 1:
            raise ValueError("cache_cap must be a positive integer or None")
        if backend == "auto":
            backend = "primal" if dim <= PRIMAL_MAX_DIM else "dual"
        if backend not in ("primal", "dual"):
            raise ValueError(f"unknown backend {backend!r}")
        self.dim = int(dim)
        self.lam = float(lam)
        self.cache_cap = cache_cap
        self.backend = backend

        self._n = 0
        self._rows = np.zeros((8, self.dim))
        self._targets = np.zeros(8)
        if backend == "primal":
            # prefix k -> (Sigma_k^{-1}, theta_k)
            self._inv = {0: (np.eye(self.dim) / self.lam, np.zeros(self.dim))}
            self._b = np.zeros(self.dim)
        else:
            self._chol = np.zeros((8, 8))
            self._z = np.zeros(8)

    def __len__(self) -> int:
        return self._n

    @property
    def rows(self) -> np.ndarray:
        return self._rows[: self._n]

    @property
    def targets(self) -> np.ndarray:
        return self._targets[: self._n]

    def _grow(self):
        cap = 2 * self._rows.shape[0]
        rows = np.zeros((cap, self.dim))
        rows[: self._n] = self._rows[: self._n]
        self._rows = rows
        targets = np.zeros(cap)
        targets[: self._n] = self._targets[: self._n]
        self._targets = targets
        if self.backend == "dual":
            chol = np.zeros((cap, cap))
            chol[: self._n, : self._n] = self._chol[: self._n, : self._n]
            self._chol = chol
            z = np.zeros(cap)
            z[: self._n] = self._z[: self._n]
            self._z = z

    def push(self, phi, target: float = 0.0) -> int:
        """Append a row (and its regression target); return the new prefix length."""
        phi = as_feature(phi, self.dim)
        if not np.all(np.isfinite(phi)):
            raise ValueError("feature contains non-finite values")
        if self._n == self._rows.shape[0]:
            self._grow()
        n = self._n
        self._rows[n] = phi
        self._targets[n] = target
        if self.backend == "primal":
            inv, _ = self._inverse(n)
            u = inv @ phi
            inv = inv - np.outer(u, u) / (1.0 + phi @ u)
            inv = 0.5 * (inv + inv.T)
            self._b = self._b + target * phi
            self._inv[n + 1] = (inv, inv @ self._b)
        else:
            if n:
                g = self._rows[:n] @ phi
                ell = solve_triangular(self._chol[:n, :n], g, lower=True,
                                       check_finite=False)
            else:
                ell = np.zeros(0)
            diag = np.sqrt(self.lam + phi @ phi - ell @ ell)
            self._chol[n, :n] = ell
            self._chol[n, n] = diag
            self._z[n] = (target - ell @ self._z[:n]) / diag
        self._n = n + 1
        if self.backend == "primal":
            self._evict()
        return self._n

    def _evict(self):
        if self.cache_cap is None:
            return
        oldest_kept = self._n + 1 - self.cache_cap
        for k in [k for k in self._inv if 0 < k < oldest_kept]:
            del self._inv[k]

    def _check_prefix(self, k: int) -> int:
        k = int(k)
        if not 0 <= k <= self._n:
            raise IndexError(f"prefix {k} out of range [0, {self._n}]")
        return k

    def _inverse(self, k: int):
        """Primal: ``(Sigma_k^{-1}, theta_k)``, recomputed if evicted."""
        hit = self._inv.get(k)
        if hit is not None:
            return hit
        rows = self._rows[:k]
        sigma = self.lam * np.eye(self.dim) + rows.T @ rows
        factor = cho_factor(sigma)
        inv = cho_solve(factor, np.eye(self.dim))
        theta = cho_solve(factor, rows.T @ self._targets[:k])
        return 0.5 * (inv + inv.T), theta

    def _dual_solve(self, x, k: int):
        """Dual: ``w = L_k^{-1} Phi_k x``."""
        if k == 0:
            return np.zeros(0)
        nz = np.flatnonzero(x)
        v = self._rows[:k, nz] @ x[nz]
        return solve_triangular(self._chol[:k, :k], v, lower=True,
                                check_finite=False)

    def elliptical_norm(self, x, k: int | None = None) -> float:
        """``||x||`` in the metric ``Sigma_k^{-1}``; ``k`` defaults to all rows."""
        x = as_feature(x, self.dim)
        k = self._n if k is None else self._check_prefix(k)
        if self.backend == "primal":
            inv, _ = self._inverse(k)
            sq = x @ inv @ x
        else:
            w = self._dual_solve(x, k)
            sq = (x @ x - w @ w) / self.lam
        return float(np.sqrt(max(sq, 0.0)))

    def prefix_norms(self, x) -> np.ndarray:
        """Elliptical norms of ``x`` at every prefix ``0..n`` (length ``n + 1``)."""
        x = as_feature(x, self.dim)
        if self.backend == "primal":
            return np.array([self.elliptical_norm(x, k) for k in range(self._n + 1)])
        w = self._dual_solve(x, self._n)
        sq = (x @ x - np.concatenate(([0.0], np.cumsum(w * w)))) / self.lam
        return np.sqrt(np.maximum(sq, 0.0))

    def least_squares_estimate(self, x, k: int | None = None, targets=None) -> float:
        """Ridge prediction ``<x, Sigma_k^{-1} sum_{i<=k} phi_i q_i>``.

        ``targets`` overrides the stored targets; it must have length >= k.
        """
        x = as_feature(x, self.dim)
        k = self._n if k is None else self._check_prefix(k)
        if k == 0:
            return 0.0
        if targets is not None:
            targets = np.asarray(targets, dtype=float)
            if targets.shape[0] < k:
                raise ValueError(f"need at least {k} targets, got {targets.shape[0]}")
            targets = targets[:k]
            if np.array_equal(targets, self._targets[:k]):
                targets = None
        if self.backend == "primal":
            inv, theta = self._inverse(k)
            if targets is not None:
                theta = inv @ (self._rows[:k].T @ targets)
            return float(x @ theta)
        w = self._dual_solve(x, k)
        if targets is None:
            z = self._z[:k]
        else:
            z = solve_triangular(self._chol[:k, :k], targets, lower=True,
                                 check_finite=False)
        return float(w @ z)

    def first_covered_prefix(self, xs, threshold: float) -> int:
        """Smallest ``k`` with every row of ``xs`` at norm <= threshold, capped at ``n``.

        Relies on the norm being non-increasing in ``k``.
        """
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = self._n
        if xs.shape[0] == 0:
            return 0
        if self.backend == "dual":
            worst = np.max(np.vstack([self.prefix_norms(x) for x in xs]), axis=0)
            hits = np.flatnonzero(worst <= threshold)
            return int(hits[0]) if hits.size else n

        def all_covered(k):
            return all(self.elliptical_norm(x, k) <= threshold for x in xs)

        if not all_covered(n):
            return n
        lo, hi = 0, n
        while lo < hi:
            mid = (lo + hi) // 2
            if all_covered(mid):
                hi = mid
            else:
                lo = mid + 1
        return lo
