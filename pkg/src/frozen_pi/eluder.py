"""Frozen Policy Iteration over an explicitly enumerated finite function class.

A :class:`FiniteFunctionClass` stores ``m`` functions as rows of an ``(m, P)``
table over a fixed universe of ``P`` (stage, state, action) pairs. With the
class enumerable, the least-squares minimizer, confidence sets, widths and
epsilon-dependence are all computed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fpi_regret import LevelAgent
from .oracle import enumerate_policies, policy_q

CLASS_FORMAT = "frozen-pi-function-class"
CLASS_VERSION = 1
MAX_ELUDER_UNIVERSE = 12


class FiniteFunctionClass:
    """``values[i, j]`` is function ``i`` at pair ``pairs[j] = (stage, state, action)``."""

    def __init__(self, values, pairs, ids=None, H: float | None = None):
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("need a 2-d table with at least one function")
        self.pairs = [tuple(int(v) for v in p) for p in pairs]
        if len(self.pairs) != self.values.shape[1]:
            raise ValueError("one column per pair required")
        self.index = {p: j for j, p in enumerate(self.pairs)}
        if len(self.index) != len(self.pairs):
            raise ValueError("duplicate pairs")
        self.ids = list(range(len(self.values))) if ids is None else list(ids)
        if H is not None and (self.values.min() < 0 or self.values.max() > H):
            raise ValueError(f"function values must lie in [0, {H}]")

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, state, action: int) -> int:
        return self.index[(state.stage, state.index, int(action))]

    def at(self, pair) -> np.ndarray:
        """Values of every function at a pair given as a column index."""
        return self.values[:, pair]

    def subclass(self, rows) -> "FiniteFunctionClass":
        rows = list(rows)
        return FiniteFunctionClass(self.values[rows], self.pairs, [self.ids[r] for r in rows])


def _pair_gaps(fclass: FiniteFunctionClass, cols) -> np.ndarray:
    """Squared distance of every function pair summed over ``cols``."""
    v = fclass.values[:, list(cols)]
    diff = v[:, None, :] - v[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def eps_dependent(pair: int, history, epsilon: float, fclass: FiniteFunctionClass) -> bool:
    """Is ``pair`` epsilon-dependent on ``history`` (column indices)?"""
    close = _pair_gaps(fclass, history) <= epsilon ** 2
    v = fclass.at(pair)
    far = np.abs(v[:, None] - v[None, :]) > epsilon
    return not np.any(close & far)


def eluder_dimension(fclass: FiniteFunctionClass, epsilon: float,
                     max_universe: int = MAX_ELUDER_UNIVERSE) -> int:
    """Longest sequence of pairs each eps'-independent of its predecessors, eps' >= eps.

    Branch and bound. A pair ``x`` is eps'-independent of history ``S`` exactly
    when some function pair has ``sqrt(sum_S gap^2) <= eps' < |gap(x)|``, so the
    feasible eps' of a sequence is a finite union of intervals that only
    shrinks as the sequence grows.
    """
    P = len(fclass.pairs)
    if P > max_universe:
        raise ValueError(f"universe of {P} pairs exceeds the exhaustive-search limit {max_universe}")
    m = len(fclass)
    iu, ju = np.triu_indices(m, 1)
    gaps = np.abs(fclass.values[iu] - fclass.values[ju])  # (pairs of functions, P)
    best = 0

    def extend(used, sq, feasible, depth):
        nonlocal best
        best = max(best, depth)
        if depth + (P - len(used)) <= best:
            return
        lo_all = np.sqrt(sq)
        for x in range(P):
            if x in used:
                continue
            lo, hi = lo_all, gaps[:, x]
            ok = lo < hi
            if not ok.any():
                continue
            nxt = _intersect(feasible, list(zip(lo[ok], hi[ok])))
            if not nxt:
                continue
            extend(used | {x}, sq + gaps[:, x] ** 2, nxt, depth + 1)
            if best == P:
                return

    if len(iu):
        extend(frozenset(), np.zeros(len(iu)), [(epsilon, math.inf)], 0)
    return best


def _intersect(feasible, intervals):
    """Intersect a union of ``[lo, hi)`` intervals with another union."""
    out = []
    for a, b in feasible:
        for c, e in intervals:
            lo, hi = max(a, c), min(b, e)
            if lo < hi:
                out.append((lo, hi))
    out.sort()
    merged = []
    for lo, hi in out:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def width(values_at_pair, members) -> float:
    """Spread ``max - min`` of the member functions at one pair."""
    v = np.asarray(values_at_pair, dtype=float)[np.asarray(members)]
    if v.size == 0:
        raise ValueError("width of an empty set")
    return float(v.max() - v.min())


def covering_number(fclass: FiniteFunctionClass, alpha: float) -> int:
    """Size of a greedy sup-norm alpha-cover (an upper bound on the covering number)."""
    remaining = list(range(len(fclass)))
    count = 0
    while remaining:
        c = remaining[0]
        dist = np.abs(fclass.values[remaining] - fclass.values[c]).max(axis=1)
        remaining = [r for r, dd in zip(remaining, dist) if dd > alpha]
        count += 1
    return count


def beta_star(t: int, H: float, delta: float, alpha: float, covering: int) -> float:
    """``8H ln(N / delta) + 2 alpha t (8H + sqrt(8H ln(4 t^2 / delta)))``."""
    if t < 1 or not 0 < delta < 1 or alpha < 0:
        raise ValueError("need t >= 1, delta in (0, 1) and alpha >= 0")
    return (8 * H * math.log(covering / delta)
            + 2 * alpha * t * (8 * H + math.sqrt(8 * H * math.log(4 * t ** 2 / delta))))


@dataclass
class ConfidenceSet:
    members: np.ndarray  # boolean mask over the class
    minimizer: int
    beta: float

    def indices(self) -> list:
        return [int(i) for i in np.flatnonzero(self.members)]


def confidence_set(cols, targets, fclass: FiniteFunctionClass, beta: float) -> ConfidenceSet:
    """Least-squares minimizer (ties to the first function) and its beta-ball."""
    cols = list(cols)
    v = fclass.values[:, cols]
    resid = ((v - np.asarray(targets, dtype=float)) ** 2).sum(axis=1)
    fhat = int(np.argmin(resid))
    dev = ((v - v[fhat]) ** 2).sum(axis=1)
    return ConfidenceSet(dev <= beta, fhat, float(beta))


def q_function_class(mdp, distractors: int = 0, rng=None, limit: int = 10 ** 5):
    """Distinct ``Q^pi`` tables of every deterministic policy, plus random distractors.

    Returns the class and the number of leading rows that are true Q-functions.
    """
    pairs = [(h, s, a) for h in range(mdp.horizon)
             for s in range(mdp.states_per_stage[h]) for a in range(mdp.num_actions)]
    rows, seen = [], set()
    for pi in enumerate_policies(mdp, limit):
        table = np.concatenate([q.ravel() for q in policy_q(mdp, pi).q])
        key = table.round(12).tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(table)
    n_true = len(rows)
    if distractors:
        if rng is None:
            raise ValueError("distractors need an rng")
        for _ in range(distractors):
            rows.append(rng.uniform(0, mdp.horizon, size=len(pairs)))
    return FiniteFunctionClass(np.vstack(rows), pairs, H=mdp.horizon), n_true


def save_function_class(path, fclass: FiniteFunctionClass) -> None:
    lines = [f"{CLASS_FORMAT} v{CLASS_VERSION}",
             "ids " + " ".join(str(i) for i in fclass.ids),
             "# stage state action value_per_function"]
    for j, (h, s, a) in enumerate(fclass.pairs):
        lines.append(f"{h} {s} {a} " + " ".join(repr(float(v)) for v in fclass.values[:, j]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_function_class(path) -> FiniteFunctionClass:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    if lines[0] != f"{CLASS_FORMAT} v{CLASS_VERSION}":
        raise ValueError(f"unsupported function class header {lines[0]!r}")
    ids = [int(v) for v in lines[1].split()[1:]]
    pairs, cols = [], []
    for ln in lines[2:]:
        tok = ln.split()
        pairs.append(tuple(int(v) for v in tok[:3]))
        cols.append([float(v) for v in tok[3:]])
    return FiniteFunctionClass(np.array(cols).T, pairs, ids)


# --- agent ----------------------------------------------------------------

class ClassDataset:
    """Stage dataset for the function-class agent with per-prefix statistics.

    Prefix ``k`` keeps the pairwise squared gaps over its first ``k`` pairs,
    the least-squares minimizer and the confidence-set mask under ``beta(k)``.
    """

    def __init__(self, fclass: FiniteFunctionClass, beta):
        self.fclass = fclass
        self.beta = beta  # k -> threshold
        m = len(fclass)
        self.entries: list = []
        self._gaps = [np.zeros((m, m))]
        self._resid = [np.zeros(m)]
        self._fhat = [0]
        self._members = [np.ones(m, dtype=bool)]
        self._cols: list = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, state, action: int, col: int, qhat: float) -> int:
        v = self.fclass.at(col)
        diff = v[:, None] - v[None, :]
        gaps = self._gaps[-1] + diff * diff
        resid = self._resid[-1] + (v - qhat) ** 2
        fhat = int(np.argmin(resid))
        k = len(self.entries) + 1
        cols = self._cols + [col]
        vals = self.fclass.values[:, cols]
        dev = ((vals - vals[fhat]) ** 2).sum(axis=1)
        self._gaps.append(gaps)
        self._resid.append(resid)
        self._fhat.append(fhat)
        self._members.append(dev <= self.beta(k))
        self._cols = cols
        self.entries.append((state, int(action), float(qhat)))
        return k

    def confidence_set(self, k: int) -> ConfidenceSet:
        return ConfidenceSet(self._members[k].copy(), self._fhat[k], self.beta(k) if k else math.inf)

    def cover_table(self, cols, epsilon: float) -> np.ndarray:
        """``out[k, j]``: pair ``cols[j]`` is in Cover(prefix k, F_k, eps), for k = 0..n."""
        gaps = np.stack(self._gaps)  # (n + 1, m, m)
        members = np.stack(self._members)  # (n + 1, m)
        out = np.empty((len(self._gaps), len(cols)), dtype=bool)
        close = gaps <= epsilon ** 2
        for j, c in enumerate(cols):
            v = self.fclass.at(c)
            far = np.abs(v[:, None] - v[None, :]) > epsilon
            dependent = ~np.any(close & far, axis=(1, 2))
            hi = np.where(members, v, -np.inf).max(axis=1)
            lo = np.where(members, v, np.inf).min(axis=1)
            out[:, j] = dependent & (hi - lo <= epsilon)
        return out

    def estimates(self, cols, k: int) -> np.ndarray:
        return self.fclass.values[self._fhat[k], list(cols)]


@dataclass
class EluderConfig:
    T: int  # planned number of episodes; sets lbar and the confidence radius
    delta: float = 0.1
    leading_constant: float = 1.0
    indicator: str = "prefix"  # "prefix": exists k in 1..n; "full": k = n only

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.indicator not in ("prefix", "full"):
            raise ValueError("indicator must be 'prefix' or 'full'")


class EluderFpi(LevelAgent):
    """Level-based agent whose estimates come from a finite function class."""

    algorithm = "eluder"

    def __init__(self, fclass: FiniteFunctionClass, horizon: int, num_actions: int,
                 config: EluderConfig, memoize: bool = False):
        super().__init__(horizon, num_actions, memoize)
        self.fclass = fclass
        self.config = config
        T = config.T
        self.lbar = math.floor(math.log2(T)) + 1
        self.covering = covering_number(fclass, 1.0 / T ** 2)

    def Delta(self, l: int) -> float:
        return 2.0 ** -l

    def beta(self, l: int, k: int) -> float:
        if k == 0:
            return math.inf
        delta = self.config.delta / (4 * self.horizon * l ** 2)
        return beta_star(k, self.horizon, delta, 1.0 / self.config.T ** 2, self.covering)

    def D(self, l: int, eluder_dim: int | None = None) -> float:
        """Dataset-size scale with the configured leading constant."""
        T, H, delta = self.config.T, self.horizon, self.config.delta
        if eluder_dim is None:
            eluder_dim = eluder_dimension(self.fclass, 1.0 / T)
        return (self.config.leading_constant * 4.0 ** l * H * eluder_dim
                * (math.log(H * T / delta) + math.log(self.covering)))

    def _new_dataset(self, l: int, h: int) -> ClassDataset:
        return ClassDataset(self.fclass, lambda k, l=l: self.beta(l, k))

    def _stable(self) -> bool:
        return self.config.indicator == "prefix"

    def _assess(self, state, l, actions, ds):
        if not actions:
            return np.zeros(0, dtype=bool), True, 0, np.zeros(0)
        eps = self.threshold(l)
        cols = [self.fclass.column(state, a) for a in actions]
        table = ds.cover_table(cols, eps)
        n = len(ds)
        all_cov = table.all(axis=1)
        if self.config.indicator == "prefix":
            # no prefix k >= 1 exists in an empty dataset: nothing is covered yet
            covered = table[n] if n else np.zeros(len(actions), dtype=bool)
            hits = np.flatnonzero(all_cov[1:]) + 1
        else:
            covered = table[n]
            hits = np.flatnonzero(all_cov)
            if not covered.all():
                hits = hits[:0]
        if hits.size == 0:
            return covered, False, None, None
        k = int(hits[0])
        return covered, True, k, ds.estimates(cols, k)

    def _entry_payload(self, state, action, rewards) -> tuple:
        return self.fclass.column(state, action), float(sum(rewards))

