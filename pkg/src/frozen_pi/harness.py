"""Seeded experiment runs, CSV/metadata output and post-processing."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .eluder import EluderConfig, EluderFpi, eluder_dimension, q_function_class
from .env import TabularMdp, cartpole_env, figure1_env, load_instance, random_realizable_mdp
from .fpi_pac import FpiPac, PacConfig, alpha_pac, d_bound, pac_suboptimality
from .fpi_regret import FpiRegret, RegretConfig
from .oracle import expected_gap, optimal

CSV_SCHEMA_VERSION = 1
ALGORITHMS = ("pac", "regret", "eluder")


class ConfigError(ValueError):
    """Invalid run configuration."""


class MissingOracleError(ValueError):
    """A metric needs oracle gaps that the run does not have."""


class InsufficientDataError(ValueError):
    """Too few episodes for the requested statistic."""


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one labelled component of a seeded run."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


@dataclass
class RunConfig:
    algo: str = "pac"
    env: str = "figure1"
    episodes: int = 1000
    epsilon: float = 0.5
    lam: float | None = None
    delta: float = 0.1
    kappa: float = 0.0
    seed: int = 0
    freeze: bool = True
    cache_cap: int | None = None
    out: str | None = None
    log_base: float = 2.0
    backend: str = "auto"
    distractors: int = 2
    eluder_indicator: str = "prefix"
    leading_constant: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        if not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError("episodes must be an integer >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.lam is not None and not self.lam > 1e-12:
            raise ConfigError("lambda must exceed 1e-12")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.kappa < 0:
            raise ConfigError("kappa must be non-negative")
        if self.cache_cap is not None and self.cache_cap < 1:
            raise ConfigError("cache_cap must be a positive integer")
        if self.log_base not in (2, 2.0, math.e):
            raise ConfigError("log_base must be 2 or e")
        if self.eluder_indicator not in ("prefix", "full"):
            raise ConfigError("eluder_indicator must be 'prefix' or 'full'")
        if self.backend not in ("auto", "primal", "dual"):
            raise ConfigError("backend must be auto, primal or dual")
        parse_env_spec(self.env)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k != "out"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


_ENV_KEYS = {
    "figure1": {},
    "random": {"H": int, "S": int, "A": int, "merge": float, "levels": int, "noise": str},
    "cartpole": {"max_steps": int, "tiles": int, "tilings": int},
}


def parse_env_spec(spec: str) -> tuple[str, dict]:
    """``name`` or ``name:key=value,...``; ``file:path`` loads an instance file."""
    name, _, rest = spec.partition(":")
    if name == "file":
        if not rest:
            raise ConfigError("file: needs a path")
        return name, {"path": rest}
    if name not in _ENV_KEYS:
        raise ConfigError(f"unknown environment {name!r}")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq or key not in _ENV_KEYS[name]:
            raise ConfigError(f"bad parameter {item!r} for environment {name!r}")
        try:
            params[key] = _ENV_KEYS[name][key](value)
        except ValueError:
            raise ConfigError(f"bad value in {item!r}") from None
    return name, params


def build_env(spec: str, seed: int):
    """Return ``(env, feature_map)``; random instances draw from the generator stream."""
    name, p = parse_env_spec(spec)
    if name == "figure1":
        return figure1_env()
    if name == "random":
        return random_realizable_mdp(p.get("H", 3), p.get("S", 3), p.get("A", 2),
                                     p.get("merge", 0.5), rng_stream(seed, "generator"),
                                     reward_levels=p.get("levels", 3),
                                     noise=p.get("noise", "bernoulli"))
    if name == "cartpole":
        return cartpole_env(p.get("max_steps", 500), p.get("tiles", 4), p.get("tilings", 4))
    return load_instance(p["path"])


def build_agent(config: RunConfig, env, fmap):
    tabular = isinstance(env, TabularMdp)
    if config.algo == "pac":
        pc = PacConfig(config.epsilon, config.lam, config.delta, config.freeze,
                       config.cache_cap, config.backend)
        return FpiPac(fmap, env.horizon, env.num_actions, pc, memoize=tabular)
    if config.algo == "regret":
        rc = RegretConfig(config.delta, config.kappa, config.log_base, config.cache_cap,
                          config.backend)
        return FpiRegret(fmap, env.horizon, env.num_actions, rc, memoize=tabular)
    if not tabular:
        raise ConfigError("the eluder agent needs a tabular environment")
    fclass, _ = q_function_class(env, config.distractors, rng_stream(config.seed, "function-class"))
    ec = EluderConfig(config.episodes, config.delta, config.leading_constant,
                      config.eluder_indicator)
    return EluderFpi(fclass, env.horizon, env.num_actions, ec, memoize=True)


def resolved_constants(config: RunConfig, env, fmap, agent) -> dict:
    H = env.horizon
    out = {"horizon": H, "num_actions": env.num_actions}
    if config.algo == "pac":
        lam = agent.lam
        out.update(dim=fmap.dim, **{"lambda": lam}, D=d_bound(fmap.dim, config.epsilon, lam),
                   alpha=alpha_pac(fmap.dim, H, config.epsilon, lam, config.delta, config.kappa),
                   eps_bar=pac_suboptimality(fmap.dim, H, config.epsilon, lam, config.delta,
                                             config.kappa),
                   freeze_enabled=config.freeze, cache_cap=config.cache_cap)
    elif config.algo == "regret":
        c = agent.constants
        out.update(dim=fmap.dim, **{"lambda": c.lam},
                   lbar=None if math.isinf(c.lbar) else c.lbar,
                   levels=c.table(int(min(c.lbar, 12))))
    else:
        fclass = agent.fclass
        dim_e = (eluder_dimension(fclass, 1.0 / config.episodes)
                 if len(fclass.pairs) <= 12 else None)
        out.update(functions=len(fclass), lbar=agent.lbar, covering_number=agent.covering,
                   eluder_dimension=dim_e, leading_constant=config.leading_constant,
                   indicator=config.eluder_indicator,
                   levels=[{"level": l, "Delta": agent.Delta(l),
                            "D": agent.D(l, dim_e) if dim_e is not None else None}
                           for l in range(1, agent.lbar)])
    return out


@dataclass
class RunResult:
    config: RunConfig
    records: list
    metadata: dict
    agent: object = None
    env: object = None


def run(config: RunConfig, write: bool = True) -> RunResult:
    env, fmap = build_env(config.env, config.seed)
    agent = build_agent(config, env, fmap)
    reset_rng = rng_stream(config.seed, "env-reset")
    reward_rng = rng_stream(config.seed, "reward-noise")
    values = optimal(env)[0] if isinstance(env, TabularMdp) else None
    records = []
    for _ in range(config.episodes):
        rec = agent.run_episode(env, reset_rng, reward_rng)
        if values is not None:
            rec.gap = expected_gap(env, rec.initial_state, rec.actions, values)
        records.append(rec)
    metadata = {
        "csv_schema": CSV_SCHEMA_VERSION,
        "columns": csv_columns(config.algo),
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "constants": resolved_constants(config, env, fmap, agent),
    }
    result = RunResult(config, records, metadata, agent, env)
    if write and config.out:
        write_outputs(result, config.out)
    return result


def csv_columns(algo: str) -> list:
    cols = ["t", "return", "gap", "h_t", "mutation", "dataset_total"]
    if algo != "pac":
        cols.append("levels")
    cols.append("dataset_sizes")
    return cols


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def records_to_csv(records, algo: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(algo))
    for r in records:
        sizes = ";".join(f"{':'.join(str(v) for v in (k if isinstance(k, tuple) else (k,)))}={n}"
                         for k, n in r.dataset_sizes.items() if n)
        row = [r.t, _fmt(r.ret), _fmt(r.gap), _fmt(r.h_t),
               ":".join(str(v) for v in r.mutation) if r.mutation else "",
               sum(r.dataset_sizes.values())]
        if algo != "pac":
            row.append(";".join(str(v) for v in r.levels))
        row.append(sizes)
        w.writerow(row)
    return buf.getvalue()


def write_outputs(result: RunResult, out) -> tuple[Path, Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out if out.suffix == ".csv" else out.with_suffix(".csv")
    meta_path = csv_path.with_suffix(".meta.json")
    csv_path.write_bytes(records_to_csv(result.records, result.config.algo).encode("utf-8"))
    meta_path.write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return csv_path, meta_path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _gaps(records) -> np.ndarray:
    gaps = []
    for r in records:
        g = r.get("gap") if isinstance(r, dict) else r.gap
        if g is None or g == "":
            raise MissingOracleError("records carry no oracle gap (non-tabular run?)")
        gaps.append(float(g))
    return np.array(gaps)


def uniform_pac_counts(records, thresholds) -> dict:
    """``N(eps)``: number of episodes with gap above each threshold."""
    gaps = _gaps(records)
    return {float(e): int(np.sum(gaps > e)) for e in thresholds}


def regret_slope(records_or_regret, window: float = 0.5, min_episodes: int = 100) -> float:
    """Log-log slope of ``cumulative regret + 1`` against ``t`` over the final ``window``.

    Accepts episode records (their oracle gaps are accumulated) or a
    cumulative-regret array.
    """
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    if isinstance(records_or_regret, np.ndarray):
        cum = records_or_regret.astype(float)
    else:
        cum = np.cumsum(_gaps(list(records_or_regret)))
    if len(cum) < min_episodes:
        raise InsufficientDataError(f"need at least {min_episodes} episodes, got {len(cum)}")
    n = len(cum)
    start = n - max(2, int(round(window * n)))
    t = np.arange(1, n + 1)[start:]
    y = np.log(cum[start:] + 1.0)
    return float(np.polyfit(np.log(t), y, 1)[0])


def final_window_mean(records, fraction: float = 0.2) -> float:
    n = len(records)
    tail = records[n - max(1, int(round(fraction * n))):]
    return float(np.mean([r.ret for r in tail]))


def compare_ablation(config: RunConfig, seeds, fraction: float = 0.2) -> dict:
    """Run each seed with freezing on and off; summarize final-window mean return."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("need at least two seeds")
    per_seed = {"freeze": [], "no_freeze": []}
    for seed in seeds:
        for arm, flag in (("freeze", True), ("no_freeze", False)):
            cfg = RunConfig.from_dict({**config.to_dict(), "seed": seed, "freeze": flag,
                                       "out": None})
            res = run(cfg, write=False)
            per_seed[arm].append(final_window_mean(res.records, fraction))
    rows = []
    for arm, vals in per_seed.items():
        v = np.array(vals)
        half = 1.96 * v.std(ddof=1) / math.sqrt(len(v))
        rows.append({"arm": arm, "mean": float(v.mean()), "ci_low": float(v.mean() - half),
                     "ci_high": float(v.mean() + half), "seeds": seeds,
                     "per_seed": [float(x) for x in vals]})
    return {"window_fraction": fraction, "runs": 2 * len(seeds), "rows": rows}
