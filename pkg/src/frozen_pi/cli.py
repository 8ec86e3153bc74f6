"""Command line entry point: ``fpi run | ablate | analyze``."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (ConfigError, InsufficientDataError, MissingOracleError, RunConfig,
                      compare_ablation, read_csv, regret_slope, run, uniform_pac_counts)
from .records import InvariantViolation

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4

# flag -> RunConfig field
_FLAGS = {"algo": "algo", "env": "env", "episodes": "episodes", "epsilon": "epsilon",
          "lambda": "lam", "delta": "delta", "kappa": "kappa", "seed": "seed",
          "cache_cap": "cache_cap", "out": "out", "log_base": "log_base",
          "backend": "backend", "distractors": "distractors"}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--algo", choices=["pac", "regret", "eluder"])
    p.add_argument("--env", help="figure1 | random:H=..,S=..,A=..,merge=.. | "
                                 "cartpole:max_steps=.. | file:PATH")
    p.add_argument("--episodes", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--lambda", type=float, dest="lambda")
    p.add_argument("--delta", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-freeze", action="store_true", help="ablation: estimate from all data")
    p.add_argument("--cache-cap", type=int, dest="cache_cap")
    p.add_argument("--log-base", type=float, dest="log_base")
    p.add_argument("--backend", choices=["auto", "primal", "dual"])
    p.add_argument("--distractors", type=int)
    p.add_argument("--out", help="CSV path; metadata goes next to it as .meta.json")


def _config_from_args(args) -> RunConfig:
    data = {}
    if args.config:
        data = RunConfig.from_json(args.config).to_dict()
    for flag, name in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    if getattr(args, "no_freeze", False):
        data["freeze"] = False
    return RunConfig.from_dict(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpi", description="Frozen Policy Iteration experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one seeded configuration")
    _add_run_flags(p_run)

    p_ab = sub.add_parser("ablate", help="freezing on vs off over several seeds")
    _add_run_flags(p_ab)
    p_ab.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p_ab.add_argument("--fraction", type=float, default=0.2, help="final-window fraction")

    p_an = sub.add_parser("analyze", help="metrics from a run CSV")
    p_an.add_argument("csv")
    p_an.add_argument("--thresholds", default="0.1,0.25,0.5,1.0")
    p_an.add_argument("--window", type=float, default=0.5)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            res = run(cfg)
            rets = [r.ret for r in res.records]
            summary = {"episodes": len(rets), "mean_return": sum(rets) / len(rets),
                       "config_sha256": res.metadata["config_sha256"], "out": cfg.out}
            print(json.dumps(summary, indent=2))
        elif args.command == "ablate":
            cfg = _config_from_args(args)
            seeds = [int(s) for s in args.seeds.split(",") if s]
            table = compare_ablation(cfg, seeds, args.fraction)
            print(json.dumps(table, indent=2))
            if cfg.out:
                with open(cfg.out, "w", encoding="utf-8") as fh:
                    json.dump(table, fh, indent=2)
        else:
            rows = read_csv(args.csv)
            thresholds = [float(x) for x in args.thresholds.split(",") if x]
            out = {"episodes": len(rows), "uniform_pac": uniform_pac_counts(rows, thresholds),
                   "regret_slope": regret_slope(rows, args.window)}
            print(json.dumps(out, indent=2))
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingOracleError, InsufficientDataError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"InvariantViolation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except FileNotFoundError as exc:
        print(f"FileNotFoundError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
