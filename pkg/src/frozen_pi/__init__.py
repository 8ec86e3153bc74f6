"""Frozen Policy Iteration for online RL with linearly realizable Q^pi."""

from .env import CartPole, TabularMdp, TabularState, cartpole_env, figure1_env, random_realizable_mdp
from .fpi_pac import FpiPac, PacConfig, StageDataset, d_bound
from .fpi_regret import FpiRegret, RegretConfig, level_constants
from .eluder import EluderConfig, EluderFpi, FiniteFunctionClass
from .harness import RunConfig, compare_ablation, regret_slope, run, uniform_pac_counts
from .linalg import PrefixCovariance
from .records import EpisodeRecord, InvariantViolation

__version__ = "0.1.0"
