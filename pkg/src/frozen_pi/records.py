"""Per-episode records shared by all agents."""

from __future__ import annotations

from dataclasses import dataclass, field


class InvariantViolation(RuntimeError):
    """An algorithmic invariant that should hold by construction did not."""


@dataclass
class EpisodeRecord:
    t: int  # 1-based episode index
    initial_state: object
    states: list
    actions: list
    rewards: list
    explored: list
    h_t: int | None = None  # 0-based stage of the last exploratory step
    mutation: tuple | None = None  # dataset key that grew, if any
    levels: list | None = None  # per-step accuracy level (level-based agents)
    dataset_sizes: dict = field(default_factory=dict)
    gap: float | None = None  # oracle suboptimality, filled in by the harness
    wall_time: float = 0.0

    @property
    def ret(self) -> float:
        return float(sum(self.rewards))
