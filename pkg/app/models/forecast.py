"""Domain records for trajectory forecasting."""

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ObservedHistory:
    """Cells a tracked person was seen in, oldest first, with their ticks."""

    cells: tuple[int, ...]
    ticks: tuple[int, ...]
    person: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.cells:
            raise ValueError("an observed history needs at least one cell")
        if len(self.cells) != len(self.ticks):
            raise ValueError("cells and ticks must have equal length")

    @property
    def last(self) -> int:
        return self.cells[-1]


@dataclass(frozen=True)
class GoalEstimate:
    zone_id: int
    s_goal: int
    weight: float


@dataclass(frozen=True)
class GoalPosterior:
    """Posterior over goal zones; weights sum to one."""

    entries: tuple[GoalEstimate, ...]

    def weight_of(self, zone_id: int) -> float:
        for entry in self.entries:
            if entry.zone_id == zone_id:
                return entry.weight
        return 0.0

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """K predicted paths of L (row, col) points, heaviest cluster first."""

    paths: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.paths.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def k(self) -> int:
        return int(self.paths.shape[0])

    @property
    def length(self) -> int:
        return int(self.paths.shape[1])

    @property
    def top(self) -> np.ndarray:
        return self.paths[0]


@dataclass(frozen=True)
class MetricRow:
    metric: str
    k: int
    value: float
