"""Domain records for the house grid and the MDP built over it."""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np


class CellClass(IntEnum):
    """Semantic class of a grid cell; the value is its one-hot slot."""

    FREE = 0
    WALL = 1
    DOOR = 2


class Action(IntEnum):
    """The four moves of the MDP; the value is the action column."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]

    @property
    def letter(self) -> str:
        return self.name[0]

    @classmethod
    def from_letter(cls, letter: str) -> "Action":
        for action in cls:
            if action.letter == letter:
                return action
        raise ValueError(f"unknown action letter {letter!r}")


_DELTAS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}

ACTIONS: tuple[Action, ...] = tuple(Action)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Zone:
    """A named part of the house; its anchor cell is the canonical goal."""

    id: int
    glyph: str
    name: str
    anchor_cell: tuple[int, int]


@dataclass(frozen=True)
class LegendEntry:
    """One `GLYPH=name,row,col` line, kept in file order for serialization."""

    glyph: str
    name: str
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class GridMap:
    """The house as a typed cell grid.

    `cells` holds CellClass values and `zone_of` zone ids (-1 on walls), both
    shaped (height, width). `rows` and `legend` are the file text the grid was
    parsed from and are what equality is defined on.
    """

    width: int
    height: int
    cell_size: float
    cells: np.ndarray
    zone_of: np.ndarray
    zones: tuple[Zone, ...]
    rows: tuple[str, ...]
    legend: tuple[LegendEntry, ...]
    trailing_newline: bool = True

    def __post_init__(self) -> None:
        _frozen(self.cells)
        _frozen(self.zone_of)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridMap):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.legend == other.legend
            and self.cell_size == other.cell_size
            and self.trailing_newline == other.trailing_newline
        )

    __hash__ = None  # type: ignore[assignment]

    def is_passable(self, row: int, col: int) -> bool:
        if not (0 <= row < self.height and 0 <= col < self.width):
            return False
        return self.cells[row, col] != CellClass.WALL

    def zone_by_name(self, name: str) -> Optional[Zone]:
        for zone in self.zones:
            if zone.name == name:
                return zone
        return None

    @property
    def free_cell_count(self) -> int:
        return int(np.count_nonzero(self.cells != CellClass.WALL))


@dataclass(frozen=True, eq=False)
class FeatureField:
    """Per-cell feature vectors, shape (height, width, F).

    Layout: class one-hot (3), wall distance (1), zone one-hot (Z), x, y.
    """

    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        _frozen(self.values)

    @property
    def dimension(self) -> int:
        return int(self.values.shape[-1])

    def for_states(self, mdp: "Mdp") -> np.ndarray:
        """Feature matrix with one row per StateId."""
        return self.values[mdp.cells[:, 0], mdp.cells[:, 1]]


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite-horizon MDP over the free cells of a map.

    StateIds are assigned row-major over free cells. `transition[s, a]` is the
    successor; blocked moves self-loop.
    """

    cells: np.ndarray
    state_index: np.ndarray
    transition: np.ndarray
    zone_of_state: np.ndarray
    horizon_default: int = 64
    actions: tuple[Action, ...] = ACTIONS

    def __post_init__(self) -> None:
        _frozen(self.cells)
        _frozen(self.state_index)
        _frozen(self.transition)
        _frozen(self.zone_of_state)

    @property
    def n_states(self) -> int:
        return int(self.cells.shape[0])

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class GoalSpec:
    """The goal state a plan is conditioned on."""

    s_goal: int
