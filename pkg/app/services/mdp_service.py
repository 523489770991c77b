"""Building the finite-horizon MDP over a map's free cells."""

import logging
from collections import deque

import numpy as np

from app.core.exceptions import InvalidState
from app.models.grid import ACTIONS, Action, CellClass, GridMap, Mdp

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 64


def build_mdp(grid: GridMap, horizon: int = DEFAULT_HORIZON) -> Mdp:
    """
    Build M = {S, A, T} over the free cells of a map.

    StateIds are assigned row-major over Free and Door cells. Moves into a
    wall or off the grid leave the state unchanged.

    Args:
        grid: Parsed map
        horizon: Default planning horizon N

    Returns:
        Mdp with a total, deterministic transition table
    """
    passable = grid.cells != CellClass.WALL
    cells = np.argwhere(passable)  # row-major order
    state_index = np.full((grid.height, grid.width), -1, dtype=np.int64)
    state_index[cells[:, 0], cells[:, 1]] = np.arange(len(cells))

    transition = np.empty((len(cells), len(ACTIONS)), dtype=np.int64)
    for action in ACTIONS:
        dr, dc = action.delta
        nr = cells[:, 0] + dr
        nc = cells[:, 1] + dc
        inside = (nr >= 0) & (nr < grid.height) & (nc >= 0) & (nc < grid.width)
        target = np.full(len(cells), -1, dtype=np.int64)
        target[inside] = state_index[nr[inside], nc[inside]]
        transition[:, action] = np.where(target >= 0, target, np.arange(len(cells)))

    mdp = Mdp(
        cells=cells,
        state_index=state_index,
        transition=transition,
        zone_of_state=grid.zone_of[cells[:, 0], cells[:, 1]].copy(),
        horizon_default=horizon,
    )
    logger.debug("Built MDP", extra={"states": mdp.n_states, "horizon": horizon})
    return mdp


def _check_state(mdp: Mdp, s: int) -> None:
    if not 0 <= s < mdp.n_states:
        raise InvalidState(f"State id {s} outside 0..{mdp.n_states - 1}")


def transition(mdp: Mdp, s: int, a: Action) -> int:
    """T(s, a); raises InvalidState for an out-of-range id."""
    _check_state(mdp, s)
    return int(mdp.transition[s, int(a)])


def state_of(mdp: Mdp, cell: tuple[int, int]) -> int:
    """StateId of a (row, col) cell."""
    r, c = cell
    height, width = mdp.state_index.shape
    if not (0 <= r < height and 0 <= c < width) or mdp.state_index[r, c] < 0:
        raise InvalidState(f"Cell {cell} is not a free cell")
    return int(mdp.state_index[r, c])


def cell_of(mdp: Mdp, s: int) -> tuple[int, int]:
    """(row, col) of a StateId."""
    _check_state(mdp, s)
    r, c = mdp.cells[s]
    return int(r), int(c)


def action_between(mdp: Mdp, s: int, s_next: int) -> Action:
    """The first action (in Up, Down, Left, Right order) taking s to s_next."""
    for action in ACTIONS:
        if mdp.transition[s, action] == s_next:
            return action
    raise InvalidState(f"State {s_next} is not one move away from {s}")


def shortest_path(mdp: Mdp, start: int, goal: int) -> list[int]:
    """
    Breadth-first shortest state path from start to goal, both included.

    Ties break by action order, so the result is deterministic.
    """
    _check_state(mdp, start)
    _check_state(mdp, goal)
    parent = {start: start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        if s == goal:
            break
        for action in ACTIONS:
            nxt = int(mdp.transition[s, action])
            if nxt not in parent:
                parent[nxt] = s
                queue.append(nxt)
    if goal not in parent:
        raise InvalidState(f"State {goal} is unreachable from {start}")
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]
