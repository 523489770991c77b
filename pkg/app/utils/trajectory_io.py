"""Reading and writing trajectory files.

One trajectory per line, comma separated, `\\n` line endings:

    traj_id,goal_zone,row,col,action,row,col,action,...,row,col,-

`goal_zone` is a zone id or `-`; actions are the letters U, D, L, R and the
final state carries `-`.
"""

import csv
import io
from pathlib import Path
from typing import Iterable

from app.core.exceptions import InconsistentTrajectory, MalformedTrajectoryFile
from app.models.grid import Action, Mdp
from app.models.irl import Trajectory

NO_VALUE = "-"


def format_trajectories(trajectories: Iterable[Trajectory], mdp: Mdp) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for traj in trajectories:
        row: list[str] = [traj.traj_id, NO_VALUE if traj.goal_zone is None else str(traj.goal_zone)]
        for s, action in traj.steps:
            r, c = mdp.cells[s]
            row += [str(int(r)), str(int(c)), NO_VALUE if action is None else action.letter]
        writer.writerow(row)
    return buffer.getvalue()


def parse_trajectories(text: str, mdp: Mdp) -> list[Trajectory]:
    """
    Parse trajectory file contents.

    Raises:
        MalformedTrajectoryFile: Bad field count, number, action letter or cell
        InconsistentTrajectory: A move does not follow the transition table
    """
    trajectories = []
    for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        trajectories.append(_parse_row(row, line_no, mdp))
    return trajectories


def _parse_row(row: list[str], line_no: int, mdp: Mdp) -> Trajectory:
    if len(row) < 5 or (len(row) - 2) % 3 != 0:
        raise MalformedTrajectoryFile(f"Expected id, goal and (row, col, action) triples, got {len(row)} fields", line_no)
    traj_id, goal_field = row[0], row[1]
    try:
        goal_zone = None if goal_field == NO_VALUE else int(goal_field)
    except ValueError:
        raise MalformedTrajectoryFile(f"Bad goal zone {goal_field!r}", line_no)

    states: list[int] = []
    actions: list[Action] = []
    height, width = mdp.state_index.shape
    triples = [row[i:i + 3] for i in range(2, len(row), 3)]
    for i, (r_text, c_text, letter) in enumerate(triples):
        try:
            r, c = int(r_text), int(c_text)
        except ValueError:
            raise MalformedTrajectoryFile(f"Bad cell ({r_text}, {c_text})", line_no)
        if not (0 <= r < height and 0 <= c < width) or mdp.state_index[r, c] < 0:
            raise MalformedTrajectoryFile(f"Cell ({r}, {c}) is not a free cell", line_no)
        states.append(int(mdp.state_index[r, c]))

        last = i == len(triples) - 1
        if last != (letter == NO_VALUE):
            raise MalformedTrajectoryFile("Only the final state has no action", line_no)
        if not last:
            try:
                actions.append(Action.from_letter(letter))
            except ValueError:
                raise MalformedTrajectoryFile(f"Bad action {letter!r}", line_no)

    for i, action in enumerate(actions):
        if mdp.transition[states[i], action] != states[i + 1]:
            raise InconsistentTrajectory(f"Trajectory {traj_id!r} breaks the transition table", step=i)
    return Trajectory(states=tuple(states), actions=tuple(actions), goal_zone=goal_zone, traj_id=traj_id)


def read_trajectories(path: str | Path, mdp: Mdp) -> list[Trajectory]:
    return parse_trajectories(Path(path).read_text(encoding="utf-8"), mdp)
