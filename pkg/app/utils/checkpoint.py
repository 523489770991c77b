"""Flat text checkpoints for reward models.

    <kind>
    <F> | <F> <H>
    theta[0]
    ...

Values are written with 17 significant digits, so a load restores theta exactly.
"""

from pathlib import Path

from app.core.exceptions import MalformedCheckpoint
from app.models.irl import RewardModel


def format_checkpoint(model: RewardModel) -> str:
    dims = str(model.n_features) if model.kind == "linear" else f"{model.n_features} {model.hidden}"
    lines = [model.kind, dims] + [format(float(v), ".17g") for v in model.theta]
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str) -> RewardModel:
    """Raises MalformedCheckpoint on any deviation from the format."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise MalformedCheckpoint("Checkpoint needs a kind line and a dimensions line")

    kind, dims = lines[0], lines[1].split(" ")
    try:
        if kind == "linear" and len(dims) == 1:
            n_features, hidden = int(dims[0]), 0
        elif kind == "mlp" and len(dims) == 2:
            n_features, hidden = int(dims[0]), int(dims[1])
        else:
            raise MalformedCheckpoint(f"Bad kind/dimensions header {lines[0]!r} / {lines[1]!r}")
        theta = [float(v) for v in lines[2:]]
    except ValueError as exc:
        raise MalformedCheckpoint(f"Bad number in checkpoint: {exc}")

    try:
        return RewardModel(kind, n_features, theta, hidden)
    except ValueError as exc:
        raise MalformedCheckpoint(str(exc))


def load_checkpoint(path: str | Path) -> RewardModel:
    return parse_checkpoint(Path(path).read_text(encoding="utf-8"))
