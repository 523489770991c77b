"""Domain records for reward learning: reward models, policies, SVFs, paths."""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from app.models.grid import Action

RewardKind = Literal["linear", "mlp"]


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Learnable nonpositive per-cell reward r(s) = -softplus(g_theta(f(s))).

    Linear: g(f) = f . theta with len(theta) == F.
    Mlp: g(f) = w2 . tanh(W1 f + b1) + b2, theta packs W1 (H x F, row-major),
    b1 (H), w2 (H), b2 (1).
    """

    kind: RewardKind
    n_features: int
    theta: np.ndarray
    hidden: int = 0

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=np.float64).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.n_parameters,):
            raise ValueError(
                f"{self.kind} model with F={self.n_features}, H={self.hidden} "
                f"needs {self.n_parameters} parameters, got {theta.shape}"
            )

    @property
    def n_parameters(self) -> int:
        if self.kind == "linear":
            return self.n_features
        return self.hidden * self.n_features + 2 * self.hidden + 1

    def with_theta(self, theta: np.ndarray) -> "RewardModel":
        return RewardModel(self.kind, self.n_features, theta, self.hidden)

    @classmethod
    def zeros(cls, kind: RewardKind, n_features: int, hidden: int = 16) -> "RewardModel":
        hidden = hidden if kind == "mlp" else 0
        size = n_features if kind == "linear" else hidden * n_features + 2 * hidden + 1
        return cls(kind, n_features, np.zeros(size), hidden)


@dataclass(frozen=True, eq=False)
class Policy:
    """Non-stationary goal-conditioned policy.

    `table[n - 1, s, a]` is pi^(n)(a|s) and `log_table` its logarithm (-inf for
    impossible actions). `reachable[n - 1, s]` is False where V is -inf; those
    rows are uniform. `values[k]` is V^(k) for k = 0..N.
    """

    horizon: int
    goal: int
    table: np.ndarray
    log_table: np.ndarray
    reachable: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        for array in (self.table, self.log_table, self.reachable, self.values):
            array.setflags(write=False)


@dataclass(frozen=True, eq=False)
class Svf:
    """State visitation frequencies.

    `per_step[n - 1]` is D^(n) for n = 1..N+1, goal entry zeroed;
    `cumulative` sums steps 1..N.
    """

    per_step: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self) -> None:
        self.per_step.setflags(write=False)
        self.cumulative.setflags(write=False)

    @property
    def absorbed_mass(self) -> float:
        return float(1.0 - self.per_step[-1].sum())


@dataclass(frozen=True)
class Trajectory:
    """A state sequence with the actions that connect it.

    `states` has one more entry than `actions`; states[i + 1] is
    T(states[i], actions[i]).
    """

    states: tuple[int, ...]
    actions: tuple[Action, ...]
    goal_zone: Optional[int] = None
    traj_id: str = ""

    def __post_init__(self) -> None:
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a trajectory needs exactly one more state than actions")

    @property
    def steps(self) -> list[tuple[int, Optional[Action]]]:
        """(state, action) pairs; the final state carries no action."""
        return [(s, a) for s, a in zip(self.states, self.actions)] + [(self.states[-1], None)]

    @property
    def start(self) -> int:
        return self.states[0]

    @property
    def end(self) -> int:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class PathDistribution:
    """Exact distribution over goal-absorbed paths from exhaustive enumeration."""

    by_actions: dict[tuple[Action, ...], float] = field(default_factory=dict)
    by_states: dict[tuple[int, ...], float] = field(default_factory=dict)
    log_partition: float = float("-inf")
