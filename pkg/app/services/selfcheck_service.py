"""Numerical self-checks of the IRL core on tiny built-in instances."""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from app.models.grid import GoalSpec, GridMap, Mdp
from app.models.irl import RewardModel, Trajectory
from app.services.forecast_service import sample_paths
from app.services.gridmap_service import features, parse_map
from app.services.irl_service import (
    enumerate_paths,
    irl_gradient,
    log_likelihood,
    policy_propagation,
    reward_field,
    value_iteration,
)
from app.services.mdp_service import build_mdp

logger = logging.getLogger(__name__)

GradientFn = Callable[[RewardModel, Trajectory, Mdp, np.ndarray, int], np.ndarray]

ROOM_3X3 = "#####\n#AAA#\n#AAA#\n#AAA#\n#####\n\nA=room,1,1\n"
ROOM_5X5 = (
    "#######\n#AAAAA#\n#AAAAA#\n#AADBB#\n#BBBBB#\n#BBBBB#\n#######\n\n"
    "A=study,1,1\nB=hall,5,5\nD=B,3,3\n"
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SelfCheckReport:
    results: list[CheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def format(self) -> str:
        lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in self.results]
        lines.append(f"{'ok' if self.passed else 'failed'} in {self.seconds:.2f}s")
        return "\n".join(lines) + "\n"


def _instance(text: str) -> tuple[GridMap, Mdp, np.ndarray]:
    grid = parse_map(text)
    mdp = build_mdp(grid)
    return grid, mdp, features(grid).for_states(mdp)


def path_probability(policy, s_init: int, actions, mdp: Mdp) -> float:
    """Probability of an action prefix under a non-stationary policy."""
    s, p = s_init, 1.0
    for n, a in enumerate(actions):
        p *= policy.table[n, s, int(a)]
        s = int(mdp.transition[s, int(a)])
    return p


def check_enumeration(instances: int, rng: np.random.Generator) -> CheckResult:
    """Policy path probabilities against exhaustive enumeration."""
    _, mdp, _ = _instance(ROOM_3X3)
    worst = 0.0
    for _ in range(instances):
        reward = -rng.exponential(1.0, size=mdp.n_states)
        horizon = int(rng.integers(1, 7))
        s_init, s_goal = (int(v) for v in rng.integers(mdp.n_states, size=2))
        policy = value_iteration(reward, GoalSpec(s_goal), horizon, mdp)
        exact = enumerate_paths(reward, s_init, GoalSpec(s_goal), horizon, mdp)
        if not exact.by_actions:
            if s_init != s_goal and np.isfinite(policy.values[0][s_init]):
                return CheckResult("enumeration", False, f"policy reaches goal {s_goal} that enumeration cannot")
            continue
        for actions, p in exact.by_actions.items():
            worst = max(worst, abs(path_probability(policy, s_init, actions, mdp) - p))
        if s_init != s_goal:
            worst = max(worst, abs(exact.log_partition - policy.values[0][s_init]))
    return CheckResult("enumeration", worst <= 1e-9, f"max abs error {worst:.2e} over {instances} instances")


def _demo(mdp: Mdp, phi: np.ndarray, rng: np.random.Generator, horizon: int) -> Trajectory:
    truth = RewardModel("linear", phi.shape[1], rng.normal(0.0, 1.0, size=phi.shape[1]))
    while True:
        s_init, s_goal = (int(v) for v in rng.integers(mdp.n_states, size=2))
        if s_init == s_goal:
            continue
        policy = value_iteration(reward_field(truth, phi), GoalSpec(s_goal), horizon, mdp)
        if policy.reachable[0, s_init]:
            return sample_paths(policy, s_init, GoalSpec(s_goal), 1, rng, mdp)[0]


def check_gradient(instances: int, rng: np.random.Generator, gradient_fn: GradientFn = irl_gradient) -> CheckResult:
    """Analytic log-likelihood gradient against central finite differences."""
    _, mdp, phi = _instance(ROOM_5X5)
    horizon, eps = 12, 1e-6
    worst = 0.0
    for _ in range(instances):
        demo = _demo(mdp, phi, rng, horizon)
        model = RewardModel("linear", phi.shape[1], rng.normal(0.0, 0.5, size=phi.shape[1]))
        analytic = gradient_fn(model, demo, mdp, phi, horizon)
        numeric = np.empty(model.n_parameters)
        for i in range(model.n_parameters):
            step = np.zeros(model.n_parameters)
            step[i] = eps
            up = log_likelihood(model.with_theta(model.theta + step), demo, mdp, phi, horizon)
            down = log_likelihood(model.with_theta(model.theta - step), demo, mdp, phi, horizon)
            numeric[i] = (up - down) / (2 * eps)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return CheckResult("gradient", worst <= 1e-4, f"max relative error {worst:.2e} over {instances} demos")


def check_properties(instances: int, rng: np.random.Generator) -> CheckResult:
    """Row-stochastic policies, pinned goal values, shrinking mass, nonpositive rewards."""
    _, mdp, phi = _instance(ROOM_5X5)
    for _ in range(instances):
        model = RewardModel("linear", phi.shape[1], rng.normal(0.0, 2.0, size=phi.shape[1]))
        reward = reward_field(model, phi)
        if np.any(reward > 0):
            return CheckResult("properties", False, "positive reward")
        horizon = int(rng.integers(1, 16))
        s_goal = int(rng.integers(mdp.n_states))
        policy = value_iteration(reward, GoalSpec(s_goal), horizon, mdp)
        rows = policy.table.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            return CheckResult("properties", False, "policy row does not sum to one")
        if np.any(policy.values[:, s_goal] != 0.0):
            return CheckResult("properties", False, "goal value not pinned to zero")
        starts = np.flatnonzero(policy.reachable[0])
        s_init = int(rng.choice(starts))
        svf = policy_propagation(policy, s_init, GoalSpec(s_goal), horizon, mdp)
        mass = svf.per_step.sum(axis=1)
        if np.any(np.diff(mass) > 1e-12) or not -1e-12 <= svf.absorbed_mass <= 1.0 + 1e-12:
            return CheckResult("properties", False, "visitation mass grows")
    return CheckResult("properties", True, f"{instances} instances")


def run_selfcheck(quick: bool = False, seed: int = 7, gradient_fn: GradientFn = irl_gradient) -> SelfCheckReport:
    """
    Run all checks.

    Args:
        quick: Fewer instances per check
        seed: Seed of the random instances
        gradient_fn: Gradient under test; replaceable for mutation testing

    Returns:
        SelfCheckReport; `passed` is False if any check failed
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    counts = (5, 5, 20) if quick else (20, 100, 100)
    report = SelfCheckReport(results=[
        check_enumeration(counts[0], rng),
        check_gradient(counts[1], rng, gradient_fn),
        check_properties(counts[2], rng),
    ])
    report.seconds = time.perf_counter() - started
    for result in report.results:
        logger.info("Self-check finished", extra={"check": result.name, "passed": result.passed, "detail": result.detail})
    return report
