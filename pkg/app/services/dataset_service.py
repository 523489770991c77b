"""Synthetic demonstration datasets drawn from a ground-truth reward."""

import logging
from typing import Optional

import numpy as np

from app.core.exceptions import GenerationStalled
from app.models.grid import GoalSpec, GridMap, Mdp
from app.models.irl import Policy, RewardModel, Trajectory
from app.services.forecast_service import sample_paths
from app.services.gridmap_service import goal_candidates
from app.services.irl_service import reward_field, value_iteration

logger = logging.getLogger(__name__)


def gen_demos(
    grid: GridMap,
    mdp: Mdp,
    phi: np.ndarray,
    model: RewardModel,
    count: int,
    seed: int,
    horizon: int = 64,
    min_length: int = 10,
    max_length: Optional[int] = None,
    max_attempts: Optional[int] = None,
) -> list[Trajectory]:
    """
    Sample demonstrations from the MaxEnt policy of a ground-truth reward.

    Goals are drawn uniformly over zones and starts uniformly over free cells.
    A candidate is rejected when it starts on its goal, has fewer than
    `min_length` cells, or has more than `max_length` when one is given.

    Raises:
        GenerationStalled: Fewer than `count` demos after `max_attempts` draws
    """
    goals = goal_candidates(grid)
    reward = reward_field(model, phi)
    rng = np.random.default_rng(seed)
    limit = max_attempts if max_attempts is not None else 100 * count + 1000
    policies: dict[int, Policy] = {}
    demos: list[Trajectory] = []
    attempts = 0

    while len(demos) < count:
        if attempts >= limit:
            raise GenerationStalled(len(demos), attempts)
        attempts += 1
        zone_id, anchor = goals[int(rng.integers(len(goals)))]
        s_goal = int(mdp.state_index[anchor])
        s_init = int(rng.integers(mdp.n_states))
        if s_init == s_goal:
            continue
        if zone_id not in policies:
            policies[zone_id] = value_iteration(reward, GoalSpec(s_goal), horizon, mdp)
        policy = policies[zone_id]
        if not policy.reachable[0, s_init]:
            continue

        (path,) = sample_paths(policy, s_init, GoalSpec(s_goal), 1, rng, mdp)
        cells = len(path.states)
        if cells < min_length or (max_length is not None and cells > max_length):
            continue
        demos.append(Trajectory(path.states, path.actions, goal_zone=zone_id, traj_id=f"d{len(demos):05d}"))

    logger.info("Generated demonstrations", extra={"count": count, "attempts": attempts, "seed": seed})
    return demos
