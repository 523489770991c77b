"""Goal-conditioned maximum-entropy IRL.

Soft value iteration produces a non-stationary policy, policy propagation
turns it into expected state visitation frequencies, and the difference to
the demonstrations' visitation counts is the log-likelihood gradient with
respect to the per-state rewards, chained through the reward model.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from app.core.exceptions import (
    ConfigurationError,
    DimensionMismatch,
    HorizonMismatch,
    InconsistentTrajectory,
    InstanceTooLarge,
    InvalidState,
    NonFiniteLoss,
    NonpositiveRewardViolated,
    UnreachableStart,
    ZeroProbabilityStep,
)
from app.models.grid import ACTIONS, GoalSpec, Mdp
from app.models.irl import PathDistribution, Policy, RewardModel, Svf, Trajectory
from app.models.schemas import TrainConfig

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**7


# --- reward model -------------------------------------------------------------

def _check_features(model: RewardModel, phi: np.ndarray) -> None:
    if phi.ndim != 2 or phi.shape[1] != model.n_features:
        raise DimensionMismatch(model.n_features, phi.shape[-1] if phi.ndim else 0)


def _mlp_parts(model: RewardModel) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    h, f = model.hidden, model.n_features
    theta = model.theta
    w1 = theta[: h * f].reshape(h, f)
    b1 = theta[h * f: h * f + h]
    w2 = theta[h * f + h: h * f + 2 * h]
    b2 = float(theta[-1])
    return w1, b1, w2, b2


def _raw_output(model: RewardModel, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    if model.kind == "linear":
        return phi @ model.theta, None
    w1, b1, w2, b2 = _mlp_parts(model)
    hidden = np.tanh(phi @ w1.T + b1)
    return hidden @ w2 + b2, hidden


def reward_field(model: RewardModel, phi: np.ndarray) -> np.ndarray:
    """
    Per-state reward r(s) = -softplus(g_theta(phi(s))).

    Args:
        model: Reward model
        phi: State feature matrix, one row per StateId (FeatureField.for_states)

    Returns:
        Reward vector, every entry finite and <= 0

    Raises:
        DimensionMismatch: Feature width differs from the model's
    """
    _check_features(model, phi)
    raw, _ = _raw_output(model, phi)
    reward = -np.logaddexp(0.0, raw)
    _check_reward(reward)
    return reward


def reward_jacobian(model: RewardModel, phi: np.ndarray) -> np.ndarray:
    """dr(s)/dtheta as an (S, P) matrix."""
    _check_features(model, phi)
    raw, hidden = _raw_output(model, phi)
    dr_draw = -expit(raw)
    if model.kind == "linear":
        return dr_draw[:, None] * phi
    w1, _, w2, _ = _mlp_parts(model)
    dhidden = w2[None, :] * (1.0 - hidden**2)  # draw/dpre, (S, H)
    d_w1 = (dhidden[:, :, None] * phi[:, None, :]).reshape(len(phi), -1)
    d_raw = np.concatenate([d_w1, dhidden, hidden, np.ones((len(phi), 1))], axis=1)
    return dr_draw[:, None] * d_raw


def reward_gradient(model: RewardModel, phi: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Sum over states of coefficients[s] * dr(s)/dtheta."""
    return reward_jacobian(model, phi).T @ coefficients


def initial_model(config: TrainConfig, n_features: int, rng: np.random.Generator) -> RewardModel:
    """Starting point of training: zeros for linear, small random weights for the MLP."""
    model = RewardModel.zeros(config.kind, n_features, config.hidden)
    if config.kind == "mlp":
        model = model.with_theta(rng.normal(0.0, config.init_scale, size=model.n_parameters))
    return model


def _check_reward(reward: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(reward) | (reward > 0.0))
    if bad.size:
        raise NonpositiveRewardViolated(int(bad[0]), float(reward[bad[0]]))


# --- planning -------------------------------------------------------------------

def _goal_state(goal: GoalSpec, mdp: Mdp) -> int:
    if not 0 <= goal.s_goal < mdp.n_states:
        raise InvalidState(f"Goal state {goal.s_goal} outside 0..{mdp.n_states - 1}")
    return goal.s_goal


def value_iteration(reward: np.ndarray, goal: GoalSpec, horizon: int, mdp: Mdp) -> Policy:
    """
    Goal-conditioned soft value iteration.

    Sweeps n = N..1: pin V^(n)(goal) to 0, Q^(n)(s, a) = r(s) + V^(n)(T(s, a)),
    V^(n-1)(s) = logsumexp_a Q^(n)(s, a), and pi^(n)(a|s) = exp(Q^(n) - V^(n-1)).
    -inf is carried as a real infinity; states whose log partition is -inf
    cannot reach the goal in the remaining steps and get a flagged uniform row.

    Args:
        reward: Per-state reward, finite and <= 0
        goal: Goal state
        horizon: Number of steps N
        mdp: The MDP

    Returns:
        Non-stationary Policy with V^(0..N) attached

    Raises:
        NonpositiveRewardViolated: Some r(s) > 0 or not finite
    """
    reward = np.asarray(reward, dtype=np.float64)
    _check_reward(reward)
    s_goal = _goal_state(goal, mdp)
    if horizon < 1:
        raise ConfigurationError(f"Horizon must be >= 1, got {horizon}")

    n_states, n_actions = mdp.n_states, mdp.n_actions
    values = np.full((horizon + 1, n_states), -np.inf)
    table = np.empty((horizon, n_states, n_actions))
    log_table = np.empty((horizon, n_states, n_actions))
    reachable = np.zeros((horizon, n_states), dtype=bool)
    uniform = 1.0 / n_actions

    v_next = np.full(n_states, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for n in range(horizon, 0, -1):
            v_next[s_goal] = 0.0
            values[n] = v_next
            q = reward[:, None] + v_next[mdp.transition]
            v_prev = logsumexp(q, axis=1)
            finite = np.isfinite(v_prev)
            log_pi = np.where(finite[:, None], q - v_prev[:, None], -np.inf)
            table[n - 1] = np.where(finite[:, None], np.exp(log_pi), uniform)
            log_table[n - 1] = log_pi
            reachable[n - 1] = finite
            v_next = v_prev
    v_next[s_goal] = 0.0
    values[0] = v_next

    return Policy(
        horizon=horizon,
        goal=s_goal,
        table=table,
        log_table=log_table,
        reachable=reachable,
        values=values,
    )


def uniform_policy(mdp: Mdp, horizon: int, goal: GoalSpec) -> Policy:
    """Every action with probability 1/|A| at every step; the random baseline."""
    n_states, n_actions = mdp.n_states, mdp.n_actions
    return Policy(
        horizon=horizon,
        goal=_goal_state(goal, mdp),
        table=np.full((horizon, n_states, n_actions), 1.0 / n_actions),
        log_table=np.full((horizon, n_states, n_actions), -np.log(n_actions)),
        reachable=np.ones((horizon, n_states), dtype=bool),
        values=np.zeros((horizon + 1, n_states)),
    )


def propagate_distribution(policy: Policy, initial: np.ndarray, goal: GoalSpec, mdp: Mdp) -> Svf:
    """
    Push a state distribution forward through the policy, absorbing at the goal.

    D^(n)(goal) is zeroed before each push, so mass that reaches the goal
    leaves the system. Propagation is linear in D^(1), which lets training
    propagate all demonstrations sharing a goal at once.

    Raises:
        UnreachableStart: Mass sits on a state that cannot reach the goal
    """
    s_goal = _goal_state(goal, mdp)
    horizon = policy.horizon
    n_states = mdp.n_states
    per_step = np.zeros((horizon + 1, n_states))
    mass = np.asarray(initial, dtype=np.float64).copy()

    for n in range(1, horizon + 1):
        mass[s_goal] = 0.0
        stranded = np.flatnonzero((mass > 0.0) & ~policy.reachable[n - 1])
        if stranded.size:
            raise UnreachableStart(int(stranded[0]), s_goal, horizon - n + 1)
        per_step[n - 1] = mass
        weighted = policy.table[n - 1] * mass[:, None]
        pushed = np.zeros(n_states)
        for action in range(mdp.n_actions):
            pushed += np.bincount(mdp.transition[:, action], weights=weighted[:, action], minlength=n_states)
        mass = pushed
    mass[s_goal] = 0.0
    per_step[horizon] = mass

    return Svf(per_step=per_step, cumulative=per_step[:horizon].sum(axis=0))


def policy_propagation(policy: Policy, s_init: int, goal: GoalSpec, horizon: int, mdp: Mdp) -> Svf:
    """
    Expected state visitation frequencies of a goal-conditioned policy.

    Raises:
        HorizonMismatch: Policy horizon differs from `horizon`
        InvalidState: s_init out of range
    """
    if policy.horizon != horizon:
        raise HorizonMismatch(policy.horizon, horizon)
    if not 0 <= s_init < mdp.n_states:
        raise InvalidState(f"Start state {s_init} outside 0..{mdp.n_states - 1}")
    initial = np.zeros(mdp.n_states)
    initial[s_init] = 1.0
    return propagate_distribution(policy, initial, goal, mdp)


# --- demonstrations ----------------------------------------------------------------

def check_trajectory(demo: Trajectory, mdp: Mdp) -> None:
    """Raise InconsistentTrajectory unless every step follows T."""
    for i, s in enumerate(demo.states):
        if not 0 <= s < mdp.n_states:
            raise InconsistentTrajectory(f"State id {s} outside the MDP", step=i)
    for i, (s, a) in enumerate(zip(demo.states, demo.actions)):
        if mdp.transition[s, int(a)] != demo.states[i + 1]:
            raise InconsistentTrajectory(f"Action {a.name} from state {s} does not lead to {demo.states[i + 1]}", step=i)


def absorbed_length(demo: Trajectory) -> int:
    """Number of moves until the demo first reaches its final state."""
    return demo.states.index(demo.end)


def demo_svf(demos: Iterable[Trajectory], mdp: Mdp, horizon: int) -> Svf:
    """
    Visitation counts of demonstrations, truncated at goal arrival.

    Each demo adds one unit per visited state per step before it first reaches
    its own final state; the goal itself is never counted, mirroring the
    absorption in policy propagation.

    Raises:
        InconsistentTrajectory: A demo breaks T or needs more than N moves
    """
    per_step = np.zeros((horizon + 1, mdp.n_states))
    for demo in demos:
        check_trajectory(demo, mdp)
        cut = absorbed_length(demo)
        if cut > horizon:
            raise InconsistentTrajectory(f"Demo needs {cut} moves but the horizon is {horizon}")
        for n, s in enumerate(demo.states[:cut]):
            per_step[n, s] += 1.0
    return Svf(per_step=per_step, cumulative=per_step[:horizon].sum(axis=0))


def path_log_likelihood(policy: Policy, demo: Trajectory) -> float:
    """
    Sum of log pi^(n)(a_n|s_n) over the demo's moves before goal arrival.

    Raises:
        ZeroProbabilityStep: A move has zero probability, with its index
    """
    cut = absorbed_length(demo) if demo.end == policy.goal else len(demo)
    if cut > policy.horizon:
        raise ZeroProbabilityStep(policy.horizon)
    total = 0.0
    for n in range(cut):
        step = policy.log_table[n, demo.states[n], int(demo.actions[n])]
        if not np.isfinite(step):
            raise ZeroProbabilityStep(n)
        total += step
    return float(total)


def log_likelihood(model: RewardModel, demo: Trajectory, mdp: Mdp, phi: np.ndarray, horizon: int) -> float:
    """
    Log-probability of a demonstration under the goal-conditioned MaxEnt policy.

    The demo's first state is s_init and its last state s_goal.
    """
    check_trajectory(demo, mdp)
    policy = value_iteration(reward_field(model, phi), GoalSpec(demo.end), horizon, mdp)
    return path_log_likelihood(policy, demo)


def irl_gradient(model: RewardModel, demo: Trajectory, mdp: Mdp, phi: np.ndarray, horizon: int) -> np.ndarray:
    """
    d log P(demo) / d theta.

    The per-state coefficient D_tau(s) - D_theta(s) is the gradient with respect
    to the reward values; it is chained through -softplus and any hidden layer.
    """
    reward = reward_field(model, phi)
    goal = GoalSpec(demo.end)
    policy = value_iteration(reward, goal, horizon, mdp)
    expected = policy_propagation(policy, demo.start, goal, horizon, mdp).cumulative
    observed = demo_svf([demo], mdp, horizon).cumulative
    return reward_gradient(model, phi, observed - expected)


def svf_difference(model: RewardModel, demos: Sequence[Trajectory], mdp: Mdp, phi: np.ndarray,
                   horizon: int) -> np.ndarray:
    """Sum over demos of D_tau - D_theta, one value iteration per distinct goal."""
    reward = reward_field(model, phi)
    by_goal: dict[int, list[Trajectory]] = defaultdict(list)
    for demo in demos:
        by_goal[demo.end].append(demo)

    difference = np.zeros(mdp.n_states)
    for s_goal in sorted(by_goal):
        group = by_goal[s_goal]
        goal = GoalSpec(s_goal)
        policy = value_iteration(reward, goal, horizon, mdp)
        starts = np.bincount([d.start for d in group], minlength=mdp.n_states).astype(np.float64)
        expected = propagate_distribution(policy, starts, goal, mdp).cumulative
        difference += demo_svf(group, mdp, horizon).cumulative - expected
    return difference


def batch_gradient(model: RewardModel, demos: Sequence[Trajectory], mdp: Mdp, phi: np.ndarray,
                   horizon: int) -> np.ndarray:
    """Mean of irl_gradient over a batch."""
    difference = svf_difference(model, demos, mdp, phi, horizon)
    return reward_gradient(model, phi, difference) / len(demos)


def mean_log_likelihood(model: RewardModel, demos: Sequence[Trajectory], mdp: Mdp, phi: np.ndarray,
                        horizon: int) -> float:
    """Average demo log-likelihood, sharing one policy per goal."""
    reward = reward_field(model, phi)
    policies: dict[int, Policy] = {}
    total = 0.0
    for demo in demos:
        if demo.end not in policies:
            policies[demo.end] = value_iteration(reward, GoalSpec(demo.end), horizon, mdp)
        total += path_log_likelihood(policies[demo.end], demo)
    return total / len(demos)


# --- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: RewardModel
    log_likelihoods: list[float] = field(default_factory=list)


def train(demos: Sequence[Trajectory], mdp: Mdp, phi: np.ndarray, config: TrainConfig) -> TrainResult:
    """
    Maximize the demonstrations' log-likelihood with plain SGD.

    Each epoch visits the demos in a seeded random order, ascends the batch-mean
    gradient, then records the mean log-likelihood over all demos.

    Raises:
        NonFiniteLoss: The log-likelihood became NaN or infinite
    """
    if not demos:
        raise ConfigurationError("Training needs at least one demonstration")
    for demo in demos:
        check_trajectory(demo, mdp)

    rng = np.random.default_rng(config.seed)
    model = initial_model(config, phi.shape[1], rng)
    curve: list[float] = []
    logger.info(
        "Starting training",
        extra={"demos": len(demos), "kind": config.kind, "epochs": config.epochs, "batch": config.batch},
    )

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(demos))
        for start in range(0, len(demos), config.batch):
            batch = [demos[i] for i in order[start:start + config.batch]]
            step = batch_gradient(model, batch, mdp, phi, config.horizon)
            model = model.with_theta(model.theta + config.learning_rate * step)
        try:
            value = mean_log_likelihood(model, demos, mdp, phi, config.horizon)
        except ZeroProbabilityStep as exc:
            raise NonFiniteLoss(epoch) from exc
        if not np.isfinite(value) or not np.all(np.isfinite(model.theta)):
            raise NonFiniteLoss(epoch)
        curve.append(value)
        logger.info("Epoch finished", extra={"epoch": epoch, "mean_log_likelihood": value})

    return TrainResult(model=model, log_likelihoods=curve)


# --- exhaustive oracle ------------------------------------------------------------------

def enumerate_paths(reward: np.ndarray, s_init: int, goal: GoalSpec, horizon: int, mdp: Mdp,
                    limit: int = ENUMERATION_LIMIT) -> PathDistribution:
    """
    Exact MaxEnt distribution over goal-absorbed paths of at most N moves.

    Every distinct action prefix that first reaches the goal within N moves
    weighs exp(sum of r over the states before the goal); prefixes that never
    arrive weigh nothing. State paths aggregate the prefixes that trace them.

    Raises:
        InstanceTooLarge: |A|^N exceeds `limit`
    """
    reward = np.asarray(reward, dtype=np.float64)
    if not np.all(np.isfinite(reward)):
        raise NonpositiveRewardViolated(int(np.flatnonzero(~np.isfinite(reward))[0]), float("nan"))
    sequences = mdp.n_actions ** horizon
    if sequences > limit:
        raise InstanceTooLarge(sequences, limit)
    s_goal = _goal_state(goal, mdp)

    log_weights: dict[tuple, float] = {}
    state_paths: dict[tuple, tuple[int, ...]] = {}
    if s_init == s_goal:
        log_weights[()] = 0.0
        state_paths[()] = (s_init,)
    else:
        stack: list[tuple[int, tuple, tuple[int, ...], float]] = [(s_init, (), (s_init,), 0.0)]
        while stack:
            state, prefix, states, log_w = stack.pop()
            if len(prefix) >= horizon:
                continue
            for action in ACTIONS:
                nxt = int(mdp.transition[state, action])
                weight = log_w + reward[state]
                if nxt == s_goal:
                    log_weights[prefix + (action,)] = weight
                    state_paths[prefix + (action,)] = states + (nxt,)
                else:
                    stack.append((nxt, prefix + (action,), states + (nxt,), weight))

    if not log_weights:
        return PathDistribution()
    keys = sorted(log_weights)
    log_z = float(logsumexp([log_weights[k] for k in keys]))
    by_actions = {k: float(np.exp(log_weights[k] - log_z)) for k in keys}
    by_states: dict[tuple[int, ...], float] = defaultdict(float)
    for key in keys:
        by_states[state_paths[key]] += by_actions[key]
    return PathDistribution(by_actions=by_actions, by_states=dict(by_states), log_partition=log_z)
