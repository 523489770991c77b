"""Multimodal path forecasting from a partial trajectory.

A forecast weighs each zone anchor as a goal by how well its goal-conditioned
policy explains the observed moves, spends a sample budget across goals in
proportion to those weights, resamples every sampled path to a fixed number
of points and clusters them with K-means. Each cluster is represented by its
medoid, so every forecast is a walkable path.
"""

import csv
import io
import logging
import warnings
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from app.core.config import Settings
from app.core.exceptions import LengthMismatch, NoGoals, TooFewSamples
from app.models.forecast import ForecastSet, GoalEstimate, GoalPosterior, MetricRow, ObservedHistory
from app.models.grid import Action, GoalSpec, GridMap, Mdp
from app.models.irl import Policy, RewardModel, Trajectory
from app.models.schemas import ForecastConfig
from app.services.irl_service import reward_field, uniform_policy, value_iteration
from app.services.mdp_service import action_between

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence, np.random.Generator]


# --- sampling ------------------------------------------------------------------

def sample_paths(policy: Policy, s_init: int, goal: GoalSpec, count: int, seed: Seed, mdp: Mdp) -> list[Trajectory]:
    """
    Draw `count` paths from a goal-conditioned policy.

    Every sample draws a_n ~ pi^(n)(.|s_n) and stops on reaching the goal or
    after N moves. All samples advance together, one step per iteration.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    horizon = policy.horizon
    states = np.empty((horizon + 1, count), dtype=np.int64)
    actions = np.empty((horizon, count), dtype=np.int64)
    lengths = np.zeros(count, dtype=np.int64)

    current = np.full(count, s_init, dtype=np.int64)
    states[0] = current
    active = current != goal.s_goal
    for n in range(horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cumulative = policy.table[n, current[idx]].cumsum(axis=1)
        draws = rng.random(idx.size) * cumulative[:, -1]
        chosen = np.minimum((draws[:, None] >= cumulative).sum(axis=1), mdp.n_actions - 1)
        current[idx] = mdp.transition[current[idx], chosen]
        actions[n, idx] = chosen
        states[n + 1, idx] = current[idx]
        lengths[idx] += 1
        active[idx] = current[idx] != goal.s_goal

    return [
        Trajectory(
            states=tuple(int(s) for s in states[: lengths[i] + 1, i]),
            actions=tuple(Action(int(a)) for a in actions[: lengths[i], i]),
        )
        for i in range(count)
    ]


def trajectory_points(traj: Trajectory, mdp: Mdp) -> np.ndarray:
    """(row, col) of every state of a trajectory."""
    return mdp.cells[list(traj.states)].astype(np.float64)


def resample_path(points: Sequence[Sequence[float]] | np.ndarray, length: int) -> np.ndarray:
    """
    Resample a polyline through cell centres to `length` points equally spaced
    by arc length. Endpoints are kept; a path that never moves repeats its
    single point.
    """
    if length < 2:
        raise ValueError("length must be >= 2")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    moved = np.ones(len(pts), dtype=bool)
    moved[1:] = np.any(np.diff(pts, axis=0) != 0.0, axis=1)
    pts = pts[moved]
    if len(pts) == 1:
        return np.repeat(pts, length, axis=0)

    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    targets = np.linspace(0.0, arc[-1], length)
    return np.column_stack([np.interp(targets, arc, pts[:, 0]), np.interp(targets, arc, pts[:, 1])])


# --- clustering ------------------------------------------------------------------

CENTRE_SHIFT = 1e-9


def kmeans_tolerance(flat: np.ndarray, shift: float = CENTRE_SHIFT) -> float:
    """
    `tol` for sklearn's KMeans that stops once the centres move less than
    `shift` in total.

    sklearn multiplies `tol` by the mean per-feature variance of the data and
    compares the result with the summed squared centre shift.
    """
    spread = float(np.mean(np.var(flat, axis=0)))
    return shift**2 / spread if spread > 0.0 else 0.0


def cluster_paths(samples: np.ndarray, weights: np.ndarray, k: int, seed: int) -> ForecastSet:
    """
    K-means over flattened resampled paths, one medoid per cluster.

    Args:
        samples: Resampled paths, shape (M, L, 2)
        weights: Per-sample mass
        k: Number of clusters
        seed: Seed of the k-means++ initialisation

    Returns:
        ForecastSet of K medoids, heaviest cluster first

    Raises:
        TooFewSamples: M < K
    """
    samples = np.asarray(samples, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(samples) < k:
        raise TooFewSamples(len(samples), k)
    flat = samples.reshape(len(samples), -1)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        kmeans = KMeans(
            n_clusters=k,
            init="k-means++",
            n_init=1,
            max_iter=100,
            tol=kmeans_tolerance(flat),
            random_state=seed,
            algorithm="lloyd",
        ).fit(flat, sample_weight=weights)

    labels = kmeans.labels_
    medoids = np.empty(k, dtype=np.int64)
    mass = np.zeros(k)
    for cluster, centre in enumerate(kmeans.cluster_centers_):
        members = np.flatnonzero(labels == cluster)
        candidates = members if members.size else np.arange(len(flat))
        distances = np.linalg.norm(flat[candidates] - centre, axis=1)
        medoids[cluster] = candidates[int(np.argmin(distances))]
        mass[cluster] = weights[members].sum()
    if np.unique(labels).size < k:
        logger.warning("Degenerate clustering", extra={"clusters": k, "distinct": int(np.unique(labels).size)})

    mass = mass / mass.sum()
    order = np.argsort(-mass, kind="stable")
    return ForecastSet(paths=samples[medoids[order]].copy(), weights=mass[order])


# --- metrics ---------------------------------------------------------------------

def _displacements(forecast: ForecastSet, truth: np.ndarray) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if forecast.length != len(truth):
        raise LengthMismatch(forecast.length, len(truth))
    return np.linalg.norm(forecast.paths - truth[None, :, :], axis=2)


def min_ade(forecast: ForecastSet, truth: np.ndarray) -> float:
    """Smallest mean point-wise Euclidean distance over the K paths, in cells."""
    return float(_displacements(forecast, truth).mean(axis=1).min())


def min_fde(forecast: ForecastSet, truth: np.ndarray) -> float:
    """Smallest final-point Euclidean distance over the K paths, in cells."""
    return float(_displacements(forecast, truth)[:, -1].min())


# --- goal inference and the full pipeline -------------------------------------------

def history_log_likelihood(policy: Policy, cells: Sequence[int], mdp: Mdp) -> float:
    """Log-probability of observed moves as policy steps 1..k; -inf if impossible."""
    total = 0.0
    for n in range(len(cells) - 1):
        if n >= policy.horizon:
            return float("-inf")
        action = action_between(mdp, cells[n], cells[n + 1])
        total += policy.log_table[n, cells[n], action]
        if not np.isfinite(total):
            return float("-inf")
    return float(total)


def collapse_repeats(cells: Sequence[int]) -> list[int]:
    """Drop consecutive duplicates; standing still is not a move."""
    collapsed: list[int] = []
    for cell in cells:
        if not collapsed or collapsed[-1] != cell:
            collapsed.append(int(cell))
    return collapsed


def sample_budgets(total: int, weights: np.ndarray) -> np.ndarray:
    """
    Split M samples across goals by weight, summing to exactly M.

    Each goal gets floor(M * w_g); the samples left over go one each to the
    largest fractional parts, equal parts in goal order.
    """
    weights = np.asarray(weights, dtype=np.float64)
    quotas = total * weights / weights.sum()
    budgets = np.floor(quotas).astype(np.int64)
    remainders = np.round(quotas - budgets, 12)
    order = np.lexsort((np.arange(len(weights)), -remainders))
    budgets[order[: total - int(budgets.sum())]] += 1
    return budgets


class Forecaster:
    """
    Forecasts paths for one reward model over one map.

    Goal-conditioned policies are computed on first use and cached per zone.
    """

    def __init__(
        self,
        grid: GridMap,
        mdp: Mdp,
        model: Optional[RewardModel],
        phi: Optional[np.ndarray],
        config: Optional[ForecastConfig] = None,
    ):
        self.grid = grid
        self.mdp = mdp
        self.config = config or ForecastConfig()
        self.horizon = self.config.horizon
        self._reward = reward_field(model, phi) if model is not None else None
        self._policies: dict[int, Policy] = {}
        self._anchors = {zone.id: int(mdp.state_index[zone.anchor_cell]) for zone in grid.zones}

    @property
    def goals(self) -> list[tuple[int, int]]:
        """(zone id, anchor StateId) pairs, zone ids ascending."""
        return sorted(self._anchors.items())

    def policy_for(self, zone_id: int) -> Policy:
        if zone_id not in self._policies:
            goal = GoalSpec(self._anchors[zone_id])
            self._policies[zone_id] = value_iteration(self._reward, goal, self.horizon, self.mdp)
        return self._policies[zone_id]

    def infer_goals(self, history: ObservedHistory) -> GoalPosterior:
        """
        Posterior over goal zones under a uniform prior.

        Raises:
            NoGoals: The map has no zones
        """
        goals = self.goals
        if not goals:
            raise NoGoals()
        cells = collapse_repeats(history.cells)
        scores = np.array([history_log_likelihood(self.policy_for(z), cells, self.mdp) for z, _ in goals])
        if np.all(np.isneginf(scores)):
            logger.warning("No goal explains the observed history; using the prior", extra={"moves": len(cells) - 1})
            weights = np.full(len(goals), 1.0 / len(goals))
        else:
            weights = np.exp(scores - logsumexp(scores))
        return GoalPosterior(
            tuple(GoalEstimate(zone_id=z, s_goal=s, weight=float(w)) for (z, s), w in zip(goals, weights))
        )

    def sample_points(self, history: ObservedHistory, posterior: GoalPosterior, samples: int,
                      seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Resampled sample paths from the last observed cell and their masses."""
        budgets = sample_budgets(samples, posterior.weights)
        children = np.random.SeedSequence(seed).spawn(len(posterior.entries))
        points: list[np.ndarray] = []
        masses: list[float] = []
        for entry, budget, child in zip(posterior.entries, budgets, children):
            if budget == 0:
                continue
            policy = self.policy_for(entry.zone_id)
            for path in sample_paths(policy, history.last, GoalSpec(entry.s_goal), int(budget), child, self.mdp):
                points.append(resample_path(trajectory_points(path, self.mdp), self.config.points))
                masses.append(entry.weight / budget)
        return np.stack(points), np.asarray(masses)

    def forecast(self, history: ObservedHistory, k: int, samples: Optional[int] = None,
                 seed: Optional[int] = None) -> tuple[ForecastSet, GoalPosterior]:
        """infer_goals, then sample, resample and cluster into K paths."""
        seed = self.config.seed if seed is None else seed
        posterior = self.infer_goals(history)
        points, masses = self.sample_points(history, posterior, samples or self.config.samples, seed)
        return cluster_paths(points, masses, k, seed), posterior


class UniformForecaster(Forecaster):
    """The same pipeline over uniform-random policies; the evaluation baseline."""

    def __init__(self, grid: GridMap, mdp: Mdp, config: Optional[ForecastConfig] = None):
        super().__init__(grid, mdp, None, None, config)

    def policy_for(self, zone_id: int) -> Policy:
        if zone_id not in self._policies:
            self._policies[zone_id] = uniform_policy(self.mdp, self.horizon, GoalSpec(self._anchors[zone_id]))
        return self._policies[zone_id]


def infer_goals(history: ObservedHistory, grid: GridMap, mdp: Mdp, model: RewardModel, phi: np.ndarray,
                horizon: int) -> GoalPosterior:
    """Goal posterior for one history, without keeping the policies around."""
    config = ForecastConfig(horizon=horizon)
    return Forecaster(grid, mdp, model, phi, config).infer_goals(history)


# --- evaluation ---------------------------------------------------------------------

def split_demo(traj: Trajectory, history_steps: int, length: int, mdp: Mdp) -> tuple[ObservedHistory, np.ndarray]:
    """
    Split a demonstration into an observed history and the resampled future.

    The history holds the first `history_steps` moves; the truth runs from the
    last observed cell to the demo's end.
    """
    observed = min(history_steps, len(traj))
    cells = traj.states[: observed + 1]
    history = ObservedHistory(cells=tuple(cells), ticks=tuple(range(len(cells))))
    future = mdp.cells[list(traj.states[observed:])].astype(np.float64)
    return history, resample_path(future, length)


def evaluate(pairs: Sequence[tuple[ObservedHistory, np.ndarray]], forecaster: Forecaster,
             k_values: Sequence[int], samples: int, seed: int) -> list[MetricRow]:
    """
    Mean MinADE_K and MinFDE_K over (history, truth) pairs.

    Each example is sampled once with its own seed; every K clusters the same
    samples. Rows follow `k_values` order, ADE before FDE.
    """
    ade = {k: [] for k in k_values}
    fde = {k: [] for k in k_values}
    for i, (history, truth) in enumerate(pairs):
        posterior = forecaster.infer_goals(history)
        points, masses = forecaster.sample_points(history, posterior, samples, seed + i)
        for k in k_values:
            forecast = cluster_paths(points, masses, k, seed + i)
            ade[k].append(min_ade(forecast, truth))
            fde[k].append(min_fde(forecast, truth))

    rows = []
    for k in k_values:
        rows.append(MetricRow("MinADE", k, float(np.mean(ade[k])) if ade[k] else 0.0))
        rows.append(MetricRow("MinFDE", k, float(np.mean(fde[k])) if fde[k] else 0.0))
    logger.info("Evaluated forecasts", extra={"examples": len(pairs), **{f"{r.metric}{r.k}": r.value for r in rows}})
    return rows


def write_metrics(rows: Sequence[MetricRow]) -> str:
    """The `metric,K,value` CSV."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric", "K", "value"])
    for row in rows:
        writer.writerow([row.metric, row.k, format(row.value, ".6f")])
    return buffer.getvalue()


def get_forecaster(settings: Settings, grid: GridMap, mdp: Mdp, model: Optional[RewardModel],
                   phi: Optional[np.ndarray], **overrides) -> Forecaster:
    """
    Factory function to create a forecaster from the application settings.

    Args:
        settings: Application settings; sampling, clustering and horizon defaults
        grid: House map whose zone anchors are the candidate goals
        mdp: Grid MDP of the map
        model: Reward model; None forecasts with uniform random walks
        phi: Feature field the model reads
        **overrides: ForecastConfig fields taking precedence over the settings

    Returns:
        Forecaster, or UniformForecaster when no model is given
    """
    config = ForecastConfig(**{
        "samples": settings.forecast_samples,
        "points": settings.resample_points,
        "k_values": list(settings.k_values),
        "seed": settings.default_seed,
        "horizon": settings.horizon,
        "history_steps": settings.history_steps,
        **overrides,
    })
    if model is None:
        return UniformForecaster(grid, mdp, config)
    return Forecaster(grid, mdp, model, phi, config)
