"""Tests for goal inference, sampling, clustering and the metrics."""

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import LengthMismatch, TooFewSamples
from app.models.forecast import ForecastSet, MetricRow, ObservedHistory
from app.models.grid import Action
from app.models.irl import RewardModel, Trajectory
from app.models.schemas import ForecastConfig
from app.services.forecast_service import (
    Forecaster,
    UniformForecaster,
    cluster_paths,
    collapse_repeats,
    evaluate,
    get_forecaster,
    infer_goals,
    kmeans_tolerance,
    min_ade,
    min_fde,
    resample_path,
    sample_budgets,
    split_demo,
    write_metrics,
)
from app.services.gridmap_service import features, parse_map
from app.services.mdp_service import build_mdp, shortest_path, state_of
from tests.conftest import BEDROOM1, KITCHEN, LIVING


CORRIDOR = "#######\n#AAAAA#\n#######\n\nA=hall,1,5\n"


def _best_two_partition(flat, weights):
    """Labels of the 2-partition with the least weighted within-group squared error."""
    best_cost, best_labels = np.inf, None
    for mask in range(1, 2 ** (len(flat) - 1)):
        labels = (mask >> np.arange(len(flat))) & 1
        cost = 0.0
        for group in (0, 1):
            members = labels == group
            centre = np.average(flat[members], axis=0, weights=weights[members])
            cost += float(weights[members] @ ((flat[members] - centre) ** 2).sum(axis=1))
        if cost < best_cost:
            best_cost, best_labels = cost, labels
    return best_labels


def _history(mdp, cells):
    states = tuple(state_of(mdp, c) for c in cells)
    return ObservedHistory(cells=states, ticks=tuple(range(len(states))))


@pytest.fixture
def forecaster(house_map, house_mdp, house_phi, ground_truth):
    return Forecaster(house_map, house_mdp, ground_truth, house_phi, ForecastConfig(samples=60, points=10))


class TestResamplePath:
    """Tests for resample_path."""

    def test_straight_line(self):
        """Points are equally spaced along the polyline, endpoints kept."""
        out = resample_path([(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)], 3)
        assert np.allclose(out, [(0, 0), (0, 2), (0, 4)])

    def test_corner(self):
        """Spacing follows arc length around corners."""
        out = resample_path([(0, 0), (0, 2), (2, 2)], 5)
        assert np.allclose(out, [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2)])

    def test_standing_still(self):
        """A path that never moves repeats its point."""
        out = resample_path([(3, 4), (3, 4)], 4)
        assert out.shape == (4, 2)
        assert np.all(out == (3, 4))

    def test_length_too_small(self):
        """At least two points are needed."""
        with pytest.raises(ValueError):
            resample_path([(0, 0), (0, 1)], 1)


class TestClusterPaths:
    """Tests for cluster_paths."""

    def _two_groups(self):
        rng = np.random.default_rng(0)
        left = np.stack([np.column_stack([np.zeros(5), -np.arange(5.0)]) for _ in range(6)])
        right = np.stack([np.column_stack([np.zeros(5), np.arange(5.0)]) for _ in range(3)])
        samples = np.concatenate([left, right]) + rng.normal(0.0, 0.01, size=(9, 5, 2))
        return samples, np.full(9, 1.0 / 9)

    def test_heaviest_cluster_first(self):
        """Weights are cluster masses, sorted descending."""
        samples, weights = self._two_groups()
        forecast = cluster_paths(samples, weights, 2, seed=1)
        assert forecast.weights == pytest.approx([6 / 9, 3 / 9])
        assert forecast.top[-1, 1] < 0

    def test_medoids_are_samples(self):
        """Each output path is one of the inputs."""
        samples, weights = self._two_groups()
        forecast = cluster_paths(samples, weights, 2, seed=1)
        for path in forecast.paths:
            assert any(np.array_equal(path, s) for s in samples)

    def test_sample_weights_decide_order(self):
        """Mass, not count, ranks the clusters."""
        samples, _ = self._two_groups()
        weights = np.array([0.02] * 6 + [0.88 / 3] * 3)
        forecast = cluster_paths(samples, weights, 2, seed=1)
        assert forecast.top[-1, 1] > 0
        assert forecast.weights.sum() == pytest.approx(1.0)

    def test_matches_the_best_partition(self):
        """Two bundles of twelve samples give the medoids and masses of the optimal split."""
        rng = np.random.default_rng(4)
        base = np.column_stack([np.zeros(5), np.arange(5.0)])
        samples = np.concatenate([
            np.stack([base] * 5) + (6.0, 0.0),
            np.stack([base] * 7),
        ]) + rng.normal(0.0, 0.3, size=(12, 5, 2))
        weights = rng.uniform(0.5, 1.5, size=12)
        flat = samples.reshape(12, -1)

        labels = _best_two_partition(flat, weights)
        expected = {}
        for group in (0, 1):
            members = np.flatnonzero(labels == group)
            centre = np.average(flat[members], axis=0, weights=weights[members])
            medoid = int(members[np.argmin(np.linalg.norm(flat[members] - centre, axis=1))])
            expected[medoid] = weights[members].sum() / weights.sum()

        forecast = cluster_paths(samples, weights, 2, seed=3)
        found = {}
        for path, mass in zip(forecast.paths, forecast.weights):
            (index,) = [i for i in range(12) if np.array_equal(samples[i], path)]
            found[index] = mass
        assert set(found) == set(expected)
        for index, mass in expected.items():
            assert found[index] == pytest.approx(mass)

    def test_tolerance_is_an_absolute_centre_shift(self, rng):
        """sklearn's variance-scaled tol works out to a 1e-9 centre movement."""
        flat = rng.normal(0.0, 4.0, size=(30, 10))
        assert kmeans_tolerance(flat) * np.mean(np.var(flat, axis=0)) == pytest.approx(1e-18)
        assert kmeans_tolerance(np.ones((5, 4))) == 0.0

    def test_too_few_samples(self):
        """K may not exceed M."""
        samples, weights = self._two_groups()
        with pytest.raises(TooFewSamples):
            cluster_paths(samples, weights, 10, seed=1)

    def test_identical_samples(self):
        """Duplicate samples still give K paths."""
        samples = np.zeros((4, 3, 2))
        forecast = cluster_paths(samples, np.full(4, 0.25), 2, seed=1)
        assert forecast.k == 2
        assert forecast.weights.sum() == pytest.approx(1.0)


class TestMetrics:
    """Tests for MinADE and MinFDE."""

    def test_best_of_k(self):
        """The closest path counts."""
        truth = np.array([(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)])
        paths = np.stack([truth + (3.0, 0.0), truth + (0.0, 1.0)])
        forecast = ForecastSet(paths=paths, weights=np.array([0.5, 0.5]))
        assert min_ade(forecast, truth) == pytest.approx(1.0)
        assert min_fde(forecast, truth) == pytest.approx(1.0)

    def test_fde_uses_last_point(self):
        """FDE ignores everything but the endpoint."""
        truth = np.array([(0.0, 0.0), (0.0, 4.0)])
        paths = np.array([[(5.0, 5.0), (0.0, 4.0)]])
        forecast = ForecastSet(paths=paths, weights=np.array([1.0]))
        assert min_fde(forecast, truth) == 0.0
        assert min_ade(forecast, truth) == pytest.approx(np.hypot(5.0, 5.0) / 2)

    def test_exact_prediction(self):
        truth = np.array([(1.0, 1.0), (1.0, 2.0), (2.0, 2.0)])
        forecast = ForecastSet(paths=truth[None].copy(), weights=np.array([1.0]))
        assert min_ade(forecast, truth) == 0.0
        assert min_fde(forecast, truth) == 0.0

    def test_constant_offset(self):
        """A path shifted by (3, 4) is off by 5 everywhere."""
        truth = np.array([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])
        forecast = ForecastSet(paths=(truth + (3.0, 4.0))[None], weights=np.array([1.0]))
        assert min_ade(forecast, truth) == 5.0
        assert min_fde(forecast, truth) == 5.0

    def test_non_increasing_in_k(self):
        """Adding paths never makes the best one worse."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            paths = rng.normal(0.0, 5.0, size=(8, 6, 2))
            truth = rng.normal(0.0, 5.0, size=(6, 2))
            ade = [min_ade(ForecastSet(paths=paths[:k].copy(), weights=np.full(k, 1.0 / k)), truth)
                   for k in range(1, 9)]
            assert all(b <= a for a, b in zip(ade, ade[1:]))

    def test_length_mismatch(self):
        """Truth and forecast need the same number of points."""
        forecast = ForecastSet(paths=np.zeros((1, 3, 2)), weights=np.array([1.0]))
        with pytest.raises(LengthMismatch):
            min_ade(forecast, np.zeros((4, 2)))


class TestGoalInference:
    """Tests for the goal posterior."""

    def test_heading_into_the_kitchen(self, house_map, house_mdp, house_phi, ground_truth):
        """Walking through the kitchen door makes the kitchen most likely."""
        history = _history(house_mdp, [(13, 9), (13, 10), (13, 11), (13, 12)])
        posterior = infer_goals(history, house_map, house_mdp, ground_truth, house_phi, 64)
        assert [e.zone_id for e in posterior.entries] == [0, 1, 2, 3]
        assert posterior.weights.sum() == pytest.approx(1.0)
        assert int(np.argmax(posterior.weights)) == KITCHEN
        assert posterior.weight_of(KITCHEN) > posterior.weight_of(BEDROOM1)

    def test_standing_still_is_ignored(self, forecaster, house_mdp):
        """Repeated cells do not change the posterior."""
        moving = _history(house_mdp, [(13, 9), (13, 10)])
        pausing = _history(house_mdp, [(13, 9), (13, 9), (13, 10), (13, 10)])
        assert np.allclose(forecaster.infer_goals(moving).weights, forecaster.infer_goals(pausing).weights)

    def test_single_cell_history_gives_the_prior(self, forecaster, house_mdp):
        """No moves, no evidence."""
        posterior = forecaster.infer_goals(_history(house_mdp, [(13, 9)]))
        assert np.allclose(posterior.weights, 0.25)

    def test_impossible_history_falls_back_to_prior(self, house_map, house_mdp, house_phi, ground_truth):
        """If no goal explains the moves the posterior is uniform."""
        forecaster = Forecaster(house_map, house_mdp, ground_truth, house_phi, ForecastConfig(horizon=2))
        history = _history(house_mdp, [(9, 1), (10, 1), (11, 1)])
        assert np.allclose(forecaster.infer_goals(history).weights, 0.25)

    def test_collapse_repeats(self):
        """Only consecutive duplicates go."""
        assert collapse_repeats([1, 1, 2, 2, 1, 3]) == [1, 2, 1, 3]


class TestSampleBudgets:
    """Tests for sample_budgets."""

    def test_sums_to_total(self):
        """Leftover samples go to the largest fractional parts."""
        budgets = sample_budgets(10, np.array([1 / 3, 1 / 3, 1 / 3]))
        assert budgets.sum() == 10
        assert list(budgets) == [4, 3, 3]

    def test_ties_go_to_the_earlier_goal(self):
        """Equal fractional parts are settled in goal order."""
        assert list(sample_budgets(3, np.array([0.5, 0.5]))) == [2, 1]
        assert list(sample_budgets(2, np.array([0.25] * 4))) == [1, 1, 0, 0]

    def test_never_exceeds_the_total(self, rng):
        """Budgets add up to M for any weights."""
        for _ in range(200):
            weights = rng.dirichlet(np.full(int(rng.integers(1, 6)), 0.5))
            total = int(rng.integers(1, 50))
            budgets = sample_budgets(total, weights)
            assert budgets.sum() == total
            assert np.all(budgets >= 0)
            assert np.all(np.abs(budgets - total * weights) < 1.0)

    def test_zero_weight_goal_gets_nothing(self):
        """Goals with no weight are not sampled."""
        assert list(sample_budgets(20, np.array([0.0, 1.0]))) == [0, 20]


class TestForecaster:
    """Tests for the full forecast pipeline."""

    def test_shapes_and_weights(self, forecaster, house_mdp):
        """K paths of L points starting at the last observed cell."""
        history = _history(house_mdp, [(13, 9), (13, 10), (13, 11)])
        forecast, posterior = forecaster.forecast(history, k=5, seed=3)
        assert forecast.paths.shape == (5, 10, 2)
        assert forecast.weights.sum() == pytest.approx(1.0)
        assert np.all(np.diff(forecast.weights) <= 0)
        assert np.allclose(forecast.paths[:, 0], (13, 11))

    def test_top_path_heads_to_the_likely_goal(self, forecaster, house_mdp, house_map):
        """The heaviest path ends at the kitchen anchor."""
        history = _history(house_mdp, [(13, 9), (13, 10), (13, 11), (13, 12)])
        forecast, _ = forecaster.forecast(history, k=3, seed=3)
        end = tuple(int(v) for v in np.rint(forecast.top[-1]))
        assert house_map.zone_of[end] == KITCHEN

    def test_seeded(self, forecaster, house_mdp):
        """Same seed, same forecast."""
        history = _history(house_mdp, [(13, 9), (13, 10)])
        first, _ = forecaster.forecast(history, k=4, seed=9)
        second, _ = forecaster.forecast(history, k=4, seed=9)
        assert np.array_equal(first.paths, second.paths)
        assert np.array_equal(first.weights, second.weights)

    def test_policies_are_cached(self, forecaster):
        """One value iteration per goal zone."""
        assert forecaster.policy_for(LIVING) is forecaster.policy_for(LIVING)

    def test_uniform_baseline(self, house_map, house_mdp):
        """The baseline runs the same pipeline over random walks."""
        baseline = UniformForecaster(house_map, house_mdp, ForecastConfig(samples=30, points=10, horizon=20))
        history = _history(house_mdp, [(13, 9), (13, 10)])
        forecast, posterior = baseline.forecast(history, k=3, seed=1)
        assert forecast.paths.shape == (3, 10, 2)
        assert np.allclose(posterior.weights, 0.25)


class TestGetForecaster:
    """Tests for the forecaster factory."""

    def test_settings_fill_the_config(self, test_settings, house_map, house_mdp, house_phi, ground_truth):
        forecaster = get_forecaster(test_settings, house_map, house_mdp, ground_truth, house_phi)
        assert type(forecaster) is Forecaster
        assert forecaster.config.samples == test_settings.forecast_samples
        assert forecaster.config.k_values == test_settings.k_values
        assert forecaster.horizon == test_settings.horizon

    def test_overrides_win(self, test_settings, house_map, house_mdp, house_phi, ground_truth):
        forecaster = get_forecaster(test_settings, house_map, house_mdp, ground_truth, house_phi, samples=30, horizon=20)
        assert forecaster.config.samples == 30
        assert forecaster.horizon == 20
        assert forecaster.config.points == test_settings.resample_points

    def test_no_model_gives_the_baseline(self, test_settings, house_map, house_mdp):
        assert isinstance(get_forecaster(test_settings, house_map, house_mdp, None, None), UniformForecaster)

    def test_bad_override_is_rejected(self, test_settings, house_map, house_mdp):
        with pytest.raises(ValidationError):
            get_forecaster(test_settings, house_map, house_mdp, None, None, k_values=[0])


class TestEvaluation:
    """Tests for split_demo, evaluate and write_metrics."""

    def _demo(self, mdp, start, end):
        states = shortest_path(mdp, state_of(mdp, start), state_of(mdp, end))
        actions = []
        for a, b in zip(states, states[1:]):
            actions.append(next(x for x in Action if mdp.transition[a, x] == b))
        return Trajectory(states=tuple(states), actions=tuple(actions))

    def test_split_demo(self, house_mdp):
        """History holds the first moves; truth starts where it ends."""
        demo = self._demo(house_mdp, (13, 2), (13, 15))
        history, truth = split_demo(demo, 4, 10, house_mdp)
        assert len(history.cells) == 5
        assert truth.shape == (10, 2)
        assert np.allclose(truth[0], (13, 6))
        assert np.allclose(truth[-1], (13, 15))

    def test_row_order(self, forecaster, house_mdp):
        """Rows follow the K order given, ADE before FDE."""
        pairs = [split_demo(self._demo(house_mdp, start, end), 3, 10, house_mdp)
                 for start, end in [((13, 2), (13, 15)), ((16, 3), (4, 4))]]
        rows = evaluate(pairs, forecaster, [5, 2], samples=30, seed=7)
        assert [(r.metric, r.k) for r in rows] == [("MinADE", 5), ("MinFDE", 5), ("MinADE", 2), ("MinFDE", 2)]
        assert all(r.value >= 0 for r in rows)

    def test_single_possible_future_scores_zero(self):
        """When the horizon leaves one way to the goal, every metric is exactly zero."""
        grid = parse_map(CORRIDOR)
        mdp = build_mdp(grid)
        phi = features(grid).for_states(mdp)
        model = RewardModel.zeros("linear", phi.shape[1])
        forecaster = Forecaster(grid, mdp, model, phi, ForecastConfig(points=6, horizon=3))
        pairs = [split_demo(self._demo(mdp, (1, 1), (1, 5)), 1, 6, mdp)]
        rows = evaluate(pairs, forecaster, [1, 2], samples=25, seed=5)
        assert [(r.metric, r.k, r.value) for r in rows] == [
            ("MinADE", 1, 0.0), ("MinFDE", 1, 0.0), ("MinADE", 2, 0.0), ("MinFDE", 2, 0.0),
        ]

    def test_write_metrics(self):
        """The CSV has a header and six decimals."""
        text = write_metrics([MetricRow("MinADE", 20, 1.5), MetricRow("MinFDE", 20, 2.25)])
        assert text == "metric,K,value\nMinADE,20,1.500000\nMinFDE,20,2.250000\n"
