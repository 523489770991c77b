"""Tests for trajectory files, checkpoints, reward specs and the profile store."""

import numpy as np
import pytest

from app.core.exceptions import (
    DuplicateId,
    InconsistentTrajectory,
    MalformedCheckpoint,
    MalformedProfileFile,
    MalformedRewardSpec,
    MalformedTrajectoryFile,
)
from app.models.grid import Action
from app.models.irl import RewardModel, Trajectory
from app.services.profile_service import format_profiles, parse_profiles, profile_store_load, profile_store_save
from app.utils.checkpoint import format_checkpoint, load_checkpoint, parse_checkpoint
from app.utils.io import atomic_write_text
from app.utils.reward_spec import parse_reward_spec
from app.utils.trajectory_io import format_trajectories, parse_trajectories, read_trajectories
from tests.conftest import PROFILES_PATH

HOUSE_FEATURES = (
    "free", "wall", "door", "wall_dist",
    "zone:bedroom1", "zone:bedroom2", "zone:kitchen", "zone:living", "x", "y",
)


class TestTrajectoryFile:
    """Tests for the trajectory CSV format."""

    def test_format(self, room3):
        """States become row, col pairs; the last one has no action."""
        _, mdp, _ = room3
        traj = Trajectory(states=(0, 1, 4), actions=(Action.RIGHT, Action.DOWN), traj_id="t0")
        assert format_trajectories([traj], mdp) == "t0,-,1,1,R,1,2,D,2,2,-\n"

    def test_parse(self, room3):
        """Goal zones and single-state trajectories are read back."""
        _, mdp, _ = room3
        trajectories = parse_trajectories("t0,0,1,1,R,1,2,-\nt1,-,3,3,-\n", mdp)
        assert trajectories == [
            Trajectory(states=(0, 1), actions=(Action.RIGHT,), goal_zone=0, traj_id="t0"),
            Trajectory(states=(8,), actions=(), goal_zone=None, traj_id="t1"),
        ]

    def test_read_file(self, room3, tmp_path):
        _, mdp, _ = room3
        path = atomic_write_text(tmp_path / "demos.csv", "a,-,2,1,U,1,1,-\n")
        assert read_trajectories(path, mdp)[0].states == (3, 0)

    @pytest.mark.parametrize("text", [
        "t0,-,1,1\n",
        "t0,x,1,1,-\n",
        "t0,-,1,one,-\n",
        "t0,-,0,0,-\n",
        "t0,-,1,1,Q,1,2,-\n",
        "t0,-,1,1,R,1,2,D\n",
        "t0,-,1,1,-,1,2,-\n",
    ])
    def test_malformed(self, room3, text):
        """Bad fields, wall cells and misplaced actions are rejected."""
        _, mdp, _ = room3
        with pytest.raises(MalformedTrajectoryFile) as exc_info:
            parse_trajectories(text, mdp)
        assert exc_info.value.line == 1

    def test_inconsistent(self, room3):
        """The action must lead to the next listed cell."""
        _, mdp, _ = room3
        with pytest.raises(InconsistentTrajectory) as exc_info:
            parse_trajectories("t0,-,1,1,R,1,2,R,3,3,-\n", mdp)
        assert exc_info.value.step == 1


class TestCheckpoint:
    """Tests for the checkpoint format."""

    def test_linear_restores_theta_exactly(self, tmp_path):
        """17 significant digits survive a write and read."""
        model = RewardModel("linear", 3, np.array([0.1, -1 / 3, 2.0e-12]))
        text = format_checkpoint(model)
        assert text.splitlines()[:2] == ["linear", "3"]
        restored = load_checkpoint(atomic_write_text(tmp_path / "model.ckpt", text))
        assert restored.kind == "linear"
        assert np.array_equal(restored.theta, model.theta)

    def test_mlp_header(self):
        """MLP checkpoints carry F and H."""
        model = RewardModel("mlp", 3, np.linspace(-1.0, 1.0, 2 * 3 + 2 * 2 + 1), hidden=2)
        restored = parse_checkpoint(format_checkpoint(model))
        assert format_checkpoint(model).splitlines()[1] == "3 2"
        assert (restored.kind, restored.n_features, restored.hidden) == ("mlp", 3, 2)
        assert np.array_equal(restored.theta, model.theta)

    @pytest.mark.parametrize("text", [
        "",
        "linear\n",
        "cubic\n2\n0\n0\n",
        "linear\n2 4\n0\n0\n",
        "linear\n3\n1\n2\n",
        "linear\n1\nabc\n",
        "mlp\n2\n0\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(MalformedCheckpoint):
            parse_checkpoint(text)


class TestRewardSpec:
    """Tests for parse_reward_spec."""

    def test_weights_land_in_their_slots(self):
        """Signs, bare names and repeats all count."""
        model = parse_reward_spec("0.5*free - 2*wall_dist + zone:kitchen + zone:kitchen", HOUSE_FEATURES)
        assert model.kind == "linear"
        assert list(model.theta) == [0.5, 0, 0, -2, 0, 0, 2, 0, 0, 0]

    def test_comments_and_lines(self):
        """Comment lines are skipped and lines are joined."""
        model = parse_reward_spec("# cost\n1e-1*x\n  + .5*y\n", HOUSE_FEATURES)
        assert model.theta[8] == pytest.approx(0.1)
        assert model.theta[9] == 0.5

    def test_ground_truth_file(self, ground_truth):
        """The fixture reward file parses to its weights."""
        assert list(ground_truth.theta) == [3, 0, 3, -1, 1, 1, 0, 0, 0, 0]

    @pytest.mark.parametrize("text", [
        "",
        "# nothing here\n",
        "2*attic",
        "free wall",
        "2*",
        "free + 3",
    ])
    def test_malformed(self, text):
        with pytest.raises(MalformedRewardSpec):
            parse_reward_spec(text, HOUSE_FEATURES)


class TestProfileStore:
    """Tests for the resident profile store."""

    def test_load(self, profiles):
        """Profiles keep their file order."""
        assert [p.person_id for p in profiles] == ["A", "B"]
        assert profiles[0].lighting.intensity == 80

    def test_format_reproduces_the_file(self, profiles):
        assert format_profiles(profiles) == PROFILES_PATH.read_text(encoding="utf-8")

    def test_save_and_load(self, profiles, tmp_path):
        path = tmp_path / "profiles.json"
        profile_store_save(path, profiles)
        assert profile_store_load(path) == profiles

    def test_duplicate_id(self, profiles):
        """Person ids are unique in both directions."""
        with pytest.raises(DuplicateId):
            format_profiles([profiles[0], profiles[0]])
        doubled = format_profiles(profiles).replace('"person_id": "B"', '"person_id": "A"')
        with pytest.raises(DuplicateId):
            parse_profiles(doubled)

    @pytest.mark.parametrize("text", [
        "not json",
        "{}",
        '[{"person_id": "A"}]',
        '[{"person_id": "A B", "display_name": "x", "identity_token": "t",'
        ' "lighting": {"red": 0, "green": 0, "blue": 0, "intensity": 0}}]',
        '[{"person_id": "A", "display_name": "x", "identity_token": "t",'
        ' "lighting": {"red": 0, "green": 0, "blue": 0, "intensity": 101}}]',
    ])
    def test_malformed(self, text):
        with pytest.raises(MalformedProfileFile):
            parse_profiles(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MalformedProfileFile):
            profile_store_load(tmp_path / "absent.json")


class TestAtomicWrite:
    """Tests for atomic_write_text."""

    def test_replaces_and_leaves_no_temp_files(self, tmp_path):
        path = tmp_path / "nested" / "out.txt"
        atomic_write_text(path, "old\n")
        atomic_write_text(path, "new\n")
        assert path.read_text(encoding="utf-8") == "new\n"
        assert [p.name for p in path.parent.iterdir()] == ["out.txt"]
