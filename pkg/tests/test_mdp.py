"""Tests for the MDP over free cells."""

import numpy as np
import pytest

from app.core.exceptions import InvalidState
from app.models.grid import Action
from app.services.mdp_service import action_between, build_mdp, cell_of, shortest_path, state_of, transition


class TestBuildMdp:
    """Tests for build_mdp."""

    def test_one_state_per_free_cell(self, house_map, house_mdp):
        """|S| equals the free cell count."""
        assert house_mdp.n_states == house_map.free_cell_count == 292
        assert house_mdp.n_actions == 4

    def test_state_ids_are_row_major(self, house_mdp):
        """The first free cell in row-major order is state 0."""
        assert cell_of(house_mdp, 0) == (1, 1)
        assert np.all(np.diff(house_mdp.cells[:, 0] * 20 + house_mdp.cells[:, 1]) > 0)

    def test_state_cell_bijection(self, house_mdp):
        """state_of and cell_of invert each other."""
        for s in range(house_mdp.n_states):
            assert state_of(house_mdp, cell_of(house_mdp, s)) == s

    def test_moves(self, house_mdp):
        """Moves between free cells go where their delta points."""
        s = state_of(house_mdp, (13, 6))
        assert cell_of(house_mdp, transition(house_mdp, s, Action.UP)) == (12, 6)
        assert cell_of(house_mdp, transition(house_mdp, s, Action.DOWN)) == (14, 6)
        assert cell_of(house_mdp, transition(house_mdp, s, Action.LEFT)) == (13, 5)
        assert cell_of(house_mdp, transition(house_mdp, s, Action.RIGHT)) == (13, 7)

    def test_blocked_moves_self_loop(self, house_mdp):
        """A move into a wall leaves the state unchanged."""
        corner = state_of(house_mdp, (1, 1))
        assert transition(house_mdp, corner, Action.UP) == corner
        assert transition(house_mdp, corner, Action.LEFT) == corner

    def test_doors_connect_zones(self, house_mdp):
        """Stepping through a door changes zone."""
        door = state_of(house_mdp, (13, 12))
        assert cell_of(house_mdp, transition(house_mdp, door, Action.RIGHT)) == (13, 13)
        assert cell_of(house_mdp, transition(house_mdp, door, Action.LEFT)) == (13, 11)
        assert transition(house_mdp, door, Action.UP) == door

    def test_horizon_default(self, house_map):
        """The default horizon is carried on the MDP."""
        assert build_mdp(house_map, horizon=12).horizon_default == 12

    def test_transition_table_is_read_only(self, house_mdp):
        """Domain arrays cannot be modified in place."""
        with pytest.raises(ValueError):
            house_mdp.transition[0, 0] = 1


class TestStateLookups:
    """Tests for the lookup helpers."""

    def test_wall_cell_is_invalid(self, house_mdp):
        """Walls have no StateId."""
        with pytest.raises(InvalidState):
            state_of(house_mdp, (0, 0))

    def test_out_of_range_id(self, house_mdp):
        """Ids beyond |S| are rejected."""
        with pytest.raises(InvalidState):
            transition(house_mdp, 292, Action.UP)
        with pytest.raises(InvalidState):
            cell_of(house_mdp, -1)

    def test_action_between(self, house_mdp):
        """The action linking two adjacent states."""
        a = state_of(house_mdp, (13, 6))
        b = state_of(house_mdp, (13, 7))
        assert action_between(house_mdp, a, b) == Action.RIGHT
        with pytest.raises(InvalidState):
            action_between(house_mdp, a, state_of(house_mdp, (13, 9)))


class TestShortestPath:
    """Tests for shortest_path."""

    def test_open_room_is_taxicab(self, house_mdp):
        """Inside one room the path length is the taxicab distance."""
        path = shortest_path(house_mdp, state_of(house_mdp, (9, 1)), state_of(house_mdp, (18, 11)))
        assert len(path) - 1 == 9 + 10

    def test_goes_through_doors(self, house_mdp):
        """A path from the living room into bedroom1 passes its door."""
        path = shortest_path(house_mdp, state_of(house_mdp, (9, 4)), state_of(house_mdp, (7, 4)))
        assert [cell_of(house_mdp, s) for s in path] == [(9, 4), (8, 4), (7, 4)]

    def test_consecutive_states_are_adjacent(self, house_mdp):
        """Every step of a path is one move."""
        path = shortest_path(house_mdp, state_of(house_mdp, (4, 4)), state_of(house_mdp, (13, 15)))
        for a, b in zip(path, path[1:]):
            action_between(house_mdp, a, b)

    def test_deterministic(self, house_mdp):
        """Ties break the same way every call."""
        a, b = state_of(house_mdp, (9, 1)), state_of(house_mdp, (12, 5))
        assert shortest_path(house_mdp, a, b) == shortest_path(house_mdp, a, b)

    def test_trivial(self, house_mdp):
        """A path to itself is a single state."""
        s = state_of(house_mdp, (13, 6))
        assert shortest_path(house_mdp, s, s) == [s]
