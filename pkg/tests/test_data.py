import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierloc.data import (
    DataError,
    DuplicateObservationError,
    LocationGrid,
    SplitError,
    Trajectory,
    TrajectoryParseError,
    day_of_week,
    generate_synthetic,
    is_weekend,
    load_trajectories,
    routine_day,
    split_by_days,
    write_trajectories,
)

GRID200 = LocationGrid(200, 200)


def write_csv(tmp_path, body, header="user_id,day_index,tod_slot,col,row\n"):
    path = tmp_path / "traj.csv"
    path.write_text(header + body)
    return path


class TestLocationGrid:
    def test_id_bijection(self):
        grid = LocationGrid(7, 5)
        ids = [grid.cell_id(c, r) for r in range(5) for c in range(7)]
        assert ids == list(range(35))
        assert all(grid.col_row(grid.cell_id(c, r)) == (c, r) for r in range(5) for c in range(7))

    def test_centers_strictly_inside_unit_square(self):
        centers = LocationGrid(3, 4).cell_centers()
        assert (centers > 0).all() and (centers < 1).all()
        assert LocationGrid(3, 4).cell_center(0) == (0.5 / 3, 0.5 / 4)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            LocationGrid(4, 4).cell_id(4, 0)
        with pytest.raises(ValueError):
            LocationGrid(4, 4).col_row(16)


def test_weekday_convention():
    # day 0 is a Sunday by default
    assert day_of_week(0) == 6
    assert day_of_week(1) == 0
    assert day_of_week(0, epoch_weekday=2) == 2
    assert [is_weekend(d) for d in range(7)] == [False] * 5 + [True] * 2


class TestLoad:
    def test_single_row(self, tmp_path):
        trajs = load_trajectories(write_csv(tmp_path, "u1,0,17,136,42\n"), GRID200)
        assert len(trajs) == 1
        t = trajs[0]
        assert len(t) == 48
        assert np.flatnonzero(t.mask).tolist() == [17]
        assert t.locations[17] == 42 * 200 + 136

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert load_trajectories(path, GRID200) == []
        assert load_trajectories(write_csv(tmp_path, ""), GRID200) == []

    def test_out_of_grid_column(self, tmp_path):
        with pytest.raises(TrajectoryParseError) as exc:
            load_trajectories(write_csv(tmp_path, "u1,0,3,1,1\nu1,0,4,200,1\n"), GRID200)
        assert exc.value.line == 3

    @pytest.mark.parametrize("row", ["u1,0,x,1,1", "u1,0,1,1", "u1,0,48,1,1", "u1,-1,1,1,1"])
    def test_malformed(self, tmp_path, row):
        with pytest.raises(TrajectoryParseError, match="line 2"):
            load_trajectories(write_csv(tmp_path, row + "\n"), GRID200)

    def test_duplicate(self, tmp_path):
        with pytest.raises(DuplicateObservationError):
            load_trajectories(write_csv(tmp_path, "u1,2,5,1,1\nu1,2,5,3,3\n"), GRID200)

    def test_bad_header(self, tmp_path):
        with pytest.raises(TrajectoryParseError):
            load_trajectories(write_csv(tmp_path, "u1,0,1,1,1\n", header="a,b,c,d,e\n"), GRID200)

    def test_users_share_day_span(self, tmp_path):
        trajs = load_trajectories(write_csv(tmp_path, "a,0,0,0,0\nb,3,1,1,1\n"), GRID200)
        assert [t.n_days for t in trajs] == [4, 4]

    def test_round_trip(self, tmp_path):
        grid = LocationGrid(10, 10)
        trajs = generate_synthetic(4, 9, grid, 0.2, 0.3, seed=3)
        path = tmp_path / "out.csv"
        write_trajectories(trajs, path, grid)
        assert load_trajectories(path, grid) == trajs


class TestSplit:
    def test_75_days(self):
        s = split_by_days(75)
        assert (s.train, s.val, s.test) == (range(0, 52), range(52, 67), range(67, 75))

    def test_75_days_oracle(self):
        # floor rule recomputed independently
        n = 75
        n_train, n_val = int(n * 7 // 10), int(n * 2 // 10)
        assert (n_train, n_val, n - n_train - n_val) == (52, 15, 8)
        s = split_by_days(n)
        assert (len(s.train), len(s.val), len(s.test)) == (n_train, n_val, n - n_train - n_val)

    def test_10_days(self):
        s = split_by_days(10)
        assert (len(s.train), len(s.val), len(s.test)) == (7, 2, 1)

    def test_two_days_rejected(self):
        with pytest.raises(SplitError):
            split_by_days(2)

    def test_from_trajectories(self):
        trajs = generate_synthetic(2, 30, LocationGrid(5, 5), seed=0)
        assert split_by_days(trajs).test == range(27, 30)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=10, max_value=2000))
    def test_partition(self, n):
        s = split_by_days(n)
        days = list(s.train) + list(s.val) + list(s.test)
        assert days == list(range(n))
        assert s.train.stop == s.val.start and s.val.stop == s.test.start


class TestSynthetic:
    def test_noise_free_is_routine(self):
        grid = LocationGrid(20, 20)
        trajs = generate_synthetic(5, 14, grid, 0.0, 0.0, seed=1)
        for t in trajs:
            assert t.mask.all()
            days = [t.day(d) for d in range(14)]
            weekdays = [d for i, d in enumerate(days) if not is_weekend(day_of_week(i))]
            weekends = [d for i, d in enumerate(days) if is_weekend(day_of_week(i))]
            # the best guess for a held-out day is any earlier day of the same kind; it is exact
            assert all(np.array_equal(d, weekdays[0]) for d in weekdays)
            assert all(np.array_equal(d, weekends[0]) for d in weekends)
            assert not np.array_equal(weekdays[0], weekends[0])

    def test_routine_template(self):
        grid = LocationGrid(20, 20)
        day = routine_day(grid, grid.cell_id(0, 0), grid.cell_id(9, 0))
        assert (day[:16] == 0).all() and (day[18:34] == 9).all() and (day[36:] == 0).all()
        assert day[16:18].tolist() == [3, 6]
        assert day[34:36].tolist() == [6, 3]

    def test_deterministic(self):
        grid = LocationGrid(20, 20)
        a = generate_synthetic(6, 10, grid, 0.1, 0.1, seed=11)
        b = generate_synthetic(6, 10, grid, 0.1, 0.1, seed=11)
        assert a == b
        assert a != generate_synthetic(6, 10, grid, 0.1, 0.1, seed=12)

    def test_noise_fraction(self):
        grid = LocationGrid(20, 20)
        clean = generate_synthetic(50, 30, grid, 0.0, 0.0, seed=5)
        noisy = generate_synthetic(50, 30, grid, 0.1, 0.0, seed=5)
        corrupted = np.concatenate([c.locations != n.locations for c, n in zip(clean, noisy)])
        assert abs(corrupted.mean() - 0.1) <= 0.02

    def test_noise_moves_to_a_neighbour(self):
        grid = LocationGrid(20, 20)
        clean = generate_synthetic(5, 10, grid, 0.0, 0.0, seed=5)
        noisy = generate_synthetic(5, 10, grid, 0.3, 0.0, seed=5)
        for c, n in zip(clean, noisy):
            changed = np.flatnonzero(c.locations != n.locations)
            a, b = grid.coords(c.locations[changed]), grid.coords(n.locations[changed])
            assert (np.abs(a - b).max(axis=1) == 1).all()

    def test_missing_fraction(self):
        trajs = generate_synthetic(50, 30, LocationGrid(20, 20), 0.0, 0.1, seed=5)
        missing = 1 - np.concatenate([t.mask for t in trajs]).mean()
        assert abs(missing - 0.1) <= 0.02

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic(1, 1, LocationGrid(3, 10))

    @pytest.mark.parametrize("eps,mu", [(1.0, 0.0), (0.0, 1.0), (-0.1, 0.0)])
    def test_probabilities_checked(self, eps, mu):
        with pytest.raises(ValueError):
            generate_synthetic(1, 1, LocationGrid(4, 4), eps, mu)


def test_trajectory_length_must_cover_whole_days():
    with pytest.raises(ValueError):
        Trajectory("u", np.zeros(47, dtype=int))


def test_observation_view():
    t = Trajectory("u", np.r_[np.full(48, -1), np.arange(48)])
    obs = t.observation(48 + 5)
    assert (obs.tod_slot, obs.day_index, obs.dow, obs.location) == (5, 1, 0, 5)
    assert t.observation(3).location is None


def test_data_errors_share_a_base():
    assert issubclass(TrajectoryParseError, DataError)
    assert issubclass(SplitError, DataError)
