"""Trajectory data model, CSV ingestion, day-based splits and a synthetic generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

SLOTS_PER_DAY = 48
SUNDAY = 6
WEEKDAY_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
CSV_HEADER = ("user_id", "day_index", "tod_slot", "col", "row")
MISSING = -1


class DataError(ValueError):
    """Base class for problems with trajectory data."""


class TrajectoryParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateObservationError(DataError):
    pass


class SplitError(DataError):
    pass


@dataclass(frozen=True)
class LocationGrid:
    """Rectangular grid of cells, ``id = row * width + col``."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_id(self, col: int, row: int) -> int:
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise ValueError(f"cell ({col}, {row}) outside {self.width}x{self.height} grid")
        return row * self.width + col

    def col_row(self, cell: int) -> tuple[int, int]:
        if not 0 <= cell < self.n_cells:
            raise ValueError(f"cell id {cell} outside grid of {self.n_cells} cells")
        return cell % self.width, cell // self.width

    def cell_center(self, cell: int) -> tuple[float, float]:
        col, row = self.col_row(cell)
        return (col + 0.5) / self.width, (row + 0.5) / self.height

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of normalized cell centers."""
        ids = np.arange(self.n_cells)
        cols, rows = ids % self.width, ids // self.width
        return np.stack([(cols + 0.5) / self.width, (rows + 0.5) / self.height], axis=1)

    def coords(self, cells) -> np.ndarray:
        """Integer (col, row) coordinates for an array of cell ids."""
        cells = np.asarray(cells, dtype=np.int64)
        return np.stack([cells % self.width, cells // self.width], axis=-1)


def day_of_week(day_index: int, epoch_weekday: int = SUNDAY) -> int:
    """Weekday of ``day_index`` (0=Monday .. 6=Sunday) when day 0 falls on ``epoch_weekday``."""
    return (epoch_weekday + day_index) % 7


def is_weekend(dow: int) -> bool:
    return dow >= 5


@dataclass(frozen=True)
class Observation:
    tod_slot: int
    dow: int
    day_index: int
    location: Optional[int] = None


@dataclass
class Trajectory:
    """Dense per-slot trajectory of one user; ``locations`` holds -1 where unobserved."""

    user_id: str
    locations: np.ndarray
    slots_per_day: int = SLOTS_PER_DAY
    epoch_weekday: int = SUNDAY

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.int64)
        if self.locations.ndim != 1:
            raise ValueError("locations must be one-dimensional")
        if len(self.locations) % self.slots_per_day:
            raise ValueError(
                f"trajectory length {len(self.locations)} is not a multiple of {self.slots_per_day}"
            )

    def __len__(self) -> int:
        return len(self.locations)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and self.slots_per_day == other.slots_per_day
            and self.epoch_weekday == other.epoch_weekday
            and np.array_equal(self.locations, other.locations)
        )

    @property
    def mask(self) -> np.ndarray:
        return self.locations != MISSING

    @property
    def n_days(self) -> int:
        return len(self.locations) // self.slots_per_day

    @property
    def tod(self) -> np.ndarray:
        return np.arange(len(self.locations)) % self.slots_per_day

    @property
    def dow(self) -> np.ndarray:
        days = np.arange(len(self.locations)) // self.slots_per_day
        return (self.epoch_weekday + days) % 7

    def observation(self, slot: int) -> Observation:
        day, tod = divmod(slot, self.slots_per_day)
        loc = int(self.locations[slot])
        return Observation(
            tod_slot=tod,
            dow=day_of_week(day, self.epoch_weekday),
            day_index=day,
            location=None if loc == MISSING else loc,
        )

    def day(self, day_index: int) -> np.ndarray:
        s = self.slots_per_day
        return self.locations[day_index * s:(day_index + 1) * s]


@dataclass(frozen=True)
class DatasetSplit:
    train: range
    val: range
    test: range

    @property
    def n_days(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def load_trajectories(
    path,
    grid: LocationGrid,
    slots_per_day: int = SLOTS_PER_DAY,
    epoch_weekday: int = SUNDAY,
    n_days: Optional[int] = None,
) -> list[Trajectory]:
    """Read sparse ``user_id,day_index,tod_slot,col,row`` rows into dense trajectories.

    All users share one day span (``n_days``, or one past the largest day in the file)
    so that day-based splits line up across users.
    """
    rows: dict[str, dict[int, int]] = {}
    order: list[str] = []
    max_day = -1
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise TrajectoryParseError(1, f"expected header {','.join(CSV_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 5:
                raise TrajectoryParseError(lineno, f"expected 5 fields, got {len(rec)}")
            user = rec[0].strip()
            try:
                day, tod, col, row = (int(f) for f in rec[1:])
            except ValueError:
                raise TrajectoryParseError(lineno, "non-integer field") from None
            if day < 0:
                raise TrajectoryParseError(lineno, f"negative day_index {day}")
            if not 0 <= tod < slots_per_day:
                raise TrajectoryParseError(lineno, f"tod_slot {tod} outside 0..{slots_per_day - 1}")
            if not (0 <= col < grid.width and 0 <= row < grid.height):
                raise TrajectoryParseError(lineno, f"cell ({col}, {row}) outside grid")
            if user not in rows:
                rows[user] = {}
                order.append(user)
            slot = day * slots_per_day + tod
            if slot in rows[user]:
                raise DuplicateObservationError(
                    f"line {lineno}: duplicate observation for user {user!r}, day {day}, slot {tod}"
                )
            rows[user][slot] = grid.cell_id(col, row)
            max_day = max(max_day, day)

    span = max_day + 1 if n_days is None else n_days
    if max_day >= span:
        raise DataError(f"day {max_day} beyond requested span of {span} days")
    trajs = []
    for user in order:
        locs = np.full(span * slots_per_day, MISSING, dtype=np.int64)
        for slot, cell in rows[user].items():
            locs[slot] = cell
        trajs.append(Trajectory(user, locs, slots_per_day, epoch_weekday))
    return trajs


def write_trajectories(trajs: Iterable[Trajectory], path, grid: LocationGrid) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for traj in trajs:
            for slot in np.flatnonzero(traj.mask):
                day, tod = divmod(int(slot), traj.slots_per_day)
                col, row = grid.col_row(int(traj.locations[slot]))
                writer.writerow((traj.user_id, day, tod, col, row))


def split_by_days(
    trajs_or_days, ratios: Sequence[float] = (0.7, 0.2, 0.1)
) -> DatasetSplit:
    """Chronological split of the day span; train and val sizes are floored, test takes the rest."""
    if isinstance(trajs_or_days, int):
        n_days = trajs_or_days
    else:
        spans = {t.n_days for t in trajs_or_days}
        if len(spans) > 1:
            raise SplitError(f"trajectories cover different day spans: {sorted(spans)}")
        n_days = spans.pop() if spans else 0
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise SplitError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    if n_days < 3:
        raise SplitError(f"need at least 3 days to split, got {n_days}")
    # small epsilon guards against 0.7 * 10 == 6.999...
    n_train = int(math.floor(n_days * ratios[0] + 1e-9))
    n_val = int(math.floor(n_days * ratios[1] + 1e-9))
    if n_train == 0 or n_val == 0 or n_train + n_val >= n_days:
        raise SplitError(f"{n_days} days too few for ratios {tuple(ratios)}")
    return DatasetSplit(
        train=range(0, n_train),
        val=range(n_train, n_train + n_val),
        test=range(n_train + n_val, n_days),
    )


# Slot template on a 48-slot day; scaled for other resolutions.
_HOME_END, _WORK_START, _WORK_END, _HOME_START = 16, 18, 34, 36


def _template_bounds(slots_per_day: int) -> tuple[int, int, int, int]:
    scale = slots_per_day / SLOTS_PER_DAY
    return tuple(int(round(b * scale)) for b in (_HOME_END, _WORK_START, _WORK_END, _HOME_START))


def _path_cells(grid: LocationGrid, a: int, b: int, n: int) -> list[int]:
    """``n`` cells evenly spaced strictly between ``a`` and ``b`` on the straight line."""
    (ac, ar), (bc, br) = grid.col_row(a), grid.col_row(b)
    out = []
    for k in range(1, n + 1):
        f = k / (n + 1)
        out.append(grid.cell_id(int(round(ac + f * (bc - ac))), int(round(ar + f * (br - ar)))))
    return out


def routine_day(grid: LocationGrid, origin: int, destination: int, slots_per_day: int = SLOTS_PER_DAY) -> np.ndarray:
    """One day of the noise-free routine: origin -> destination -> origin with linear transitions."""
    home_end, work_start, work_end, home_start = _template_bounds(slots_per_day)
    day = np.empty(slots_per_day, dtype=np.int64)
    day[:home_end] = origin
    day[home_end:work_start] = _path_cells(grid, origin, destination, work_start - home_end)
    day[work_start:work_end] = destination
    day[work_end:home_start] = _path_cells(grid, destination, origin, home_start - work_end)
    day[home_start:] = origin
    return day


def _neighbors(grid: LocationGrid, cell: int) -> list[int]:
    col, row = grid.col_row(cell)
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == dc == 0:
                continue
            c, r = col + dc, row + dr
            if 0 <= c < grid.width and 0 <= r < grid.height:
                out.append(r * grid.width + c)
    return out


def generate_synthetic(
    n_users: int,
    n_days: int,
    grid: LocationGrid,
    noise_eps: float = 0.0,
    missing_mu: float = 0.0,
    seed: int = 0,
    slots_per_day: int = SLOTS_PER_DAY,
    epoch_weekday: int = SUNDAY,
) -> list[Trajectory]:
    """Users with a home/work weekday routine and a home/leisure weekend routine.

    Routine cells, noise and missingness come from independent seeded streams, so the
    noise-free trajectories for a seed do not depend on ``noise_eps`` or ``missing_mu``.
    """
    if grid.width < 4 or grid.height < 4:
        raise ValueError(f"grid must be at least 4x4, got {grid.width}x{grid.height}")
    if not (0 <= noise_eps < 1 and 0 <= missing_mu < 1):
        raise ValueError("noise_eps and missing_mu must lie in [0, 1)")
    if n_users < 0 or n_days < 0:
        raise ValueError("n_users and n_days must be nonnegative")

    routine_rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    missing_rng = np.random.default_rng([seed, 2])
    trajs = []
    for u in range(n_users):
        home, work, leisure = (int(c) for c in routine_rng.choice(grid.n_cells, size=3, replace=False))
        weekday = routine_day(grid, home, work, slots_per_day)
        weekend = routine_day(grid, home, leisure, slots_per_day)
        locs = np.concatenate([
            weekend if is_weekend(day_of_week(d, epoch_weekday)) else weekday for d in range(n_days)
        ]) if n_days else np.empty(0, dtype=np.int64)

        total = len(locs)
        corrupt = noise_rng.random(total) < noise_eps
        pick = noise_rng.random(total)
        for i in np.flatnonzero(corrupt):
            nb = _neighbors(grid, int(locs[i]))
            locs[i] = nb[int(pick[i] * len(nb))]
        locs[missing_rng.random(total) < missing_mu] = MISSING
        trajs.append(Trajectory(f"u{u:04d}", locs, slots_per_day, epoch_weekday))
    return trajs
