"""Prompt texts, text-embedding providers, the offline semantic cache and additive alignment.

Each history segment gets a trajectory-information prompt and each horizon day a
task-description prompt. A provider turns every prompt into a D-vector once, ahead
of training; the model only ever reads the sealed cache.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np
import torch

from .data import (
    SLOTS_PER_DAY,
    WEEKDAY_NAMES,
    DataError,
    LocationGrid,
    Trajectory,
    day_of_week,
)

TRANSITION_MIN_CELLS = 5.0
STAY_MIN_SLOTS = 2


class SemanticError(ValueError):
    pass


class MissingSemanticKeyError(SemanticError, KeyError):
    def __init__(self, key: str):
        super().__init__(f"semantic cache has no entry for key {key!r}")
        self.key = key

    def __str__(self) -> str:
        return self.args[0]


class SemanticProviderError(SemanticError):
    def __init__(self, key: str, cause: Exception):
        super().__init__(f"provider failed on {key!r}: {cause}")
        self.key = key


# --- prompts -----------------------------------------------------------------

@dataclass(frozen=True)
class PromptText:
    kind: str  # "trajectory-info" | "task-description"
    text: str
    key: str


def trajectory_key(user_id: str, start_slot: int, segment_length: int, slots_per_day: int = SLOTS_PER_DAY) -> str:
    if segment_length == slots_per_day and start_slot % slots_per_day == 0:
        return f"traj/{user_id}/{start_slot // slots_per_day}"
    return f"traj/{user_id}/{start_slot}+{segment_length}"


def task_key(user_id: str, day: int) -> str:
    return f"task/{user_id}/{day}"


def _clock(tod_slot: int, slots_per_day: int) -> str:
    minutes = tod_slot * (24 * 60) // slots_per_day
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def _cell(grid: LocationGrid, cell: int) -> str:
    col, row = grid.col_row(cell)
    return f"(X={col}, Y={row})"


def _join(items: list[str]) -> str:
    return "; ".join(items) + "." if items else "none."


def build_segment_prompt(
    traj: Trajectory,
    start_slot: int,
    length: int,
    grid: LocationGrid,
    transition_min_cells: float = TRANSITION_MIN_CELLS,
    stay_min_slots: int = STAY_MIN_SLOTS,
) -> PromptText:
    """Trajectory-information prompt for slots ``start_slot .. start_slot+length-1``."""
    S = traj.slots_per_day
    if start_slot < 0 or length < 1 or start_slot + length > len(traj):
        raise DataError(f"slots {start_slot}..{start_slot + length - 1} outside trajectory")
    day = start_slot // S
    multi_day = (start_slot % S) + length > S

    def when(slot: int) -> str:
        stamp = _clock(slot % S, S)
        return f"day {slot // S} {stamp}" if multi_day else stamp

    observed = [(s, int(traj.locations[s])) for s in range(start_slot, start_slot + length) if traj.locations[s] >= 0]
    weekday = WEEKDAY_NAMES[day_of_week(day, traj.epoch_weekday)]
    lines = [
        f"This is the trajectory of user {traj.user_id} of day {day} which is a {weekday}. "
        f"The trajectory consists of {len(observed)} records, each record of coordinate is as follows: ",
    ]
    if observed:
        records = [f"{when(s)}: {_cell(grid, c)}" for s, c in observed]
        lines += [r + ";" for r in records[:-1]] + [records[-1] + "."]

    transitions = []
    for (_, a), (s, b) in zip(observed, observed[1:]):
        (ac, ar), (bc, br) = grid.col_row(a), grid.col_row(b)
        if math.hypot(bc - ac, br - ar) >= transition_min_cells:
            transitions.append(f"At {when(s)}: {_cell(grid, a)} → {_cell(grid, b)}")

    stays = []
    i = 0
    while i < len(observed):
        j = i
        while j + 1 < len(observed) and observed[j + 1][1] == observed[i][1]:
            j += 1
        if j - i + 1 >= stay_min_slots:
            first, last = observed[i][0], observed[j][0]
            hours = (last - first) * (24 / S)
            stays.append(f"{_cell(grid, observed[i][1])} from {when(first)} to {when(last)} ({hours:.1f} hours)")
        i = j + 1

    lines += ["", "Key transitions: " + _join(transitions), "", "Main stay locations: " + _join(stays)]
    return PromptText("trajectory-info", "\n".join(lines) + "\n", trajectory_key(traj.user_id, start_slot, length, S))


def build_trajectory_prompt(traj: Trajectory, day: int, grid: LocationGrid, **kwargs) -> PromptText:
    if not 0 <= day < traj.n_days:
        raise DataError(f"day {day} outside trajectory span 0..{traj.n_days - 1}")
    S = traj.slots_per_day
    return build_segment_prompt(traj, day * S, S, grid, **kwargs)


def build_task_prompt(
    user_id: str,
    day: int,
    dow: int,
    grid: LocationGrid = LocationGrid(200, 200),
    slots_per_day: int = SLOTS_PER_DAY,
) -> PromptText:
    interval = (24 * 60) // slots_per_day
    text = (
        "You are a mobility prediction assistant that forecasts human movement patterns in urban "
        f"environments. The city is represented as a {grid.width} x {grid.height} grid of cells, where "
        "each cell is identified by coordinates (X,Y). The X coordinate increases from left (0) to right "
        f"({grid.width - 1}), and the Y coordinate increases from top (0) to bottom ({grid.height - 1}).\n"
        "\n"
        f"TASK: Based on User {user_id}'s historical movement patterns, predict their locations for "
        f"Day {day} ({WEEKDAY_NAMES[dow]}). The predictions should capture expected locations at "
        f"{interval}-minute intervals throughout the day ({slots_per_day} time slots). The model should "
        "analyze patterns like frequent locations, typical daily routines, and time-dependent behaviors "
        "to generate accurate predictions of where this user is likely to be throughout the next day.\n"
        "\n"
        "The previous days' trajectory data contains information about the user's typical movement "
        "patterns, regular visited locations, transition times, and duration of stays. Key patterns to "
        "consider include: home and work locations, morning and evening routines, lunch-time behaviors, "
        "weekend vs. weekday differences, and recurring visit patterns.\n"
    )
    return PromptText("task-description", text, task_key(user_id, day))


# --- providers -----------------------------------------------------------------

class SemanticProvider(Protocol):
    id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingProvider:
    """Deterministic stand-in for a language model.

    The text's SHA-256 digest (salted with ``seed``) seeds a generator that draws a
    unit-norm Gaussian vector, so equal texts always map to equal vectors.
    """

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.id = f"sha256-gaussian/seed={seed}"

    def embed(self, text: str) -> np.ndarray:
        h = hashlib.sha256(struct.pack("<q", self.seed) + text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(h, "little"))
        v = rng.standard_normal(self.dim)
        return (v / np.linalg.norm(v)).astype(np.float32)


class FileProvider:
    """Vectors exported by an external embedder.

    JSON-lines file, one ``{"sha256": <hex digest of utf-8 text>, "vector": [...]}`` per prompt.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.id = f"file:{self.path.name}"
        self._vectors: dict[str, np.ndarray] = {}
        dims = set()
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                vec = np.asarray(rec["vector"], dtype=np.float32)
                self._vectors[rec["sha256"]] = vec
                dims.add(len(vec))
        if len(dims) > 1:
            raise SemanticError(f"{self.path}: vectors of mixed dimension {sorted(dims)}")
        self.dim = dims.pop() if dims else 0

    def embed(self, text: str) -> np.ndarray:
        h = hashlib.sha256(text.encode("utf-8")).hexdigest()
        try:
            return self._vectors[h]
        except KeyError:
            raise SemanticError(f"{self.path}: no vector for prompt with sha256 {h}") from None


# --- cache -------------------------------------------------------------------

RSEM_MAGIC = b"RSEM"
RSEM_VERSION = 1


class SemanticCache:
    def __init__(self, provider_id: str, dim: int):
        self.provider_id = provider_id
        self.dim = dim
        self._entries: dict[str, np.ndarray] = {}
        self._sealed = False

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    @property
    def sealed(self) -> bool:
        return self._sealed

    @property
    def entries(self) -> Mapping[str, np.ndarray]:
        return MappingProxyType(self._entries)

    def add(self, key: str, vector) -> None:
        if self._sealed:
            raise SemanticError("cache is sealed")
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise SemanticError(f"vector for {key!r} has shape {vec.shape}, expected ({self.dim},)")
        vec = vec.copy()
        vec.setflags(write=False)
        self._entries[key] = vec

    def seal(self) -> "SemanticCache":
        self._sealed = True
        return self

    def lookup(self, key: str) -> np.ndarray:
        try:
            return self._entries[key]
        except KeyError:
            raise MissingSemanticKeyError(key) from None

    def dumps(self) -> bytes:
        pid = self.provider_id.encode("utf-8")
        parts = [RSEM_MAGIC, struct.pack("<HH", RSEM_VERSION, len(pid)), pid,
                 struct.pack("<IQ", self.dim, len(self._entries))]
        for key in sorted(self._entries):
            raw = key.encode("utf-8")
            parts += [struct.pack("<H", len(raw)), raw, self._entries[key].astype("<f4").tobytes()]
        return b"".join(parts)

    def save(self, path) -> None:
        if not self._sealed:
            raise SemanticError("only sealed caches are written")
        Path(path).write_bytes(self.dumps())

    @classmethod
    def loads(cls, data: bytes) -> "SemanticCache":
        if data[:4] != RSEM_MAGIC:
            raise SemanticError("not an RSEM cache file")
        version, plen = struct.unpack_from("<HH", data, 4)
        if version != RSEM_VERSION:
            raise SemanticError(f"unsupported cache version {version}")
        pos = 8
        provider_id = data[pos:pos + plen].decode("utf-8")
        pos += plen
        dim, count = struct.unpack_from("<IQ", data, pos)
        pos += 12
        cache = cls(provider_id, dim)
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            key = data[pos:pos + klen].decode("utf-8")
            pos += klen
            cache.add(key, np.frombuffer(data, dtype="<f4", count=dim, offset=pos))
            pos += 4 * dim
        if pos != len(data):
            raise SemanticError("trailing bytes in cache file")
        return cache.seal()

    @classmethod
    def load(cls, path) -> "SemanticCache":
        return cls.loads(Path(path).read_bytes())


def history_segment_starts(horizon_day: int, lookback: int, segment_length: int, slots_per_day: int = SLOTS_PER_DAY) -> list[int]:
    start = horizon_day * slots_per_day - lookback
    if start < 0:
        raise DataError(f"day {horizon_day} has fewer than {lookback} slots of history")
    return list(range(start, horizon_day * slots_per_day, segment_length))


def required_prompts(
    trajs: Sequence[Trajectory],
    horizon_days: Iterable[int],
    grid: LocationGrid,
    lookback: int = 336,
    segment_length: int = SLOTS_PER_DAY,
) -> list[PromptText]:
    """Every prompt needed to serve the given horizon days, in a stable order."""
    horizon_days = sorted(set(horizon_days))
    prompts = []
    for traj in trajs:
        S = traj.slots_per_day
        starts = sorted({s for d in horizon_days for s in history_segment_starts(d, lookback, segment_length, S)})
        for s in starts:
            prompts.append(build_segment_prompt(traj, s, segment_length, grid))
        for d in horizon_days:
            prompts.append(build_task_prompt(traj.user_id, d, day_of_week(d, traj.epoch_weekday), grid, S))
    return prompts


def precompute_semantics(
    trajs: Sequence[Trajectory],
    horizon_days: Iterable[int],
    provider: SemanticProvider,
    out=None,
    *,
    dim: Optional[int] = None,
    grid: LocationGrid,
    lookback: int = 336,
    segment_length: int = SLOTS_PER_DAY,
) -> SemanticCache:
    """Embed every required prompt once, seal the cache and optionally write it to ``out``."""
    if dim is not None and provider.dim != dim:
        raise SemanticError(f"provider dimension {provider.dim} does not match model dimension {dim}")
    cache = SemanticCache(provider.id, provider.dim)
    for prompt in required_prompts(trajs, horizon_days, grid, lookback, segment_length):
        if prompt.key in cache:
            continue
        try:
            vec = provider.embed(prompt.text)
        except Exception as exc:
            raise SemanticProviderError(prompt.key, exc) from exc
        cache.add(prompt.key, vec)
    cache.seal()
    if out is not None:
        cache.save(out)
    return cache


def align(tokens: torch.Tensor, future: torch.Tensor, segment_te: torch.Tensor, task_te: torch.Tensor) -> torch.Tensor:
    """``[tokens + segment_te ; future + task_te]`` along the sequence axis."""
    return torch.cat([tokens + segment_te, future + task_te.unsqueeze(-2)], dim=-2)


def combine(
    tokens: torch.Tensor,
    future: torch.Tensor,
    cache: SemanticCache,
    segment_keys: Sequence[str],
    task_key_: str,
) -> torch.Tensor:
    if len(segment_keys) != tokens.shape[-2]:
        raise ValueError(f"{len(segment_keys)} keys for {tokens.shape[-2]} segment tokens")
    if cache.dim != tokens.shape[-1]:
        raise SemanticError(f"cache dimension {cache.dim} does not match token width {tokens.shape[-1]}")
    seg = torch.as_tensor(np.stack([cache.lookup(k) for k in segment_keys]), dtype=tokens.dtype)
    task = torch.tensor(cache.lookup(task_key_), dtype=tokens.dtype)
    return align(tokens, future, seg, task)
