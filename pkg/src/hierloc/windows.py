"""Sliding (history, horizon-day) samples as batched tensors."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from .data import Trajectory
from .semantic import SemanticCache, history_segment_starts, task_key, trajectory_key


@dataclass
class WindowBatch:
    user_ids: list
    horizon_days: torch.Tensor  # (B,)
    hist_tod: torch.Tensor      # (B, T)
    hist_dow: torch.Tensor      # (B, T)
    hist_loc: torch.Tensor      # (B, T), -1 where unobserved
    fut_tod: torch.Tensor       # (B, H)
    fut_dow: torch.Tensor       # (B, H)
    targets: torch.Tensor       # (B, H), -1 where unobserved
    segment_te: torch.Tensor    # (B, T // L, D)
    task_te: torch.Tensor       # (B, D)

    def __len__(self) -> int:
        return len(self.user_ids)

    def subset(self, index) -> "WindowBatch":
        index = torch.as_tensor(index, dtype=torch.long)
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "user_ids":
                out[f.name] = [value[int(i)] for i in index]
            else:
                out[f.name] = value[index]
        return WindowBatch(**out)

    def to(self, dtype: torch.dtype) -> "WindowBatch":
        return WindowBatch(**{
            f.name: getattr(self, f.name).to(dtype)
            if f.name in ("segment_te", "task_te") else getattr(self, f.name)
            for f in fields(self)
        })


def horizon_days_available(traj: Trajectory, lookback: int, horizon: int) -> list[int]:
    S = traj.slots_per_day
    return [d for d in range(traj.n_days) if d * S >= lookback and d * S + horizon <= len(traj)]


def build_windows(
    trajs: Sequence[Trajectory],
    horizon_days: Iterable[int],
    *,
    lookback: int,
    horizon: int,
    segment_length: int,
    dim: int,
    cache: Optional[SemanticCache] = None,
    use_traj_info: bool = True,
    use_task_desc: bool = True,
    require_target: bool = True,
) -> WindowBatch:
    """One sample per (user, horizon day) with enough history and an in-span horizon.

    Without a cache the semantic vectors are zeros. Days whose horizon has no observed
    target are dropped when ``require_target`` is set.
    """
    horizon_days = sorted(set(horizon_days))
    if cache is not None and cache.dim != dim:
        raise ValueError(f"cache dimension {cache.dim} does not match model dimension {dim}")
    n_seg = lookback // segment_length
    rows = {k: [] for k in ("user", "day", "h_tod", "h_dow", "h_loc", "f_tod", "f_dow", "tgt", "seg", "task")}
    for traj in trajs:
        S = traj.slots_per_day
        tod, dow, locs = traj.tod, traj.dow, traj.locations
        valid = set(horizon_days_available(traj, lookback, horizon))
        for d in horizon_days:
            if d not in valid:
                continue
            a, b = d * S - lookback, d * S
            target = locs[b:b + horizon]
            if require_target and not (target >= 0).any():
                continue
            seg = np.zeros((n_seg, dim), dtype=np.float32)
            task = np.zeros(dim, dtype=np.float32)
            if cache is not None:
                if use_traj_info:
                    starts = history_segment_starts(d, lookback, segment_length, S)
                    seg = np.stack([cache.lookup(trajectory_key(traj.user_id, s, segment_length, S)) for s in starts])
                if use_task_desc:
                    task = cache.lookup(task_key(traj.user_id, d))
            rows["user"].append(traj.user_id)
            rows["day"].append(d)
            rows["h_tod"].append(tod[a:b])
            rows["h_dow"].append(dow[a:b])
            rows["h_loc"].append(locs[a:b])
            rows["f_tod"].append(tod[b:b + horizon])
            rows["f_dow"].append(dow[b:b + horizon])
            rows["tgt"].append(target)
            rows["seg"].append(seg)
            rows["task"].append(task)

    def stack(key, shape, dtype):
        if not rows[key]:
            return torch.zeros((0, *shape), dtype=dtype)
        return torch.as_tensor(np.stack(rows[key]), dtype=dtype)

    return WindowBatch(
        user_ids=rows["user"],
        horizon_days=torch.as_tensor(np.asarray(rows["day"], dtype=np.int64)),
        hist_tod=stack("h_tod", (lookback,), torch.long),
        hist_dow=stack("h_dow", (lookback,), torch.long),
        hist_loc=stack("h_loc", (lookback,), torch.long),
        fut_tod=stack("f_tod", (horizon,), torch.long),
        fut_dow=stack("f_dow", (horizon,), torch.long),
        targets=stack("tgt", (horizon,), torch.long),
        segment_te=stack("seg", (n_seg, dim), torch.float32),
        task_te=stack("task", (dim,), torch.float32),
    )
