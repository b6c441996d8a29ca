"""Per-slot spatio-temporal embeddings.

Temporal part: ToD and DoW tables, concatenated and projected to the model width.
Spatial part: a location table concatenated with an affine projection of the
normalized cell center, projected to the model width. Slots without a known
location (missing history, future horizon) carry the temporal part only.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import LocationGrid, Trajectory


class SlotOrigin(str, Enum):
    HISTORICAL = "historical"
    FUTURE = "future"
    MISSING_SPATIAL = "missing-spatial"


@dataclass
class SlotEmbeddingSequence:
    vectors: torch.Tensor
    origin: list[SlotOrigin]


class SpatioTemporalEncoder(nn.Module):
    def __init__(
        self,
        grid: LocationGrid,
        d_model: int,
        slots_per_day: int = 48,
        d_tod: int = 128,
        d_dow: int = 128,
        d_loc: int = 256,
        d_coord: int = 128,
    ):
        super().__init__()
        self.grid = grid
        self.d_model = d_model
        self.slots_per_day = slots_per_day
        self.n_locations = grid.n_cells
        self.tod_table = nn.Embedding(slots_per_day, d_tod)
        self.dow_table = nn.Embedding(7, d_dow)
        self.loc_table = nn.Embedding(grid.n_cells, d_loc)
        self.coord_proj = nn.Linear(2, d_coord)
        self.temporal_proj = nn.Linear(d_tod + d_dow, d_model)
        self.spatial_proj = nn.Linear(d_loc + d_coord, d_model)
        self.register_buffer(
            "cell_centers", torch.as_tensor(grid.cell_centers(), dtype=torch.float32), persistent=False
        )

    def encode_temporal(self, tod: torch.Tensor, dow: torch.Tensor) -> torch.Tensor:
        return self.temporal_proj(torch.cat([self.tod_table(tod), self.dow_table(dow)], dim=-1))

    def encode_spatial(self, loc: torch.Tensor, coords: torch.Tensor | None = None) -> torch.Tensor:
        if coords is None:
            coords = self.cell_centers[loc]
        return self.spatial_proj(torch.cat([self.loc_table(loc), self.coord_proj(coords)], dim=-1))

    def forward(self, tod: torch.Tensor, dow: torch.Tensor, loc: torch.Tensor | None = None) -> torch.Tensor:
        """Embed slots; ``loc`` entries of -1 (or ``loc=None``) contribute no spatial term."""
        temporal = self.encode_temporal(tod, dow)
        if loc is None:
            return temporal
        present = loc >= 0
        spatial = self.encode_spatial(loc.clamp(min=0))
        return torch.where(present.unsqueeze(-1), temporal + spatial, temporal)

    def encode_sequence(
        self, traj: Trajectory, future_slots: Sequence[tuple[int, int]]
    ) -> tuple[SlotEmbeddingSequence, SlotEmbeddingSequence]:
        if len(future_slots) == 0:
            raise ValueError("horizon must contain at least one slot")
        check_temporal_indices(future_slots, self.slots_per_day)
        tod = torch.as_tensor(traj.tod)
        dow = torch.as_tensor(traj.dow)
        loc = torch.as_tensor(traj.locations)
        history = self(tod, dow, loc)
        f = np.asarray(future_slots, dtype=np.int64)
        future = self(torch.as_tensor(f[:, 0]), torch.as_tensor(f[:, 1]))
        origin = [SlotOrigin.HISTORICAL if m else SlotOrigin.MISSING_SPATIAL for m in traj.mask]
        return (
            SlotEmbeddingSequence(history, origin),
            SlotEmbeddingSequence(future, [SlotOrigin.FUTURE] * len(f)),
        )


def check_temporal_indices(slots, slots_per_day: int) -> None:
    arr = np.asarray(slots, dtype=np.int64).reshape(-1, 2)
    if ((arr[:, 0] < 0) | (arr[:, 0] >= slots_per_day)).any():
        raise IndexError(f"tod_slot outside 0..{slots_per_day - 1}")
    if ((arr[:, 1] < 0) | (arr[:, 1] > 6)).any():
        raise IndexError("dow outside 0..6")


def encode_temporal(tod_slot: int, dow: int, encoder: SpatioTemporalEncoder) -> torch.Tensor:
    check_temporal_indices([(tod_slot, dow)], encoder.slots_per_day)
    return encoder.encode_temporal(torch.tensor(tod_slot), torch.tensor(dow))


def encode_spatial(loc: int, coords, encoder: SpatioTemporalEncoder) -> torch.Tensor:
    if not 0 <= loc < encoder.n_locations:
        raise IndexError(f"location {loc} outside vocabulary of {encoder.n_locations}")
    coords = torch.as_tensor(coords, dtype=encoder.coord_proj.weight.dtype)
    if coords.shape != (2,) or (coords < 0).any() or (coords > 1).any():
        raise ValueError("coords must be a pair in [0, 1]^2")
    return encoder.encode_spatial(torch.tensor(loc), coords)
