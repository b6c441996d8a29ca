"""End-to-end next-day location model.

slots -> spatio-temporal embeddings -> segment tokens (intra attention, pooling,
inter attention) -> + semantic vectors -> frozen backbone -> location head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
from torch import nn

from .backbone import FrozenBackbone
from .data import LocationGrid
from .encoding import SpatioTemporalEncoder
from .head import PredictionHead, cross_entropy_from_logits
from .semantic import align
from .tokenization import SegmentationConfig, TemporalTokenizer
from .windows import WindowBatch


@dataclass(frozen=True)
class ModelConfig:
    grid_width: int = 20
    grid_height: int = 20
    slots_per_day: int = 48
    lookback: int = 336
    horizon: int = 48
    segment_length: int = 48
    d_model: int = 128
    d_tod: int = 128
    d_dow: int = 128
    d_loc: int = 256
    d_coord: int = 128
    heads: int = 4
    intra_depth: int = 1
    inter_depth: int = 1
    dropout: float = 0.1
    backbone_depth: int = 14
    backbone_heads: int = 4
    backbone_seed: int = 0
    backbone_weights: Optional[str] = None
    use_tokenization: bool = True
    use_hierarchical_attention: bool = True
    use_traj_info: bool = True
    use_task_desc: bool = True

    def __post_init__(self):
        SegmentationConfig(self.lookback, self.segment_length)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.lookback % self.slots_per_day:
            raise ValueError("lookback must cover whole days")

    @property
    def grid(self) -> LocationGrid:
        return LocationGrid(self.grid_width, self.grid_height)

    @property
    def n_segments(self) -> int:
        return self.lookback // self.segment_length

    @property
    def backbone_length(self) -> int:
        """Number of tokens the backbone sees per sample."""
        history = self.n_segments if self.use_tokenization else self.lookback
        return history + self.horizon

    def to_dict(self) -> dict:
        return asdict(self)


class MobilityModel(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = c = config
        self.encoder = SpatioTemporalEncoder(
            c.grid, c.d_model, c.slots_per_day, c.d_tod, c.d_dow, c.d_loc, c.d_coord
        )
        self.tokenizer = (
            TemporalTokenizer(
                c.d_model, c.segment_length, c.intra_depth, c.inter_depth, c.heads, c.dropout,
                hierarchical_attention=c.use_hierarchical_attention,
            )
            if c.use_tokenization else None
        )
        self.backbone = FrozenBackbone(
            c.d_model, c.backbone_depth, c.backbone_heads, c.backbone_seed, c.backbone_weights
        )
        self.head = PredictionHead(c.d_model, c.grid.n_cells)

    def backbone_input(self, batch: WindowBatch) -> torch.Tensor:
        c = self.config
        history = self.encoder(batch.hist_tod, batch.hist_dow, batch.hist_loc)
        future = self.encoder(batch.fut_tod, batch.fut_dow)
        seg_te = batch.segment_te.to(history.dtype)
        task_te = batch.task_te.to(history.dtype)
        if self.tokenizer is not None:
            tokens = self.tokenizer(history)
        else:
            tokens = history
            seg_te = seg_te.repeat_interleave(c.segment_length, dim=-2)
        return align(tokens, future, seg_te, task_te)

    def forward(self, batch: WindowBatch) -> torch.Tensor:
        """Location logits (B, H, |L|)."""
        hidden = self.backbone(self.backbone_input(batch))
        return self.head(hidden, self.config.horizon)

    def loss(self, batch: WindowBatch) -> torch.Tensor:
        return cross_entropy_from_logits(self(batch), batch.targets)

    @torch.no_grad()
    def predict_proba(self, batch: WindowBatch, batch_size: int = 256) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            chunks = [
                torch.softmax(self(batch.subset(range(i, min(i + batch_size, len(batch))))), dim=-1)
                for i in range(0, len(batch), batch_size)
            ]
        finally:
            self.train(was_training)
        if not chunks:
            return torch.zeros((0, self.config.horizon, self.config.grid.n_cells))
        return torch.cat(chunks)

    def trainable_state(self) -> dict[str, torch.Tensor]:
        return {n: p for n, p in self.named_parameters() if p.requires_grad}


def parameter_groups(model: MobilityModel) -> dict[str, list[tuple[str, nn.Parameter]]]:
    """Trainable parameters grouped by module (encoder, intra, pool, inter, head)."""
    groups: dict[str, list] = {}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        parts = name.split(".")
        group = parts[1] if parts[0] == "tokenizer" else parts[0]
        groups.setdefault(group, []).append((name, p))
    return groups
