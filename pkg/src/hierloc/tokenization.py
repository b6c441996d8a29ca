"""Hierarchical temporal tokenization.

The slot sequence is cut into non-overlapping segments of ``segment_length`` slots,
each segment is refined by a shared intra-segment attention stack and pooled to a
single token by learnable-query attention, and the segment tokens are refined
jointly by an inter-segment stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .attention import AttentionStack, attention_stack


@dataclass(frozen=True)
class SegmentationConfig:
    lookback: int = 336
    segment_length: int = 48

    def __post_init__(self):
        if self.segment_length < 1 or self.lookback < 1:
            raise ValueError("lookback and segment_length must be positive")
        if self.lookback % self.segment_length:
            raise ValueError(
                f"lookback {self.lookback} is not divisible by segment length {self.segment_length}"
            )

    @property
    def n_segments(self) -> int:
        return self.lookback // self.segment_length


def segment(embeddings: torch.Tensor, segment_length: int) -> torch.Tensor:
    """View (..., T, D) as (..., N, L, D)."""
    T = embeddings.shape[-2]
    if segment_length < 1 or T % segment_length:
        raise ValueError(f"sequence length {T} is not divisible by segment length {segment_length}")
    return embeddings.unflatten(-2, (T // segment_length, segment_length))


class AttentionPooling(nn.Module):
    """Single learnable query attending over the rows of a segment."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.query = nn.Parameter(torch.randn(dim) / math.sqrt(dim))
        self.to_k = nn.Linear(dim, dim)
        self.to_v = nn.Linear(dim, dim)

    def weights(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.to_k(x) @ self.query / math.sqrt(self.dim), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (..., L, D) -> (..., D)
        return (self.weights(x).unsqueeze(-2) @ self.to_v(x)).squeeze(-2)


class TemporalTokenizer(nn.Module):
    def __init__(
        self,
        dim: int,
        segment_length: int = 48,
        intra_depth: int = 2,
        inter_depth: int = 2,
        heads: int = 4,
        dropout: float = 0.1,
        hierarchical_attention: bool = True,
    ):
        super().__init__()
        self.segment_length = segment_length
        self.hierarchical_attention = hierarchical_attention
        self.intra = AttentionStack(dim, intra_depth, heads, dropout) if hierarchical_attention else None
        self.pool = AttentionPooling(dim)
        self.inter = AttentionStack(dim, inter_depth, heads, dropout) if hierarchical_attention else None

    def pooled(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Raw pooled segment tokens (..., N, D) before inter-segment refinement."""
        segments = segment(embeddings, self.segment_length)
        if self.intra is not None:
            segments = self.intra(segments)
        return self.pool(segments)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        tokens = self.pooled(embeddings)
        if self.inter is not None:
            tokens = self.inter(tokens)
        return tokens


def intra_attend(seg: torch.Tensor, stack: AttentionStack, mode: str = "eval") -> torch.Tensor:
    return attention_stack(seg, stack, mode)


def pool_segment(attended: torch.Tensor, pooler: AttentionPooling) -> torch.Tensor:
    if attended.dim() < 2 or attended.shape[-2] < 1 or attended.shape[-1] != pooler.dim:
        raise ValueError(f"expected (..., L, {pooler.dim}) input, got {tuple(attended.shape)}")
    return pooler(attended)


def inter_attend(tokens: torch.Tensor, stack: AttentionStack, mode: str = "eval") -> torch.Tensor:
    return attention_stack(tokens, stack, mode)
