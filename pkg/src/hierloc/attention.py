"""Pre-norm multi-head self-attention block with a gated feed-forward network."""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn


class AttentionBlock(nn.Module):
    """``Z = LN(X) + MHA(LN(X))``, ``out = Z + GatedFFN(LN(Z))``.

    ``GatedFFN(Z) = W2 GELU(W1 Z) * sigmoid(Wgate Z)`` with a 4x expansion.
    No causal mask and no positional term: the block is permutation equivariant.
    """

    def __init__(self, dim: int, heads: int = 4, dropout: float = 0.1, ffn_mult: int = 4):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        if not 0 <= dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.norm_attn = nn.LayerNorm(dim, eps=1e-5)
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(dim, dim, bias=False)
        self.to_v = nn.Linear(dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim, bias=False)
        self.norm_ffn = nn.LayerNorm(dim, eps=1e-5)
        self.ffn_in = nn.Linear(dim, ffn_mult * dim, bias=False)
        self.ffn_out = nn.Linear(ffn_mult * dim, dim, bias=False)
        self.gate = nn.Linear(dim, dim, bias=False)
        self.dropout = nn.Dropout(dropout)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        return x.unflatten(-1, (self.heads, self.head_dim)).transpose(-3, -2)

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax attention matrix of shape (..., heads, n, n) for input ``x``."""
        xn = self.norm_attn(x)
        q, k = self._split_heads(self.to_q(xn)), self._split_heads(self.to_k(xn))
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        xn = self.norm_attn(x)
        q, k, v = (self._split_heads(proj(xn)) for proj in (self.to_q, self.to_k, self.to_v))
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        heads = (attn @ v).transpose(-3, -2).flatten(-2)
        z = xn + self.dropout(self.to_out(heads))
        zn = self.norm_ffn(z)
        gated = self.ffn_out(F.gelu(self.ffn_in(zn))) * torch.sigmoid(self.gate(zn))
        return z + self.dropout(gated)


class AttentionStack(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int = 4, dropout: float = 0.1):
        super().__init__()
        self.dim = dim
        self.blocks = nn.ModuleList(AttentionBlock(dim, heads, dropout) for _ in range(depth))

    def __len__(self) -> int:
        return len(self.blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def _check_input(x: torch.Tensor, dim: int) -> None:
    if x.dim() < 2 or x.shape[-2] < 1:
        raise ValueError(f"expected a (..., n, d) tensor with n >= 1, got shape {tuple(x.shape)}")
    if x.shape[-1] != dim:
        raise ValueError(f"input width {x.shape[-1]} does not match block width {dim}")
    if not torch.isfinite(x).all():
        raise ValueError("non-finite values in attention input")


def _run(module: nn.Module, x: torch.Tensor, mode: str) -> torch.Tensor:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = module.training
    module.train(mode == "train")
    try:
        return module(x)
    finally:
        module.train(was_training)


def attention_block(x: torch.Tensor, block: AttentionBlock, mode: str = "eval") -> torch.Tensor:
    _check_input(x, block.dim)
    return _run(block, x, mode)


def attention_stack(x: torch.Tensor, blocks: Sequence[AttentionBlock] | AttentionStack, mode: str = "eval") -> torch.Tensor:
    if isinstance(blocks, AttentionStack):
        blocks = list(blocks.blocks)
    if len(blocks) == 0:
        raise ValueError("attention_stack needs at least one block")
    _check_input(x, blocks[0].dim)
    for block in blocks:
        x = _run(block, x, mode)
    return x
