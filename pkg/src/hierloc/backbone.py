"""Frozen sequence backbone over continuous token embeddings."""

from __future__ import annotations

import math

import torch
from torch import nn

from . import serialization
from .attention import AttentionStack


class FrozenBackbone(nn.Module):
    """Stack of attention blocks whose parameters never receive gradients.

    Weights come from a seeded initialization (``weight_source="seeded-random"``) or
    from an ``RCKPT`` file of ``blocks.*`` tensors. Residual-branch output projections
    are scaled by ``1/sqrt(2*depth)`` at seeded init so deep stacks stay close to the
    identity. The block stack is always run without dropout.
    """

    def __init__(self, dim: int, depth: int = 2, heads: int = 4, seed: int = 0, weights_path=None):
        super().__init__()
        self.dim = dim
        self.depth = depth
        self.heads = heads
        self.seed = seed
        self.weight_source = "file" if weights_path is not None else "seeded-random"
        self.stack = AttentionStack(dim, depth, heads, dropout=0.0)
        if weights_path is not None:
            self.load_weights(weights_path)
        else:
            self._seeded_init(seed)
        self.stack.requires_grad_(False)

    @property
    def frozen(self) -> bool:
        return True

    def _seeded_init(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        out_scale = 1.0 / math.sqrt(2 * max(self.depth, 1))
        with torch.no_grad():
            for name, p in self.stack.named_parameters():
                if p.dim() == 1:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                    continue
                std = 1.0 / math.sqrt(p.shape[1])
                if name.endswith(("to_out.weight", "ffn_out.weight")):
                    std *= out_scale
                p.copy_(torch.randn(p.shape, generator=gen) * std)

    def train(self, mode: bool = True):
        # frozen weights: the stack stays in eval mode regardless
        super().train(mode)
        self.stack.eval()
        return self

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.dim:
            raise ValueError(f"backbone width {self.dim} does not match input width {x.shape[-1]}")
        return self.stack(x)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def state_tensors(self) -> dict[str, torch.Tensor]:
        return {k: v for k, v in self.stack.state_dict().items()}

    def digest(self) -> str:
        return serialization.digest({k: v.float() for k, v in self.state_tensors().items()})

    def save_weights(self, path) -> None:
        serialization.save({k: v.float() for k, v in self.state_tensors().items()}, path)

    def load_weights(self, path) -> None:
        tensors = serialization.load(path)
        state = {k: torch.as_tensor(v) for k, v in tensors.items()}
        self.stack.load_state_dict(state)


def backbone_forward(ce: torch.Tensor, backbone: FrozenBackbone) -> torch.Tensor:
    return backbone(ce)


def trainable_fraction(model: nn.Module) -> float:
    """Optimizer-visible parameters over all parameters (1.0 for a parameterless model)."""
    total = sum(p.numel() for p in model.parameters())
    if total == 0:
        return 1.0
    return sum(p.numel() for p in model.parameters() if p.requires_grad) / total
