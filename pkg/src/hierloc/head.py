"""Location head: logits over grid cells for the horizon positions, loss and ranking."""

from __future__ import annotations

import csv

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

PROB_FLOOR = 1e-30


class PredictionHead(nn.Module):
    def __init__(self, dim: int, n_locations: int):
        super().__init__()
        self.dim = dim
        self.n_locations = n_locations
        self.proj = nn.Linear(dim, n_locations)

    def forward(self, hidden: torch.Tensor, horizon: int) -> torch.Tensor:
        """Logits for the last ``horizon`` rows of ``hidden``: (..., H, |L|)."""
        if hidden.shape[-1] != self.dim:
            raise ValueError(f"hidden width {hidden.shape[-1]} does not match head width {self.dim}")
        if not 1 <= horizon <= hidden.shape[-2]:
            raise ValueError(f"horizon {horizon} not within 1..{hidden.shape[-2]}")
        return self.proj(hidden[..., -horizon:, :])


def predict_distribution(hidden: torch.Tensor, head: PredictionHead, horizon: int) -> torch.Tensor:
    # torch.softmax subtracts the row max internally
    return torch.softmax(head(hidden, horizon), dim=-1)


def _masked_mean(nll: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
    n = present.sum()
    if n == 0:
        raise ValueError("no observed targets: loss is undefined")
    return (nll * present).sum() / n


def cross_entropy_loss(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean ``-log p(target)`` over present targets (``-1`` marks an absent target).

    Probabilities are clamped at ``1e-30`` before the log.
    """
    targets = torch.as_tensor(targets)
    present = targets >= 0
    logp = torch.log(probs.clamp(min=PROB_FLOOR))
    nll = -logp.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return _masked_mean(nll, present)


def cross_entropy_from_logits(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    present = targets >= 0
    nll = -F.log_softmax(logits, dim=-1).gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return _masked_mean(nll, present)


def ranking(row) -> np.ndarray:
    """All ids by descending probability, exact ties broken by ascending id."""
    row = np.asarray(row)
    return np.lexsort((np.arange(row.shape[-1]), -row))


def top_k(row, k: int) -> list[int]:
    row = np.asarray(row)
    if not 1 <= k <= row.shape[-1]:
        raise ValueError(f"k={k} outside 1..{row.shape[-1]}")
    return [int(i) for i in ranking(row)[:k]]


def write_top_k(path, user_ids, horizon_days, fut_tod, probs, k: int = 5) -> None:
    """CSV ``user_id,day_index,tod_slot,rank,cell_id,prob`` with the top-``k`` cells per slot."""
    probs = np.asarray(probs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "day_index", "tod_slot", "rank", "cell_id", "prob"])
        for b, user in enumerate(user_ids):
            for j in range(probs.shape[1]):
                for r, cell in enumerate(top_k(probs[b, j], k), start=1):
                    w.writerow([user, int(horizon_days[b]), int(fut_tod[b, j]), r, cell, repr(float(probs[b, j, cell]))])
