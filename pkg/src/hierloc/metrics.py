"""Ranking and sequence metrics: Acc@k, MRR, DTW, BLEU and accuracy trends by slot and weekday."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import LocationGrid

BLEU_FLOOR = 1e-9


class UndefinedMetricError(ValueError):
    pass


def _present(targets) -> np.ndarray:
    targets = np.asarray(targets)
    present = targets >= 0
    if not present.any():
        raise UndefinedMetricError("no observed targets")
    return present


def target_ranks(probs, targets) -> np.ndarray:
    """1-based rank of each target under descending probability, ties to the lower id.

    ``rank = 1 + #{p > p_t} + #{p == p_t and id < t}``. Absent targets (-1) get rank 0.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    safe = np.clip(targets, 0, None)
    pt = np.take_along_axis(probs, safe[..., None], axis=-1)
    ids = np.arange(probs.shape[-1])
    before = (probs > pt) | ((probs == pt) & (ids < safe[..., None]))
    ranks = 1 + before.sum(axis=-1)
    return np.where(targets >= 0, ranks, 0)


def _hit_rate(ranks: np.ndarray, present: np.ndarray, k: int) -> float:
    return float(((ranks <= k) & present).sum() / present.sum())


def accuracy_at_k(probs, targets, k: int) -> float:
    return _hit_rate(target_ranks(probs, targets), _present(targets), k)


def mrr(probs, targets) -> float:
    present = _present(targets)
    ranks = target_ranks(probs, targets)
    return float((1.0 / np.where(present, ranks, 1))[present].mean())


def dtw_distance(pred: Sequence[int], true: Sequence[int], grid: LocationGrid) -> float:
    """Unconstrained DTW (steps (1,0), (0,1), (1,1)) with Euclidean cost on (col, row)."""
    if len(pred) == 0 or len(true) == 0:
        raise ValueError("DTW needs two nonempty paths")
    a = grid.coords(pred).astype(float)
    b = grid.coords(true).astype(float)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def modified_precision(pred: Sequence, true: Sequence, n: int) -> float:
    cand = _ngrams(pred, n)
    if not cand:
        return 0.0
    ref = _ngrams(true, n)
    return sum(min(c, ref[g]) for g, c in cand.items()) / sum(cand.values())


def bleu(pred: Sequence, true: Sequence, max_n: int = 4) -> float:
    """Sentence BLEU for equal-length sequences (brevity penalty 1), zero precisions floored at 1e-9."""
    if len(pred) != len(true):
        raise ValueError(f"BLEU expects horizon-aligned sequences, got lengths {len(pred)} and {len(true)}")
    if len(pred) == 0:
        raise ValueError("BLEU of empty sequences is undefined")
    orders = range(1, min(max_n, len(pred)) + 1)
    logs = [math.log(max(modified_precision(pred, true, n), BLEU_FLOOR)) for n in orders]
    return math.exp(sum(logs) / len(logs))


@dataclass
class TrendReport:
    tod_acc1: list  # per slot, None when no records
    dow_acc1: list  # per weekday 0=Monday, None when no records
    weekday_acc1: Optional[float]
    weekend_acc1: Optional[float]

    @property
    def weekend_delta(self) -> Optional[float]:
        if self.weekday_acc1 is None or self.weekend_acc1 is None:
            return None
        return self.weekend_acc1 - self.weekday_acc1


def trend_decomposition(tod, dow, correct, slots_per_day: int = 48) -> TrendReport:
    """Bucket means of per-prediction correctness by time-of-day slot and weekday."""
    tod = np.asarray(tod, dtype=np.int64).ravel()
    dow = np.asarray(dow, dtype=np.int64).ravel()
    correct = np.asarray(correct, dtype=float).ravel()

    def buckets(keys, n):
        counts = np.bincount(keys, minlength=n)
        sums = np.bincount(keys, weights=correct, minlength=n)
        return [float(s / c) if c else None for s, c in zip(sums, counts)]

    weekend = dow >= 5
    return TrendReport(
        tod_acc1=buckets(tod, slots_per_day),
        dow_acc1=buckets(dow, 7),
        weekday_acc1=float(correct[~weekend].mean()) if (~weekend).any() else None,
        weekend_acc1=float(correct[weekend].mean()) if weekend.any() else None,
    )


@dataclass
class MetricsReport:
    acc1: float
    acc3: float
    acc5: float
    mrr: float
    dtw: float
    bleu: float
    n_predictions: int
    trend: TrendReport
    max_row_sum_error: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trend"]["weekend_delta"] = self.trend.weekend_delta
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(self.to_json() + "\n")
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for name in ("acc1", "acc3", "acc5", "mrr", "dtw", "bleu"):
                w.writerow([name, repr(getattr(self, name))])
        _write_trend(out / "trend_tod.csv", "tod_slot", self.trend.tod_acc1)
        _write_trend(out / "trend_dow.csv", "dow", self.trend.dow_acc1)


def _write_trend(path, key: str, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key, "acc1"])
        for i, v in enumerate(values):
            w.writerow([i, "" if v is None else repr(v)])


def evaluate_predictions(probs, targets, fut_tod, fut_dow, grid: LocationGrid, slots_per_day: int = 48) -> MetricsReport:
    """Metrics over a (B, H, |L|) probability tensor against (B, H) targets (-1 = unobserved).

    DTW and BLEU compare each sample's top-1 path with its observed ground truth,
    restricted to the observed horizon slots, and are averaged over samples.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    present = _present(targets)
    row_err = float(np.abs(probs.sum(-1) - 1.0).max()) if probs.size else 0.0
    ranks = target_ranks(probs, targets)
    top1 = probs.argmax(-1)
    dtws, bleus = [], []
    for pred_row, true_row, mask in zip(top1, targets, present):
        if not mask.any():
            continue
        p, t = pred_row[mask], true_row[mask]
        dtws.append(dtw_distance(p, t, grid))
        bleus.append(bleu(list(p), list(t)))
    trend = trend_decomposition(
        np.asarray(fut_tod)[present], np.asarray(fut_dow)[present], (ranks == 1)[present],
        slots_per_day,
    )
    return MetricsReport(
        acc1=_hit_rate(ranks, present, 1), acc3=_hit_rate(ranks, present, 3), acc5=_hit_rate(ranks, present, 5),
        mrr=float((1.0 / ranks[present]).mean()),
        dtw=float(np.mean(dtws)), bleu=float(np.mean(bleus)),
        n_predictions=int(present.sum()),
        trend=trend,
        max_row_sum_error=row_err,
    )
