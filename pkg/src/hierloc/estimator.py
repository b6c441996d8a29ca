"""scikit-learn style estimator around the next-day location model."""

from __future__ import annotations

from dataclasses import fields
from typing import Iterable, Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import DatasetSplit, LocationGrid, Trajectory, split_by_days
from .metrics import MetricsReport, accuracy_at_k, evaluate_predictions
from .model import ModelConfig, MobilityModel
from .semantic import HashingProvider, SemanticCache, SemanticProvider, precompute_semantics
from .training import TrainConfig, TrainResult, train
from .windows import WindowBatch, build_windows, horizon_days_available


def check_trajectories(X, grid: LocationGrid, slots_per_day: int) -> list[Trajectory]:
    """Validate a collection of trajectories against the model's grid and day resolution."""
    if isinstance(X, Trajectory):
        X = [X]
    trajs = list(X)
    if not trajs:
        raise ValueError("expected at least one trajectory")
    for t in trajs:
        if not isinstance(t, Trajectory):
            raise TypeError(f"expected Trajectory objects, got {type(t).__name__}")
        if t.slots_per_day != slots_per_day:
            raise ValueError(f"trajectory {t.user_id!r} has {t.slots_per_day} slots/day, model expects {slots_per_day}")
        if len(t.locations) and t.locations.max() >= grid.n_cells:
            raise ValueError(f"trajectory {t.user_id!r} has cell ids outside the {grid.width}x{grid.height} grid")
    return trajs


def build_model(config: ModelConfig, seed: int) -> MobilityModel:
    """Seeded construction so parameter initialization is reproducible."""
    torch.manual_seed(seed)
    return MobilityModel(config)


class MobilityPredictor(BaseEstimator):
    """Predicts a user's next-day location distribution from the preceding days.

    ``fit`` takes a list of :class:`Trajectory`, splits the shared day span 70/20/10
    chronologically, trains on windows whose horizon day falls in the train range and
    selects the epoch with the best Acc@1 on the validation range. ``predict_proba``
    returns one (H, |L|) distribution per (user, horizon day).
    """

    def __init__(
        self,
        grid_width=20, grid_height=20, slots_per_day=48, lookback=336, horizon=48,
        segment_length=48, d_model=128, d_tod=128, d_dow=128, d_loc=256, d_coord=128,
        heads=4, intra_depth=1, inter_depth=1, dropout=0.1, backbone_depth=14,
        backbone_heads=4, backbone_seed=0, backbone_weights=None, use_tokenization=True,
        use_hierarchical_attention=True, use_traj_info=True, use_task_desc=True,
        learning_rate=5e-4, weight_decay=0.01, batch_size=64, epochs=30, seed=0,
        provider_seed=0,
    ):
        self.grid_width = grid_width
        self.grid_height = grid_height
        self.slots_per_day = slots_per_day
        self.lookback = lookback
        self.horizon = horizon
        self.segment_length = segment_length
        self.d_model = d_model
        self.d_tod = d_tod
        self.d_dow = d_dow
        self.d_loc = d_loc
        self.d_coord = d_coord
        self.heads = heads
        self.intra_depth = intra_depth
        self.inter_depth = inter_depth
        self.dropout = dropout
        self.backbone_depth = backbone_depth
        self.backbone_heads = backbone_heads
        self.backbone_seed = backbone_seed
        self.backbone_weights = backbone_weights
        self.use_tokenization = use_tokenization
        self.use_hierarchical_attention = use_hierarchical_attention
        self.use_traj_info = use_traj_info
        self.use_task_desc = use_task_desc
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.provider_seed = provider_seed

    def model_config(self) -> ModelConfig:
        params = self.get_params()
        return ModelConfig(**{f.name: params[f.name] for f in fields(ModelConfig)})

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        return TrainConfig(**{f.name: params[f.name] for f in fields(TrainConfig)})

    def _provider(self) -> SemanticProvider:
        return HashingProvider(self.d_model, self.provider_seed)

    def _windows(self, trajs, days, cache) -> WindowBatch:
        c = self.model_config_
        return build_windows(
            trajs, days, lookback=c.lookback, horizon=c.horizon, segment_length=c.segment_length,
            dim=c.d_model, cache=cache, use_traj_info=c.use_traj_info, use_task_desc=c.use_task_desc,
        )

    def _cache_for(self, trajs, days) -> SemanticCache:
        if self.semantic_cache_ is not None:
            return self.semantic_cache_
        c = self.model_config_
        return precompute_semantics(
            trajs, days, self._provider(), dim=c.d_model, grid=c.grid,
            lookback=c.lookback, segment_length=c.segment_length,
        )

    def fit(self, X, y=None, semantic_cache: Optional[SemanticCache] = None, split: Optional[DatasetSplit] = None,
            log_path=None, checkpoint_path=None):
        self.model_config_ = c = self.model_config()
        trajs = check_trajectories(X, c.grid, c.slots_per_day)
        self.split_ = split if split is not None else split_by_days(trajs)
        usable = sorted({d for t in trajs for d in horizon_days_available(t, c.lookback, c.horizon)})
        if semantic_cache is not None and not semantic_cache.sealed:
            raise ValueError("semantic cache must be sealed before training")
        self.semantic_cache_ = semantic_cache
        cache = self._cache_for(trajs, [d for d in usable if d < self.split_.test.start])
        train_w = self._windows(trajs, self.split_.train, cache)
        val_w = self._windows(trajs, self.split_.val, cache)
        if len(train_w) == 0:
            raise ValueError(f"no training day has {c.lookback} slots of history")
        self.model_ = build_model(c, self.seed)
        self.result_: TrainResult = train(
            self.model_, train_w, val_w if len(val_w) else None, self.train_config(),
            log_path=log_path, checkpoint_path=checkpoint_path,
        )
        return self

    def windows(self, X, days: Optional[Iterable[int]] = None) -> WindowBatch:
        check_is_fitted(self, "model_")
        c = self.model_config_
        trajs = check_trajectories(X, c.grid, c.slots_per_day)
        days = self.split_.test if days is None else days
        return self._windows(trajs, days, self._cache_for(trajs, days))

    def predict_proba(self, X, days: Optional[Iterable[int]] = None) -> np.ndarray:
        """(n_windows, H, |L|) probabilities for each (user, day); test days by default."""
        w = self.windows(X, days)
        return self.model_.predict_proba(w).numpy()

    def predict(self, X, days: Optional[Iterable[int]] = None) -> np.ndarray:
        return self.predict_proba(X, days).argmax(-1)

    def evaluate(self, X, days: Optional[Iterable[int]] = None) -> MetricsReport:
        w = self.windows(X, days)
        probs = self.model_.predict_proba(w).numpy()
        c = self.model_config_
        return evaluate_predictions(probs, w.targets.numpy(), w.fut_tod.numpy(), w.fut_dow.numpy(), c.grid, c.slots_per_day)

    def score(self, X, y=None, days: Optional[Iterable[int]] = None) -> float:
        """Acc@1 over observed horizon slots."""
        w = self.windows(X, days)
        return accuracy_at_k(self.model_.predict_proba(w).numpy(), w.targets.numpy(), 1)
