"""Training loop, checkpoints, finite-difference gradient check and the lr x weight-decay sweep."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import serialization
from .backbone import trainable_fraction
from .metrics import accuracy_at_k
from .model import ModelConfig, MobilityModel, parameter_groups
from .windows import WindowBatch

log = logging.getLogger(__name__)

LEARNING_RATES = (1e-4, 3e-4, 5e-4)
WEIGHT_DECAYS = (0.0, 0.001, 0.01)
BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_acc1: float = -math.inf

    @property
    def losses(self) -> list:
        return [rec["train_loss"] for rec in self.history]


def make_optimizer(model: MobilityModel, cfg: TrainConfig) -> torch.optim.AdamW:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.learning_rate, betas=BETAS, eps=ADAM_EPS,
                             weight_decay=cfg.weight_decay)


def validation_acc1(model: MobilityModel, windows: WindowBatch) -> Optional[float]:
    if len(windows) == 0 or not (windows.targets >= 0).any():
        return None
    probs = model.predict_proba(windows)
    return accuracy_at_k(probs.numpy(), windows.targets.numpy(), 1)


# --- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def checkpoint_tensors(
    model: MobilityModel,
    optimizer: Optional[torch.optim.Optimizer] = None,
    train_cfg: Optional[TrainConfig] = None,
    state: Optional[dict] = None,
) -> dict:
    out = {f"param/{n}": p.detach().float() for n, p in model.trainable_state().items()}
    out["meta/version"] = np.array([CHECKPOINT_VERSION], dtype=np.int64)
    out["meta/backbone_digest"] = serialization.encode_text(model.backbone.digest())
    snapshot = {"model": model.config.to_dict(), "train": asdict(train_cfg) if train_cfg else None}
    out["meta/config"] = serialization.encode_text(json.dumps(snapshot, sort_keys=True))
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for p, st in optimizer.state.items():
            n = names[id(p)]
            out[f"optim/{n}/exp_avg"] = st["exp_avg"].float()
            out[f"optim/{n}/exp_avg_sq"] = st["exp_avg_sq"].float()
            out[f"optim/{n}/step"] = np.array([float(st["step"])], dtype=np.float64)
    if state is not None:
        out["meta/epoch"] = np.array([state["epoch"]], dtype=np.int64)
        out["meta/history"] = serialization.encode_text(json.dumps(state["history"], sort_keys=True))
        out["meta/best_epoch"] = np.array([-1 if state["best_epoch"] is None else state["best_epoch"]], dtype=np.int64)
        out["meta/best_val_acc1"] = np.array([state["best_val_acc1"]], dtype=np.float64)
        out["rng/torch"] = state["torch_rng"]
        out["rng/shuffle"] = state["shuffle_rng"]
        for n, t in state["best_params"].items():
            out[f"best/{n}"] = t.float()
    return out


def save_checkpoint(path, model, optimizer=None, train_cfg=None, state=None) -> None:
    serialization.save(checkpoint_tensors(model, optimizer, train_cfg, state), path)


def checkpoint_config(tensors: dict) -> tuple[ModelConfig, Optional[TrainConfig]]:
    snapshot = json.loads(serialization.decode_text(tensors["meta/config"]))
    train = TrainConfig(**snapshot["train"]) if snapshot.get("train") else None
    return ModelConfig(**snapshot["model"]), train


def load_model(path) -> MobilityModel:
    """Rebuild a model from a checkpoint; the backbone is re-created and its digest verified."""
    tensors = serialization.load(path)
    model_cfg, _ = checkpoint_config(tensors)
    model = MobilityModel(model_cfg)
    restore_parameters(model, tensors, "param/")
    return model


def restore_parameters(model: MobilityModel, tensors: dict, prefix: str) -> None:
    digest = serialization.decode_text(tensors["meta/backbone_digest"])
    if digest != model.backbone.digest():
        raise serialization.CheckpointError("backbone weights differ from the checkpoint's digest")
    with torch.no_grad():
        for n, p in model.trainable_state().items():
            key = prefix + n
            if key not in tensors:
                raise serialization.CheckpointError(f"checkpoint lacks {key}")
            p.copy_(torch.as_tensor(tensors[key]))


# --- training ------------------------------------------------------------------

def train(
    model: MobilityModel,
    train_windows: WindowBatch,
    val_windows: Optional[WindowBatch],
    cfg: TrainConfig = TrainConfig(),
    *,
    log_path=None,
    checkpoint_path=None,
    resume_from=None,
    stop_after_epochs: Optional[int] = None,
    max_steps: Optional[int] = None,
) -> TrainResult:
    """Mini-batch AdamW over the trainable parameters; the backbone stays frozen.

    Each epoch logs the mean train loss and validation Acc@1. The parameters of the best
    validation epoch (ties to the earliest) are loaded into ``model`` at the end.
    ``checkpoint_path`` receives a resumable checkpoint after every epoch.
    """
    if len(train_windows) == 0:
        raise ValueError("no training windows")
    expected = (model.config.n_segments, model.config.d_model)
    if tuple(train_windows.segment_te.shape[1:]) != expected:
        raise ValueError(f"semantic vectors have shape {tuple(train_windows.segment_te.shape[1:])}, expected {expected}")

    optimizer = make_optimizer(model, cfg)
    shuffle = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    result = TrainResult()
    best_params = {n: p.detach().clone() for n, p in model.trainable_state().items()}
    start_epoch = 0
    digest_before = model.backbone.digest()

    if resume_from is not None:
        tensors = serialization.load(resume_from)
        restore_parameters(model, tensors, "param/")
        names = dict(model.named_parameters())
        for key in tensors:
            if key.startswith("optim/") and key.endswith("/exp_avg"):
                n = key[len("optim/"):-len("/exp_avg")]
                optimizer.state[names[n]] = {
                    "step": torch.tensor(float(tensors[f"optim/{n}/step"][0])),
                    "exp_avg": torch.as_tensor(tensors[key]).clone(),
                    "exp_avg_sq": torch.as_tensor(tensors[f"optim/{n}/exp_avg_sq"]).clone(),
                }
        start_epoch = int(tensors["meta/epoch"][0])
        result.history = json.loads(serialization.decode_text(tensors["meta/history"]))
        best = int(tensors["meta/best_epoch"][0])
        result.best_epoch = None if best < 0 else best
        result.best_val_acc1 = float(tensors["meta/best_val_acc1"][0])
        torch.set_rng_state(torch.as_tensor(tensors["rng/torch"]))
        shuffle.set_state(torch.as_tensor(tensors["rng/shuffle"]))
        best_params = {n: torch.as_tensor(tensors[f"best/{n}"]).clone() for n in best_params}

    log_fh = open(log_path, "a" if resume_from else "w") if log_path else None
    fraction = trainable_fraction(model)
    steps = 0
    try:
        end_epoch = cfg.epochs if stop_after_epochs is None else min(cfg.epochs, start_epoch + stop_after_epochs)
        for epoch in range(start_epoch, end_epoch):
            model.train()
            order = torch.randperm(len(train_windows), generator=shuffle)
            total, count = 0.0, 0
            for i in range(0, len(order), cfg.batch_size):
                batch = train_windows.subset(order[i:i + cfg.batch_size])
                loss = model.loss(batch)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {i // cfg.batch_size}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                total += loss.item()
                count += 1
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
            val = validation_acc1(model, val_windows) if val_windows is not None else None
            record = {"epoch": epoch, "train_loss": total / count, "val_acc1": val,
                      "trainable_fraction": fraction}
            result.history.append(record)
            if val is not None and val > result.best_val_acc1:
                result.best_val_acc1, result.best_epoch = val, epoch
                best_params = {n: p.detach().clone() for n, p in model.trainable_state().items()}
            log.info("epoch %d loss %.4f val_acc1 %s", epoch, record["train_loss"], val)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if checkpoint_path is not None:
                state = {"epoch": epoch + 1, "history": result.history, "best_epoch": result.best_epoch,
                         "best_val_acc1": result.best_val_acc1, "torch_rng": torch.get_rng_state(),
                         "shuffle_rng": shuffle.get_state(), "best_params": best_params}
                save_checkpoint(checkpoint_path, model, optimizer, cfg, state)
            if max_steps is not None and steps >= max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()

    if result.best_epoch is not None:
        with torch.no_grad():
            for n, p in model.trainable_state().items():
                p.copy_(best_params[n])
    if model.backbone.digest() != digest_before:
        raise NumericError("backbone weights changed during training")
    model.eval()
    return result


# --- gradient check ------------------------------------------------------------

@dataclass
class GradientReport:
    groups: dict            # group -> max relative error
    checked: dict           # group -> number of entries compared
    failures: list          # groups above tolerance
    frozen: dict            # parameter -> "no gradient tracked"

    @property
    def passed(self) -> bool:
        return not self.failures


class GradientCheckError(AssertionError):
    pass


def gradient_check(
    model: MobilityModel,
    batch: WindowBatch,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    step: float = 1e-6,
    max_entries: int = 48,
    seed: int = 0,
    raise_on_failure: bool = True,
) -> GradientReport:
    """Compare autograd gradients of the batch loss with central differences, in float64.

    Tensors with more than ``max_entries`` elements are checked on a seeded random subset
    plus their largest-gradient entries. An entry agrees when
    ``|analytic - numeric| <= atol + rtol * |numeric|``.
    """
    c = model.config
    if not (c.d_model <= 16 and c.segment_length <= 8 and c.n_segments <= 4 and c.horizon <= 4
            and c.grid.n_cells <= 16):
        raise ValueError("gradient_check expects a tiny config (D<=16, L<=8, N<=4, H<=4, |L|<=16)")
    m = copy.deepcopy(model).double()
    m.eval()
    batch = batch.to(torch.float64)

    def loss_value() -> float:
        with torch.no_grad():
            return m.loss(batch).item()

    m.zero_grad(set_to_none=True)
    m.loss(batch).backward()
    rng = np.random.default_rng(seed)
    groups, checked, failures = {}, {}, []
    for group, params in parameter_groups(m).items():
        worst, n_checked = 0.0, 0
        for name, p in params:
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            flat, gflat = p.data.view(-1), grad.view(-1)
            if flat.numel() <= max_entries:
                idx = np.arange(flat.numel())
            else:
                top = np.argsort(-gflat.abs().numpy(), kind="stable")[: max_entries // 2]
                rand = rng.choice(flat.numel(), size=max_entries - len(top), replace=False)
                idx = np.unique(np.concatenate([top, rand]))
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_value()
                flat[i] = orig - step
                down = loss_value()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                analytic = gflat[i].item()
                err = abs(analytic - numeric)
                worst = max(worst, err / max(abs(numeric), atol))
                if err > atol + rtol * abs(numeric) and group not in failures:
                    failures.append(group)
                n_checked += 1
        groups[group], checked[group] = worst, n_checked
    frozen = {n: "no gradient tracked" for n, p in m.named_parameters() if not p.requires_grad}
    report = GradientReport(groups, checked, failures, frozen)
    if failures and raise_on_failure:
        raise GradientCheckError(f"gradient mismatch in groups {failures}: {groups}")
    return report


# --- sweep -----------------------------------------------------------------------

@dataclass
class SweepRow:
    learning_rate: float
    weight_decay: float
    val_acc1: float


def hyperparameter_sweep(
    model_factory: Callable[[], MobilityModel],
    train_windows: WindowBatch,
    val_windows: WindowBatch,
    base: TrainConfig = TrainConfig(),
    learning_rates: Sequence[float] = LEARNING_RATES,
    weight_decays: Sequence[float] = WEIGHT_DECAYS,
) -> tuple[list[SweepRow], SweepRow]:
    """Train one model per (lr, wd) cell from the same seed; best by val Acc@1, then lower lr, lower wd."""
    if not learning_rates or not weight_decays:
        raise ValueError("sweep grid is empty")
    rows = []
    for lr in learning_rates:
        for wd in weight_decays:
            torch.manual_seed(base.seed)
            model = model_factory()
            result = train(model, train_windows, val_windows, replace(base, learning_rate=lr, weight_decay=wd))
            rows.append(SweepRow(lr, wd, result.best_val_acc1))
    best = min(rows, key=lambda r: (-r.val_acc1, r.learning_rate, r.weight_decay))
    return rows, best
