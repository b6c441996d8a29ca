"""Command-line entry point: ``hierloc <command> [--config PATH] [flags]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path
from statistics import mean

import torch

from . import serialization
from .config import ConfigError, RunConfig, from_mapping, load_config
from .data import DataError, generate_synthetic, load_trajectories, split_by_days, write_trajectories
from .estimator import build_model
from .head import write_top_k
from .metrics import MetricsReport, evaluate_predictions
from .model import MobilityModel
from .semantic import (
    FileProvider,
    HashingProvider,
    SemanticCache,
    SemanticError,
    precompute_semantics,
    required_prompts,
)
from .training import NumericError, hyperparameter_sweep, load_model, save_checkpoint, train
from .windows import build_windows, horizon_days_available

log = logging.getLogger("hierloc")

ABLATIONS = {
    "full": {},
    "no-token": {"use_tokenization": False},
    "no-ha": {"use_hierarchical_attention": False},
    "no-traj-info": {"use_traj_info": False},
    "no-task-desc": {"use_task_desc": False},
}


# --- shared plumbing -----------------------------------------------------------

def out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def data_path(cfg: RunConfig) -> Path:
    return Path(cfg.data_path) if cfg.data_path else Path(cfg.out_dir) / "trajectories.csv"


def cache_path(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / "semantics.rsem"


def load_data(cfg: RunConfig):
    path = data_path(cfg)
    if not path.exists():
        raise DataError(f"{path} not found; run `hierloc generate` or set data_path")
    trajs = load_trajectories(path, cfg.grid, cfg.slots_per_day, cfg.epoch_weekday)
    if not trajs:
        raise DataError(f"{path} holds no observations")
    return trajs


def make_provider(cfg: RunConfig):
    if cfg.provider == "file":
        return FileProvider(cfg.provider_path)
    return HashingProvider(cfg.d_model, cfg.provider_seed)


def usable_days(cfg: RunConfig, trajs) -> list[int]:
    return sorted({d for t in trajs for d in horizon_days_available(t, cfg.lookback, cfg.horizon)})


def get_cache(cfg: RunConfig, trajs) -> SemanticCache:
    """The sealed cache from ``precompute`` when present and compatible, else a fresh one."""
    path = cache_path(cfg)
    provider = make_provider(cfg)
    if path.exists():
        cache = SemanticCache.load(path)
        if cache.provider_id == provider.id and cache.dim == cfg.d_model:
            return cache
        log.warning("ignoring %s: built by %s with D=%d", path, cache.provider_id, cache.dim)
    return precompute_semantics(
        trajs, usable_days(cfg, trajs), provider, dim=cfg.d_model, grid=cfg.grid,
        lookback=cfg.lookback, segment_length=cfg.segment_length,
    )


def windows_for(cfg: RunConfig, trajs, days, cache):
    return build_windows(
        trajs, days, lookback=cfg.lookback, horizon=cfg.horizon, segment_length=cfg.segment_length,
        dim=cfg.d_model, cache=cache, use_traj_info=cfg.use_traj_info, use_task_desc=cfg.use_task_desc,
    )


def fit(cfg: RunConfig, trajs, cache, log_path=None, checkpoint_path=None):
    split = split_by_days(trajs, cfg.split_ratios)
    train_w = windows_for(cfg, trajs, split.train, cache)
    val_w = windows_for(cfg, trajs, split.val, cache)
    if len(train_w) == 0:
        raise DataError(f"no training day has {cfg.lookback} slots of history")
    model = build_model(cfg.model_config(), cfg.seed)
    result = train(model, train_w, val_w if len(val_w) else None, cfg.train_config(),
                   log_path=log_path, checkpoint_path=checkpoint_path)
    return model, result, split


def evaluate(cfg: RunConfig, model: MobilityModel, trajs, cache, days):
    w = windows_for(cfg, trajs, days, cache)
    if len(w) == 0:
        raise DataError("no evaluation windows with observed targets")
    probs = model.predict_proba(w).numpy()
    report = evaluate_predictions(probs, w.targets.numpy(), w.fut_tod.numpy(), w.fut_dow.numpy(),
                                  cfg.grid, cfg.slots_per_day)
    return report, w, probs


# --- commands --------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> Path:
    trajs = generate_synthetic(cfg.n_users, cfg.n_days, cfg.grid, cfg.noise_eps, cfg.missing_mu,
                               cfg.seed, cfg.slots_per_day, cfg.epoch_weekday)
    path = out_dir(cfg) / "trajectories.csv"
    write_trajectories(trajs, path, cfg.grid)
    print(f"wrote {len(trajs)} trajectories of {cfg.n_days} days to {path}")
    return path


def _prompt_filename(key: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]", "_", key) + ".txt"


def cmd_emit_prompts(cfg: RunConfig) -> Path:
    trajs = load_data(cfg)
    target = out_dir(cfg) / "prompts"
    target.mkdir(exist_ok=True)
    prompts = required_prompts(trajs, usable_days(cfg, trajs), cfg.grid, cfg.lookback, cfg.segment_length)
    for p in prompts:
        (target / _prompt_filename(p.key)).write_text(p.text, encoding="utf-8")
    print(f"wrote {len(prompts)} prompts to {target}")
    return target


def cmd_precompute(cfg: RunConfig) -> Path:
    trajs = load_data(cfg)
    out_dir(cfg)
    path = cache_path(cfg)
    cache = precompute_semantics(
        trajs, usable_days(cfg, trajs), make_provider(cfg), path, dim=cfg.d_model, grid=cfg.grid,
        lookback=cfg.lookback, segment_length=cfg.segment_length,
    )
    print(f"wrote {len(cache)} semantic vectors (D={cache.dim}, provider {cache.provider_id}) to {path}")
    return path


def cmd_train(cfg: RunConfig) -> Path:
    trajs = load_data(cfg)
    out = out_dir(cfg)
    model, result, _ = fit(cfg, trajs, get_cache(cfg, trajs), log_path=out / "train_log.jsonl",
                           checkpoint_path=out / "last.ckpt")
    path = out / "checkpoint.ckpt"
    save_checkpoint(path, model, train_cfg=cfg.train_config())
    print(f"best epoch {result.best_epoch} val Acc@1 {result.best_val_acc1:.4f}; checkpoint {path}")
    return path


def cmd_eval(cfg: RunConfig, checkpoint=None) -> MetricsReport:
    trajs = load_data(cfg)
    ckpt = Path(checkpoint) if checkpoint else Path(cfg.out_dir) / "checkpoint.ckpt"
    if not ckpt.exists():
        raise DataError(f"checkpoint {ckpt} not found")
    model = load_model(ckpt)
    mcfg = model.config
    cfg = replace(cfg, **{k: getattr(mcfg, k) for k in (
        "lookback", "horizon", "segment_length", "d_model", "use_traj_info", "use_task_desc")})
    split = split_by_days(trajs, cfg.split_ratios)
    report, w, probs = evaluate(cfg, model, trajs, get_cache(cfg, trajs), split.test)
    target = out_dir(cfg) / "eval"
    report.write(target)
    write_top_k(target / "predictions.csv", w.user_ids, w.horizon_days.numpy(), w.fut_tod.numpy(), probs)
    print(f"Acc@1 {report.acc1:.4f} Acc@3 {report.acc3:.4f} Acc@5 {report.acc5:.4f} "
          f"MRR {report.mrr:.4f} DTW {report.dtw:.3f} BLEU {report.bleu:.4f} -> {target}")
    return report


def cmd_ablate(cfg: RunConfig) -> list[dict]:
    trajs = load_data(cfg)
    cache = get_cache(cfg, trajs)
    rows = []
    for name, overrides in ABLATIONS.items():
        accs = []
        for seed in cfg.ablation_seeds:
            vcfg = replace(cfg, seed=seed, **overrides)
            model, _, split = fit(vcfg, trajs, cache)
            accs.append(evaluate(vcfg, model, trajs, cache, split.test)[0].acc1)
        rows.append({"variant": name, "acc1": mean(accs), "per_seed": accs})
    full = rows[0]["acc1"]
    for row in rows:
        row["delta_vs_full"] = row["acc1"] - full
    out = out_dir(cfg)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "acc1", "delta_vs_full"])
        for row in rows:
            w.writerow([row["variant"], repr(row["acc1"]), repr(row["delta_vs_full"])])
    for row in rows:
        print(f"{row['variant']:>13}  Acc@1 {row['acc1']:.4f}  delta {row['delta_vs_full']:+.4f}")
    return rows


def cmd_sweep(cfg: RunConfig):
    trajs = load_data(cfg)
    cache = get_cache(cfg, trajs)
    split = split_by_days(trajs, cfg.split_ratios)
    rows, best = hyperparameter_sweep(
        lambda: MobilityModel(cfg.model_config()),
        windows_for(cfg, trajs, split.train, cache),
        windows_for(cfg, trajs, split.val, cache),
        cfg.train_config(), cfg.sweep_learning_rates, cfg.sweep_weight_decays,
    )
    with open(out_dir(cfg) / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["learning_rate", "weight_decay", "val_acc1"])
        for r in rows:
            w.writerow([repr(r.learning_rate), repr(r.weight_decay), repr(r.val_acc1)])
    print(f"best lr {best.learning_rate} wd {best.weight_decay} val Acc@1 {best.val_acc1:.4f}")
    return rows, best


COMMANDS = {
    "generate": cmd_generate,
    "emit-prompts": cmd_emit_prompts,
    "precompute": cmd_precompute,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file of flat key/value settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-token", action="store_true", help="feed per-slot embeddings to the backbone")
        p.add_argument("--no-ha", action="store_true", help="skip intra/inter segment attention")
        p.add_argument("--segment-length", type=int)
        p.add_argument("--backbone", metavar="KEY=VALUE,...",
                       help="backbone settings, e.g. depth=14,heads=4,seed=0")
        if name == "eval":
            p.add_argument("--checkpoint", type=Path)
    return parser


BACKBONE_KEYS = {"depth": "backbone_depth", "heads": "backbone_heads", "seed": "backbone_seed",
                 "weights": "backbone_weights"}


def parse_backbone(spec: str) -> dict:
    """``depth=14,heads=4`` -> ``{"backbone_depth": 14, "backbone_heads": 4}``."""
    out = {}
    for item in filter(None, spec.split(",")):
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in BACKBONE_KEYS:
            raise ConfigError(f"bad --backbone entry {item!r}; expected one of {sorted(BACKBONE_KEYS)} as key=value")
        name, value = BACKBONE_KEYS[key.strip()], value.strip()
        if name != "backbone_weights":
            try:
                value = int(value)
            except ValueError:
                raise ConfigError(f"--backbone {key.strip()}: expected an integer, got {value!r}") from None
        out[name] = value
    return out


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.no_token:
        overrides["use_tokenization"] = False
    if args.no_ha:
        overrides["use_hierarchical_attention"] = False
    if args.segment_length is not None:
        overrides["segment_length"] = args.segment_length
    if args.backbone:
        overrides.update(parse_backbone(args.backbone))
    return from_mapping(overrides, cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.use_deterministic_algorithms(True)
    try:
        cfg = resolve_config(args)
        if args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SemanticError, serialization.CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
