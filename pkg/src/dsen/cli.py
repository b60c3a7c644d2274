"""Command-line surface: data generation, training, evaluation, ablation,
hyperparameter sweeps, and batch suggestion."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, FeatureSchema, GenConfig, export_samples_csv,
                   generate_synthetic, load_dataset, save_dataset,
                   temporal_split)
from .errors import ContractError
from .evaluation import evaluate
from .model import ModelConfig, VARIANTS
from .pipeline import RetrievalConfig, suggest, write_suggestions
from .training import TrainConfig, train, write_history


def load_config_file(path) -> dict:
    """Flat `key = value` file; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def _merge_config(args, keys: dict):
    """Apply config-file values for unset flags; flags always win."""
    if not getattr(args, "config", None):
        return
    values = load_config_file(args.config)
    for key, value in values.items():
        if key not in keys:
            raise ContractError(f"unknown config key {key!r}")
        attr, cast = keys[key]
        if getattr(args, attr) is None:
            setattr(args, attr, cast(value))


def _fill_defaults(args, defaults: dict):
    for attr, value in defaults.items():
        if getattr(args, attr) is None:
            setattr(args, attr, value)


_GEN_KEYS = {
    "seed": ("seed", int), "users": ("users", int), "days": ("days", int),
    "active_per_day": ("active_per_day", int),
    "exposure_size": ("exposure_size", int), "base_rate": ("base_rate", float),
    "noise": ("noise", float), "taste_dim": ("taste_dim", int),
}

_TRAIN_KEYS = {
    "variant": ("variant", str), "seed": ("seed", int),
    "batch_size": ("batch_size", int), "learning_rate": ("learning_rate", float),
    "max_epochs": ("max_epochs", int), "patience": ("patience", int),
    "gru_hidden": ("gru_hidden", int), "gru_layers": ("gru_layers", int),
    "views": ("views", int), "evo_hidden": ("evo_hidden", int),
    "attn_heads": ("attn_heads", int),
}


def _model_config(args, dataset: Dataset) -> ModelConfig:
    sch = dataset.schema
    base = ModelConfig(d_s=sch.d_s, d_p=sch.d_p, t=sch.t, d_l=sch.d_l)
    if not getattr(args, "paper_scale", False):
        base = base.desk_scale()
    overrides = {}
    for attr in ("gru_hidden", "gru_layers", "views", "evo_hidden", "attn_heads"):
        if getattr(args, attr, None) is not None:
            overrides[attr] = getattr(args, attr)
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    return replace(base, **overrides)


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size,
                       learning_rate=args.learning_rate,
                       max_epochs=args.max_epochs, patience=args.patience,
                       seed=args.seed)


def cmd_gen_data(args) -> int:
    _merge_config(args, _GEN_KEYS)
    _fill_defaults(args, dict(seed=0, users=1000, days=30, active_per_day=200,
                              exposure_size=50, base_rate=0.04, noise=2.0,
                              taste_dim=6))
    cfg = GenConfig(schema=FeatureSchema(), n_users=args.users, n_days=args.days,
                    active_per_day=args.active_per_day,
                    exposure_size=args.exposure_size, base_rate=args.base_rate,
                    noise=args.noise, taste_dim=args.taste_dim)
    dataset = generate_synthetic(cfg, seed=args.seed)
    temporal_split(dataset, seed=args.seed)
    save_dataset(dataset, args.out)
    if args.csv:
        export_samples_csv(dataset, args.csv)
    print(f"wrote {dataset.n_samples} samples for {dataset.n_users} users "
          f"over {dataset.n_days} days to {args.out}")
    return 0


def _add_train_flags(sub):
    sub.add_argument("--config", help="key = value config file; flags override")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--batch-size", type=int, dest="batch_size")
    sub.add_argument("--learning-rate", type=float, dest="learning_rate")
    sub.add_argument("--max-epochs", type=int, dest="max_epochs")
    sub.add_argument("--patience", type=int)
    sub.add_argument("--gru-hidden", type=int, dest="gru_hidden")
    sub.add_argument("--gru-layers", type=int, dest="gru_layers")
    sub.add_argument("--views", type=int)
    sub.add_argument("--evo-hidden", type=int, dest="evo_hidden")
    sub.add_argument("--attn-heads", type=int, dest="attn_heads")
    sub.add_argument("--paper-scale", action="store_true",
                     help="use the full-size architecture dimensions")


_TRAIN_DEFAULTS = dict(seed=0, batch_size=256, learning_rate=0.01,
                       max_epochs=8, patience=2)


def cmd_train(args) -> int:
    _merge_config(args, _TRAIN_KEYS)
    _fill_defaults(args, dict(_TRAIN_DEFAULTS, variant="dsen"))
    dataset = load_dataset(args.data)
    model_cfg = _model_config(args, dataset)
    params, history = train(dataset, model_cfg, _train_config(args), log=print)
    save_checkpoint(params, model_cfg, args.out)
    if args.history:
        write_history(history, args.history)
    print(f"saved checkpoint to {args.out} "
          f"(best epoch {history.best_epoch}, val AUC "
          f"{history.val_aucs[history.best_epoch - 1]:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.data)
    params, _ = load_checkpoint(args.checkpoint)
    report = evaluate(params, dataset, split=args.split)
    print(report.render_table())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_kv() + "\n")
    return 0


def cmd_ablate(args) -> int:
    _merge_config(args, _TRAIN_KEYS)
    _fill_defaults(args, dict(_TRAIN_DEFAULTS, variant=None))
    dataset = load_dataset(args.data)
    rows = []
    for variant in ("dsen_att", "dsen"):
        args.variant = variant
        cfg = _model_config(args, dataset)
        params, _ = train(dataset, cfg, _train_config(args))
        report = evaluate(params, dataset)
        rows.append((variant, report))
    print(f"{'model':10s} {'HIT@10':>8s} {'NDCG@10':>8s} {'HIT@100':>8s} {'NDCG@100':>9s}")
    for variant, r in rows:
        print(f"{variant:10s} {r.hit[10]:8.4f} {r.ndcg[10]:8.4f} "
              f"{r.hit[100]:8.4f} {r.ndcg[100]:9.4f}")
    return 0


_SWEEP_PARAMS = {"views": "views", "gru-hidden": "gru_hidden",
                 "embedding": "evo_hidden"}


def cmd_sweep(args) -> int:
    _merge_config(args, _TRAIN_KEYS)
    _fill_defaults(args, dict(_TRAIN_DEFAULTS, variant="dsen"))
    dataset = load_dataset(args.data)
    attr = _SWEEP_PARAMS[args.param]
    grid = [int(v) for v in args.grid.split(",")]
    print(f"{args.param:>10s} {'HIT@10':>8s} {'NDCG@10':>8s} "
          f"{'HIT@100':>8s} {'NDCG@100':>9s} {'AUC':>7s}")
    for value in grid:
        setattr(args, attr, value)
        cfg = _model_config(args, dataset)
        params, _ = train(dataset, cfg, _train_config(args))
        r = evaluate(params, dataset)
        print(f"{value:10d} {r.hit[10]:8.4f} {r.ndcg[10]:8.4f} "
              f"{r.hit[100]:8.4f} {r.ndcg[100]:9.4f} {r.auc:7.4f}")
        setattr(args, attr, None)
    return 0


def cmd_suggest(args) -> int:
    dataset = load_dataset(args.data)
    params, _ = load_checkpoint(args.checkpoint)
    cfg = RetrievalConfig(n_retrieve=args.n_retrieve, n_suggest=args.n_suggest)
    users = [int(u) for u in args.users.split(",")]
    results = [suggest(u, params, dataset, cfg, seed=args.seed) for u in users]
    write_suggestions(results, args.out)
    print(f"wrote suggestions for {len(users)} users to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsen", description="friend suggestion pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--csv", help="optional plain-text sample export")
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--users", type=int)
    gen.add_argument("--days", type=int)
    gen.add_argument("--active-per-day", type=int, dest="active_per_day")
    gen.add_argument("--exposure-size", type=int, dest="exposure_size")
    gen.add_argument("--base-rate", type=float, dest="base_rate")
    gen.add_argument("--noise", type=float)
    gen.add_argument("--taste-dim", type=int, dest="taste_dim")
    gen.set_defaults(func=cmd_gen_data)

    tr = subs.add_parser("train", help="train a model variant")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--history", help="plain-text history log path")
    tr.add_argument("--variant", choices=VARIANTS)
    _add_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    ev = subs.add_parser("evaluate", help="rank and score a dataset split")
    ev.add_argument("--data", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--out", help="machine-readable key-value report path")
    ev.set_defaults(func=cmd_evaluate)

    ab = subs.add_parser("ablate", help="compare recurrent vs attention evolution")
    ab.add_argument("--data", required=True)
    _add_train_flags(ab)
    ab.set_defaults(func=cmd_ablate, variant=None)

    sw = subs.add_parser("sweep", help="grid over one architecture dimension")
    sw.add_argument("--data", required=True)
    sw.add_argument("--param", required=True, choices=sorted(_SWEEP_PARAMS))
    sw.add_argument("--grid", required=True, help="comma-separated values")
    sw.add_argument("--variant", choices=VARIANTS)
    _add_train_flags(sw)
    sw.set_defaults(func=cmd_sweep)

    sg = subs.add_parser("suggest", help="emit ranked suggestions for users")
    sg.add_argument("--data", required=True)
    sg.add_argument("--checkpoint", required=True)
    sg.add_argument("--users", required=True, help="comma-separated user ids")
    sg.add_argument("--out", required=True)
    sg.add_argument("--seed", type=int, default=0)
    sg.add_argument("--n-retrieve", type=int, default=1000, dest="n_retrieve")
    sg.add_argument("--n-suggest", type=int, default=100, dest="n_suggest")
    sg.set_defaults(func=cmd_suggest)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
