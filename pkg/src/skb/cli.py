"""Command line surface: synth, ingest, pretrain, finetune, eval, complete, sweep."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synthetic
from .checkpoint import load_checkpoint
from .data import ingest_ndjson, load_cache, truncated
from .masking import apply_mask, complete_sketch, sample_mask_plan
from .render import render_svg
from .train import (
    RunConfig,
    ablation_sweep,
    apply_env_overrides,
    evaluate,
    finetune,
    format_sweep_table,
    pretrain,
)


def _load_config(path: str) -> RunConfig:
    return apply_env_overrides(RunConfig.from_json(path))


def cmd_synth(args) -> int:
    count = synthetic.write_ndjson(args.out, args.classes, args.per_class, args.seed)
    print(f"wrote {count} records to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    count, names = ingest_ndjson(
        args.infile, args.out, rdp_epsilon=args.rdp_eps, max_len=args.max_len
    )
    print(f"cached {count} sketches ({len(names)} classes) to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config)
    cfg = replace(cfg, task="pretrain")
    _, curve = pretrain(cfg)
    for r in curve.records:
        print(json.dumps(r))
    if cfg.checkpoint:
        print(f"checkpoint: {cfg.checkpoint}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    cfg = replace(cfg, task=f"finetune_{args.task}")
    if args.init_from:
        cfg = replace(cfg, init_from=args.init_from)
    _, curve = finetune(cfg)
    for r in curve.records:
        print(json.dumps(r))
    if cfg.checkpoint:
        print(f"checkpoint: {cfg.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    if args.config:
        cfg = _load_config(args.config)
    else:
        ckpt = load_checkpoint(args.ckpt)
        cfg = RunConfig.from_dict(ckpt.config) if ckpt.config else RunConfig()
    cfg = replace(cfg, checkpoint=args.ckpt)
    if args.data:
        cfg = replace(cfg, data={**cfg.data, args.split: args.data})
    report = evaluate(cfg, split=args.split)
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def cmd_complete(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = RunConfig.from_dict(ckpt.config) if ckpt.config else RunConfig()
    cfg = replace(cfg, checkpoint=args.ckpt)
    from .train import build_model, load_split_data

    if args.data:
        cfg = replace(cfg, data={**cfg.data, args.split: args.data})
    splits, _ = load_split_data(cfg)
    if args.split not in splits or not splits[args.split]:
        raise SystemExit(f"no {args.split!r} split to complete")
    model = build_model(cfg, num_classes=cfg.num_classes)
    model.load_params(ckpt.params)
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = min(args.count, len(splits[args.split]))
    for i in range(count):
        sketch = truncated(splits[args.split][i], cfg.max_len)
        plan = sample_mask_plan(sketch, args.mask_ratio, cfg.mask_mode, rng)
        s_gt = sketch.points.astype(np.float32)
        s_mask = apply_mask(s_gt, plan)
        comp = complete_sketch(s_mask, sketch.stroke_ids, plan, model,
                               scale=sketch.scale, label=sketch.label)
        path = out_dir / f"completion_{i:03d}.svg"
        render_svg((s_gt, s_mask, comp.points), path, plan=plan)
        print(path)
    return 0


def cmd_sweep(args) -> int:
    with open(args.grid) as f:
        grid = json.load(f)
    axes = grid.get("axes", {})
    pre_cfg = None
    if "pretrain" in grid:
        pre_cfg = apply_env_overrides(RunConfig.from_dict(grid["pretrain"]))
        pre_cfg = replace(pre_cfg, task="pretrain")
    fin_cfg = apply_env_overrides(RunConfig.from_dict(grid["finetune"]))
    if not fin_cfg.task.startswith("finetune"):
        fin_cfg = replace(fin_cfg, task="finetune_cls")
    rows = ablation_sweep(pre_cfg, fin_cfg, axes, workdir=args.workdir,
                          eval_split=args.split)
    print(format_sweep_table(rows))
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skb",
        description="Stroke-sequence transformer: ingestion, pretraining, "
                    "fine-tuning, evaluation, and masked completion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate toy drawing records")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse ndjson drawings into a binary cache")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rdp-eps", type=float, default=2.0)
    p.add_argument("--max-len", type=int, default=250)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pretrain", help="masked-point pretraining")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune for classification or retrieval")
    p.add_argument("--task", choices=("cls", "ret"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--init-from", default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None, help="cache path overriding the split")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="render masked-completion triples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mask-ratio", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("sweep", help="run an ablation grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--workdir", default="runs/sweep")
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
