"""Command-line interface.

Subcommands: gen-data, pretrain-vg, train-mle, train-scst, eval, infer,
benchmark.  Hyperparameters come from built-in desk defaults, optionally a
``key = value`` config file (--config), then per-flag overrides.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import vocab
from ..config import TrainConfig, load_config, paper_config
from ..model import load_checkpoint
from .data import Dataset, generate_split
from .evaluate import evaluate, evaluate_dc_from_file
from .infer import infer_dc, infer_vg
from .train import pretrain_vg, train_joint_mle, train_scst


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="single config override (repeatable)")
    p.add_argument("--preset", choices=["desk", "paper", "paper-nr3d"], default="desk")
    p.add_argument("--seed", type=int, default=None)


def _build_config(args) -> TrainConfig:
    if args.preset == "paper":
        cfg = paper_config()
    elif args.preset == "paper-nr3d":
        cfg = paper_config("nr3d")
    else:
        cfg = TrainConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.config:
        from ..config import apply_overrides, parse_config_file
        apply_overrides(cfg, parse_config_file(args.config))
    if overrides:
        from ..config import apply_overrides
        apply_overrides(cfg, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _build_config(args)
    train_dir = os.path.join(args.out, "train")
    val_dir = os.path.join(args.out, "val")
    scenes, samples = generate_split(cfg, train_dir, args.train_scenes or cfg.train_scenes,
                                     seed=cfg.seed, scene_seed_offset=0)
    vs, vsamp = generate_split(cfg, val_dir, args.val_scenes or cfg.val_scenes,
                               seed=cfg.seed + 1, scene_seed_offset=1_000_000)
    print(f"train: {len(scenes)} scenes / {len(samples)} samples -> {train_dir}")
    print(f"val:   {len(vs)} scenes / {len(vsamp)} samples -> {val_dir}")
    return 0


def cmd_pretrain_vg(args) -> int:
    cfg = _build_config(args)
    dataset = Dataset(args.data, cfg)
    result = pretrain_vg(cfg, dataset, args.out, epochs=args.epochs)
    print(f"pretrain-vg done: loss {result['history'][0]:.4f} -> "
          f"{result['history'][-1]:.4f}; checkpoint {args.out}")
    return 0


def cmd_train_mle(args) -> int:
    cfg = _build_config(args)
    cfg.scheme = args.scheme
    cfg.validate()
    dataset = Dataset(args.data, cfg)
    model, _, _ = load_checkpoint(args.init)
    model.cfg = cfg
    result = train_joint_mle(cfg, dataset, model, args.out, epochs=args.epochs)
    print(f"train-mle scheme {cfg.scheme} done: loss {result['history'][0]:.4f} -> "
          f"{result['history'][-1]:.4f}; checkpoint {args.out}")
    return 0


def cmd_train_scst(args) -> int:
    cfg = _build_config(args)
    dataset = Dataset(args.data, cfg)
    model, _, _ = load_checkpoint(args.init)
    model.cfg = cfg
    result = train_scst(cfg, dataset, model, args.out, epochs=args.epochs)
    print(f"train-scst done: loss {result['history'][0]:.4f} -> "
          f"{result['history'][-1]:.4f}; checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    dataset = Dataset(args.data, cfg)
    if args.predictions_in:
        if args.task != "dc":
            raise SystemExit("--predictions-in only supports --task dc")
        report = evaluate_dc_from_file(args.predictions_in, dataset)
        if args.out:
            with open(args.out, "w") as f:
                json.dump(report, f, indent=2, sort_keys=True)
    else:
        if not args.checkpoint:
            raise SystemExit("eval needs --checkpoint (or --predictions-in)")
        model, _, _ = load_checkpoint(args.checkpoint)
        report = evaluate(model, dataset, args.task, report_path=args.out,
                          predictions_path=args.dump_predictions,
                          predict_labels=args.predict_labels)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    cfg = _build_config(args)
    dataset = Dataset(args.data, cfg)
    model, _, _ = load_checkpoint(args.checkpoint)
    sd = dataset.scene_of_id(args.scene_id)
    if args.task == "vg":
        sample = None
        if args.text:
            from ..datagen.language import TextSample
            ids = vocab.encode(args.text)
            head = None
            for i, tok in enumerate(ids):
                if vocab.TOKENS[tok] in vocab.CLASS_LABELS:
                    head = (i, i + 1)
                    break
            if head is None:
                raise SystemExit("no class label found in --text")
            sample = TextSample(raw_text=args.text, token_ids=ids,
                                span_map=[(head[0], head[1], -2)], kind="reference",
                                scene_id=args.scene_id, target_id=-2)
        else:
            refs = [s for s in dataset.references if s.scene_id == args.scene_id]
            if not refs:
                raise SystemExit(f"no stored references for {args.scene_id}")
            sample = refs[0]
        box = infer_vg(model, sd, sample)
        print(json.dumps({"scene_id": args.scene_id, "text": sample.raw_text,
                          "box": box.tolist()}))
    else:
        dets = infer_dc(model, sd, threshold=args.threshold,
                        predict_labels=args.predict_labels)
        print(json.dumps({
            "scene_id": args.scene_id,
            "detections": [{"box": d.box.tolist(), "score": d.score,
                            "caption": d.caption_text} for d in dets],
        }))
    return 0


def cmd_benchmark(args) -> int:
    from ..benchmark import format_rows, run_benchmark
    rows = run_benchmark(n_points=args.n_points)
    print(format_rows(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groundcap",
                                description="Joint 3D grounding + dense captioning (desk scale)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate train/val corpora")
    g.add_argument("--out", required=True)
    g.add_argument("--train-scenes", type=int, default=None)
    g.add_argument("--val-scenes", type=int, default=None)
    _add_config_args(g)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("pretrain-vg", help="grounding-only pre-training")
    t.add_argument("--data", required=True, help="train corpus dir")
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--epochs", type=int, default=None)
    _add_config_args(t)
    t.set_defaults(fn=cmd_pretrain_vg)

    m = sub.add_parser("train-mle", help="joint MLE training")
    m.add_argument("--scheme", type=int, choices=range(1, 6), default=5)
    m.add_argument("--data", required=True)
    m.add_argument("--init", required=True, help="pretrained VG checkpoint")
    m.add_argument("--out", required=True)
    m.add_argument("--epochs", type=int, default=None)
    _add_config_args(m)
    m.set_defaults(fn=cmd_train_mle)

    s = sub.add_parser("train-scst", help="self-critical caption fine-tune")
    s.add_argument("--data", required=True)
    s.add_argument("--init", required=True, help="MLE checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=None)
    _add_config_args(s)
    s.set_defaults(fn=cmd_train_scst)

    e = sub.add_parser("eval", help="held-out evaluation")
    e.add_argument("--task", choices=["vg", "dc"], required=True)
    e.add_argument("--data", required=True, help="val corpus dir")
    e.add_argument("--checkpoint")
    e.add_argument("--out", help="report JSON path")
    e.add_argument("--dump-predictions", help="write predictions exchange file")
    e.add_argument("--predictions-in", help="score an existing exchange file")
    e.add_argument("--predict-labels", action="store_true")
    _add_config_args(e)
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="single-scene inference")
    i.add_argument("--task", choices=["vg", "dc"], required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--scene-id", required=True)
    i.add_argument("--text", help="referring text (vg)")
    i.add_argument("--threshold", type=float, default=None)
    i.add_argument("--predict-labels", action="store_true")
    _add_config_args(i)
    i.set_defaults(fn=cmd_infer)

    b = sub.add_parser("benchmark", help="numba vs numpy kernel timings")
    b.add_argument("--n-points", type=int, default=20000)
    b.set_defaults(fn=cmd_benchmark)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
