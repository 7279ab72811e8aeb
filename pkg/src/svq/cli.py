"""Command-line entry point.

Subcommands: gen-data, train-ae, train-ar, sample, eval, grad-check,
compare. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import gradcheck, pipeline
from .data import generate_dataset, load_dataset, save_dataset
from .errors import SvqError
from .pipeline import RunConfig, load_checkpoint, load_config


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "variant", None):
        cfg = replace(cfg, variant=args.variant)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg.validate()


def _cmd_gen_data(args):
    cfg_size = args.image_size
    samples = generate_dataset(args.n, args.seed if args.seed is not None else 0, cfg_size)
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_train_ae(args):
    cfg = _load_run_config(args)
    dataset = load_dataset(args.data)
    ckpt = pipeline.train_stage1(cfg, dataset, out_dir=args.out)
    print(f"stage-1 checkpoint: {ckpt.path}")
    return 0


def _cmd_train_ar(args):
    cfg = _load_run_config(args)
    ck1 = load_checkpoint(args.stage1)
    sem = load_checkpoint(args.stage1_semantic) if args.stage1_semantic else None
    dataset = load_dataset(args.data)
    ckpt = pipeline.train_stage2(cfg, ck1, dataset, out_dir=args.out,
                                 stage1_semantic_ckpt=sem)
    print(f"stage-2 checkpoint: {ckpt.path}")
    return 0


def _cmd_sample(args):
    ck1 = load_checkpoint(args.stage1)
    ck2 = load_checkpoint(args.stage2)
    samples = load_dataset(args.data)
    if args.n is not None:
        samples = samples[:args.n]
    _, report = pipeline.synthesize(ck1, ck2, samples, out_dir=args.out,
                                    seed=args.seed)
    print(report.to_tsv(), end="")
    return 0


def _cmd_eval(args):
    ck1 = load_checkpoint(args.stage1)
    samples = load_dataset(args.data)
    if args.n is not None:
        samples = samples[:args.n]
    report = pipeline.evaluate_reconstruction(ck1, samples)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.tsv").write_text(report.to_tsv(), encoding="utf-8")
    print(report.to_tsv(), end="")
    return 0


def _cmd_grad_check(args):
    results = gradcheck.run_all(seed=args.seed if args.seed is not None else 0)
    ok = True
    for r in results:
        print(r.line())
        ok = ok and r.passed
    return 0 if ok else 2


def _cmd_compare(args):
    cfg = _load_run_config(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    out = pipeline.compare(cfg, args.out, seeds=seeds)
    print((out["compare_tsv"]).read_text(encoding="utf-8"), end="")
    return 0


def build_parser():
    parser = _Parser(prog="svq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--image-size", type=int, default=32)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-ae", help="train a stage-1 autoencoder variant")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=pipeline.VARIANTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_ae)

    p = sub.add_parser("train-ar", help="train the stage-2 latent transformer")
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=pipeline.VARIANTS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage1-semantic", default=None,
                   help="second stage-1 checkpoint supplying the baseline semantic model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_ar)

    p = sub.add_parser("sample", help="synthesize images for held-out conditions")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-n", type=int, default=None)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="stage-1 reconstruction metrics")
    p.add_argument("--stage1", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("-n", type=int, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="run all finite-difference suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("compare", help="coupled vs decoupled 4-variant matrix")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SvqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
