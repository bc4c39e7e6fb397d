"""Command line entry point: ``projseg <command> [options]``.

Commands mirror the pipeline stages: generate, views, render, train,
infer, eval, export.  All numeric behavior is controlled by a key=value
config file (see config.py); flags override the file.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import load_config
from .synth import FAMILIES


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--workdir", required=True,
                        help="pipeline working directory")
    parser.add_argument("--config", default=None,
                        help="key=value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--mode",
                        choices=["joint", "disjoint", "unary-only"],
                        default=None, help="training / inference mode")
    parser.add_argument("--fixed-views", action="store_true", default=None,
                        help="use the fixed dodecahedron viewpoints")
    parser.add_argument("--upright-height", action="store_true",
                        default=None,
                        help="render and consume a world-height channel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="projseg",
        description="Multi-view projective part segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="create a synthetic dataset")
    _add_common(p)
    p.add_argument("--family", choices=list(FAMILIES), required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0,
                   help="vertex jitter, fraction of bounding radius")
    p.add_argument("--test-fraction", type=float, default=1 / 3)
    p.add_argument("--append", action="store_true",
                   help="add to an existing dataset manifest")

    for name, help_text in [
            ("views", "select viewpoints per shape"),
            ("render", "render images for selected viewpoints"),
            ("train", "train the network and CRF weights"),
            ("infer", "predict labels for a split"),
            ("eval", "report labeling accuracy"),
            ("export", "write label-colored PLY meshes")]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("infer", "eval", "export"):
            p.add_argument("--split", choices=["train", "test"],
                           default="test")
    return parser


def _config_from_args(args) -> "PipelineConfig":
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode.replace("-", "_")
    if args.fixed_views:
        overrides["fixed_views"] = True
    if args.upright_height:
        overrides["upright_height"] = True
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "generate":
            pipeline.generate_dataset(
                args.workdir, family=args.family, count=args.count,
                seed=cfg.seed, noise=args.noise,
                test_fraction=args.test_fraction, append=args.append)
        elif args.command == "views":
            pipeline.stage_views(args.workdir, cfg)
        elif args.command == "render":
            pipeline.stage_render(args.workdir, cfg)
        elif args.command == "train":
            pipeline.stage_train(args.workdir, cfg)
        elif args.command == "infer":
            pipeline.stage_infer(args.workdir, cfg, split=args.split)
        elif args.command == "eval":
            pipeline.stage_eval(args.workdir, cfg, split=args.split)
        elif args.command == "export":
            pipeline.stage_export(args.workdir, cfg, split=args.split)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"projseg {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
