"""Command-line entry point.

Verbs: pretrain, align, train, eval, ablate, extract, report. All verbs take
--config and --seed; run artifacts land under --workdir. Exit codes: 0
success, 2 config error, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report as report_mod
from . import runner
from .config import DEFAULTS, load_config, parse_config
from .errors import (CheckpointError, ConfigurationError, DataIOError,
                     InvalidArgumentError, NumericError, ValidationError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _load(args) -> tuple:
    if args.config:
        cfg = load_config(args.config, seed=args.seed)
        with open(args.config) as fh:
            overrides = json.load(fh)
    else:
        overrides = {}
        cfg = parse_config(overrides, seed=args.seed)
    return cfg, overrides


def _cmd_pretrain(args) -> int:
    cfg, _ = _load(args)
    info: dict = {}
    runner.ensure_generative_encoders(cfg, args.workdir, info)
    runner.ensure_semantic_towers(cfg, args.workdir, info)
    print(json.dumps(info.get("histories", {}), sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_align(args) -> int:
    cfg, overrides = _load(args)
    overrides.setdefault("train", {})["align_stage"] = True
    overrides["train"]["total_steps"] = 1  # alignment only; tuning is `train`
    cfg = parse_config(overrides, seed=args.seed)
    report, run_dir = runner.run_experiment(cfg, args.workdir)
    print(f"align stage complete: {run_dir}")
    print(json.dumps(report["stages"], sort_keys=True))
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg, _ = _load(args)
    report, run_dir = runner.run_experiment(cfg, args.workdir)
    print(f"run complete: {run_dir}")
    print(json.dumps({"results": report["results"],
                      "train_accuracy": report["train_accuracy"]},
                     sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg, _ = _load(args)
    report, run_dir = runner.run_experiment(cfg, args.workdir, eval_only=True,
                                            checkpoint_path=args.checkpoint)
    print(f"eval complete: {run_dir}")
    print(json.dumps(report["results"], sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_ablate(args) -> int:
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    else:
        overrides = {}
    summary, path = runner.run_ablation(overrides, args.workdir, seed=args.seed)
    print(f"ablation summary: {path} ({len(summary['cells'])} cells)")
    return EXIT_OK


def _cmd_extract(args) -> int:
    cfg, _ = _load(args)
    header = runner.extract_features(cfg, args.images, args.out, args.workdir)
    print(json.dumps(header, sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    written = report_mod.render(args.workdir, args.out)
    print(json.dumps(written, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_show_config(args) -> int:
    cfg, _ = _load(args)
    print(json.dumps(cfg.raw, sort_keys=True, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynafuse",
        description="Train and evaluate a fused generative/semantic visual QA model "
                    "on synthetic spatial-reasoning benchmarks.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workdir", type=Path, default=Path("workdir"),
                       help="artifact directory (default: ./workdir)")

    common(sub.add_parser("pretrain", help="pretrain codec, denoiser, semantic towers"))
    common(sub.add_parser("align", help="run the projector alignment stage"))
    common(sub.add_parser("train", help="full run: pretrain, align, tune, eval"))
    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, default=None)
    common(sub.add_parser("ablate", help="run the encoder x align ablation matrix"))
    p_extract = sub.add_parser("extract", help="encode images to feature files")
    common(p_extract)
    p_extract.add_argument("--images", nargs="+", required=True, type=Path)
    p_extract.add_argument("--out", type=Path, required=True)
    p_report = sub.add_parser("report", help="render summary CSV and figures")
    common(p_report)
    p_report.add_argument("--out", type=Path, default=None)
    common(sub.add_parser("show-config", help="print the resolved config"))
    return parser


_HANDLERS = {
    "pretrain": _cmd_pretrain,
    "align": _cmd_align,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "extract": _cmd_extract,
    "report": _cmd_report,
    "show-config": _cmd_show_config,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.verb](args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidArgumentError, ValidationError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, DataIOError) as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
