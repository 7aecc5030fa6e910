"""Experiment orchestration: stage composition, pretraining caches, the
ablation matrix, and feature extraction.

A run executes pretrain (cache-aware) -> optional align -> single-stage tune
-> eval, then writes `report.json` (deterministic bytes), `runinfo.json`
(wall-clock sidecar), metrics logs, and `model.ckpt` under
`<workdir>/runs/<fingerprint>/`.

The experiment seed steers data generation and tuning. Pretrained encoder
parameters are keyed only by their own sub-config, so seed sweeps and
ablation cells share cached pretraining work.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch

from . import report as report_mod
from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .codec import LatentCodec
from .config import ExperimentConfig, fingerprint, parse_config
from .denoiser import VideoDenoiser
from .errors import ConfigurationError, DataIOError
from .generative import keyframe_indices, run_generative_encoder
from .model import WorldModelQA
from .semantic import (EncoderVariant, SemanticEncoder, encode_semantic,
                       pretrain_self_supervised, pretrain_text_aligned,
                       select_semantic_input)
from .tasks import (TaskSample, gen_claim, gen_counting, gen_motion, gen_relation,
                    gen_view, make_caption_samples, make_motion_clips)
from .training import (FreezePolicy, align_stage, evaluate, pretrain_codec,
                       pretrain_denoiser, train_single_stage)

FRAMES_GRID = (1, 4, 8, 14)

_TRAIN_SEED_OFFSETS = {"relation": 11, "counting": 23, "claim": 37, "motion": 41, "view": 53}
_EVAL_SEED_OFFSETS = {"relation": 101, "counting": 211, "motion": 307, "view": 401, "claim": 503}


def _data_seed(cfg: ExperimentConfig) -> int:
    return cfg["data.seed"] + 9973 * cfg["seed"]


def _train_seed(cfg: ExperimentConfig) -> int:
    return cfg["train.seed"] + cfg["seed"]


def make_train_samples(cfg: ExperimentConfig) -> list[TaskSample]:
    """Single-image training mix over the configured task list."""
    base = _data_seed(cfg)
    n = cfg["data.train_per_task"]
    out: list[TaskSample] = []
    for task in cfg["data.train_tasks"]:
        seed = base + _TRAIN_SEED_OFFSETS[task]
        if task == "relation":
            out += gen_relation(n, seed)
        elif task == "counting":
            out += gen_counting(n, seed)
        elif task == "claim":
            out += gen_claim(n, seed)
        elif task == "motion":
            out += gen_motion(n, seed, 1)
        else:
            raise ConfigurationError(
                "view needs two frames and cannot be a training task; "
                "its single-image form is `claim`", key_path="data.train_tasks")
    return out


def make_eval_samples(cfg: ExperimentConfig) -> dict[str, list[TaskSample]]:
    base = _data_seed(cfg)
    n = cfg["data.eval_n"]
    out: dict[str, list[TaskSample]] = {}
    for task in cfg["data.eval_tasks"]:
        seed = base + _EVAL_SEED_OFFSETS[task]
        if task == "relation":
            out[task] = gen_relation(n, seed)
        elif task == "counting":
            out[task] = gen_counting(n, seed)
        elif task == "motion":
            out[task] = gen_motion(n, seed, cfg["data.motion_frames"])
        elif task == "view":
            out[task] = gen_view(n, seed)
        else:
            out[task] = gen_claim(n, seed)
    return out


# --- pretraining with content-hash caching ------------------------------------


def _encoder_cache_key(cfg: ExperimentConfig) -> dict:
    return {"codec": cfg["codec"], "denoiser": cfg["denoiser"], "frames": cfg["frames"]}


def _semantic_cache_key(cfg: ExperimentConfig) -> dict:
    return {"semantic": cfg["semantic"], "variant": cfg["semantic.variant"]}


def ensure_generative_encoders(cfg: ExperimentConfig, workdir: str | Path,
                               info: dict | None = None) -> tuple[LatentCodec, VideoDenoiser]:
    """Pretrain (or load cached) codec and denoiser for this config."""
    cache = Path(workdir) / "cache"
    key = fingerprint(_encoder_cache_key(cfg))[:16]
    path = cache / f"encoders-{key}.ckpt"
    codec = LatentCodec(width=cfg["codec.width"])
    denoiser = VideoDenoiser(cfg.denoiser_spec())
    if path.exists():
        tensors, manifest = load_checkpoint(path)
        codec.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("codec.")})
        denoiser.load_state_dict(
            {k[9:]: v for k, v in tensors.items() if k.startswith("denoiser.")})
        history = manifest["metrics"]
        cached = True
    else:
        seed = cfg["denoiser.pretrain_seed"]
        clips = make_motion_clips(cfg["denoiser.pretrain_clips"], seed + 7, t=cfg["frames"])
        extra = [s.images[0] for s in gen_counting(128, seed + 19)]
        frames = [f for clip in clips for f in clip] + extra
        codec, codec_hist = pretrain_codec(frames, cfg["codec.pretrain_steps"],
                                           seed=seed, width=cfg["codec.width"])
        denoiser, den_hist = pretrain_denoiser(
            codec, clips, cfg["denoiser.pretrain_steps"], seed=seed,
            spec=cfg.denoiser_spec(), sigma_key=float(cfg["schedule.sigma0"]))
        history = {"codec": codec_hist, "denoiser": den_hist}
        tensors = {f"codec.{k}": v for k, v in codec.state_dict().items()}
        tensors.update({f"denoiser.{k}": v for k, v in denoiser.state_dict().items()})
        save_checkpoint(tensors, path, fingerprint=fingerprint(_encoder_cache_key(cfg)),
                        metrics=history)
        cached = False
    if info is not None:
        info["generative_pretrain"] = {"cached": cached, "path": str(path)}
        info.setdefault("histories", {})["generative"] = history
    return codec, denoiser


def ensure_semantic_towers(cfg: ExperimentConfig, workdir: str | Path,
                           info: dict | None = None) -> dict[str, SemanticEncoder]:
    """Pretrain (or load cached) the semantic towers the variant needs."""
    variant = cfg["semantic.variant"]
    if variant == "none":
        return {}
    kinds = ("text_aligned", "self_supervised") if variant == "combined" else (variant,)
    cache = Path(workdir) / "cache"
    key = fingerprint(_semantic_cache_key(cfg))[:16]
    path = cache / f"semantic-{key}.ckpt"
    towers = {k: SemanticEncoder(width=cfg["semantic.width"]) for k in kinds}
    if path.exists():
        tensors, manifest = load_checkpoint(path)
        for kind, tower in towers.items():
            prefix = f"{kind}."
            tower.load_state_dict(
                {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)})
        history = manifest["metrics"]
        cached = True
    else:
        seed = cfg["semantic.pretrain_seed"]
        steps = cfg["semantic.pretrain_steps"]
        samples = make_caption_samples(cfg["semantic.pretrain_samples"], seed + 13)
        history = {}
        for kind in kinds:
            if kind == "text_aligned":
                result = pretrain_text_aligned(samples, steps, seed=seed,
                                               width=cfg["semantic.width"])
            else:
                result = pretrain_self_supervised(samples, steps, seed=seed,
                                                  width=cfg["semantic.width"])
            towers[kind] = result.encoder
            history[kind] = result.history
        tensors = {}
        for kind, tower in towers.items():
            tensors.update({f"{kind}.{k}": v for k, v in tower.state_dict().items()})
        save_checkpoint(tensors, path, fingerprint=fingerprint(_semantic_cache_key(cfg)),
                        metrics=history)
        cached = False
    if info is not None:
        info["semantic_pretrain"] = {"cached": cached, "path": str(path)}
        info.setdefault("histories", {})["semantic"] = history
    return towers


def build_model(cfg: ExperimentConfig, workdir: str | Path,
                info: dict | None = None) -> WorldModelQA:
    """Assemble a model around this config's pretrained components."""
    codec, denoiser = ensure_generative_encoders(cfg, workdir, info)
    towers = ensure_semantic_towers(cfg, workdir, info)
    torch.manual_seed(_train_seed(cfg))
    return WorldModelQA(cfg.model_config(), towers=towers, codec=codec, denoiser=denoiser)


@contextmanager
def frames_override(model: WorldModelQA, frames: int):
    """Temporarily evaluate the model with a different latent frame count."""
    saved = model.cfg.t_frames
    model.cfg.t_frames = frames
    try:
        yield model
    finally:
        model.cfg.t_frames = saved


# --- experiment stages ---------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, workdir: str | Path,
                   eval_only: bool = False,
                   checkpoint_path: str | Path | None = None) -> tuple[dict, Path]:
    """Execute the configured stages and write the run's artifacts."""
    workdir = Path(workdir)
    run_dir = workdir / "runs" / cfg.fingerprint[:16]
    run_dir.mkdir(parents=True, exist_ok=True)
    info: dict = {"stage_seconds": {}, "histories": {}}
    t_start = time.perf_counter()

    def timed(stage: str):
        @contextmanager
        def cm():
            t0 = time.perf_counter()
            yield
            info["stage_seconds"][stage] = round(time.perf_counter() - t0, 3)
        return cm()

    with timed("pretrain"):
        model = build_model(cfg, workdir, info)

    stages: dict = {"align": None, "train": None}
    if eval_only:
        source = Path(checkpoint_path) if checkpoint_path else run_dir / "model.ckpt"
        with timed("load"):
            load_model(model, source)
    else:
        tcfg = cfg.train_config()
        tcfg.seed = _train_seed(cfg)
        if tcfg.align_stage:
            with timed("align"):
                caps = make_caption_samples(cfg["align.samples"], _data_seed(cfg) + 71)
                acfg = cfg.train_config()
                acfg.seed = _train_seed(cfg) + 1
                acfg.total_steps = cfg["align.steps"]
                log = align_stage(model, caps, acfg, fingerprint=cfg.fingerprint)
                report_mod.write_jsonl(log, run_dir / "align_metrics.jsonl")
                stages["align"] = {"steps": len(log), "final_loss": log[-1]["loss"]}
        with timed("train"):
            samples = make_train_samples(cfg)
            log = train_single_stage(model, samples, tcfg, cfg.freeze_policy(),
                                     fingerprint=cfg.fingerprint)
            report_mod.write_jsonl(log, run_dir / "train_metrics.jsonl")
            tail = [r["loss"] for r in log[-50:]]
            stages["train"] = {"steps": len(log), "final_loss": log[-1]["loss"],
                               "mean_tail_loss": round(float(np.mean(tail)), 6)}
        with timed("save"):
            save_model(model, run_dir / "model.ckpt", fingerprint=cfg.fingerprint,
                       step=cfg["train.total_steps"],
                       metrics={"final_loss": stages["train"]["final_loss"]})

    with timed("eval"):
        eval_samples = make_eval_samples(cfg)
        results = {}
        for task, samples in eval_samples.items():
            res = evaluate(model, samples)
            results[task] = {"accuracy": res.accuracy[task], "n": res.n[task],
                             "chance": res.chance[task]}
        train_probe = make_train_samples(cfg)[: min(256, cfg["data.train_per_task"])]
        probe = evaluate(model, train_probe)
        train_accuracy = {k: round(v, 6) for k, v in sorted(probe.accuracy.items())}

    trend = {}
    if "motion" in eval_samples:
        with timed("trend"):
            rows = {}
            for f in FRAMES_GRID:
                with frames_override(model, f):
                    res = evaluate(model, eval_samples["motion"])
                rows[str(f)] = round(res.accuracy["motion"], 6)
            trend["frames"] = rows

    report = {
        "config": cfg.raw,
        "fingerprint": cfg.fingerprint,
        "seed": cfg["seed"],
        "results": {k: {key: round(v[key], 6) if key == "accuracy" else v[key]
                        for key in ("accuracy", "n", "chance")}
                    for k, v in sorted(results.items())},
        "train_accuracy": train_accuracy,
        "trend": trend,
        "stages": stages,
        "pretrain_histories": _rounded(info["histories"]),
        "wall_clock": "recorded in runinfo.json",
    }
    name = "report_eval.json" if eval_only else "report.json"
    report_mod.write_json_atomic(report, run_dir / name)
    info["total_seconds"] = round(time.perf_counter() - t_start, 3)
    report_mod.write_json_atomic(info, run_dir / "runinfo.json")
    return report, run_dir


def _rounded(obj, digits: int = 6):
    if isinstance(obj, dict):
        return {k: _rounded(v, digits) for k, v in sorted(obj.items())}
    if isinstance(obj, float):
        return round(obj, digits)
    return obj


def run_ablation(base_overrides: dict, workdir: str | Path,
                 seed: int | None = None) -> tuple[dict, Path]:
    """Cartesian product of encoder combos x align settings."""
    workdir = Path(workdir)
    base_cfg = parse_config(base_overrides, seed=seed)
    combos = base_cfg["ablation.encoders"]
    aligns = base_cfg["ablation.align"]
    cells = []
    for combo in combos:
        for align in aligns:
            overrides = _deep_merge_dicts(base_overrides, {
                "encoders": combo,
                "train": {"align_stage": align},
                "semantic": {"variant": None},
                "fusion": {"dynamic_source": None, "projector": None},
            })
            cell_cfg = parse_config(overrides, seed=seed)
            report, run_dir = run_experiment(cell_cfg, workdir)
            cells.append({
                "encoders": combo,
                "align": align,
                "fingerprint": cell_cfg.fingerprint,
                "run_dir": run_dir.name,
                "results": report["results"],
                "train_accuracy": report["train_accuracy"],
            })
    summary = {
        "base_fingerprint": base_cfg.fingerprint,
        "cells": cells,
        "axes": {"encoders": list(combos), "align": list(aligns)},
    }
    out = workdir / "ablation_summary.json"
    report_mod.write_json_atomic(summary, out)
    return summary, out


def _deep_merge_dicts(base: dict, extra: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge_dicts(out[key], value)
        else:
            out[key] = value
    return out


def extract_features(cfg: ExperimentConfig, image_paths: list[str | Path],
                     out_path: str | Path, workdir: str | Path) -> dict:
    """Encode user images into dynamic + semantic feature files (.npz)."""
    import json

    from PIL import Image, UnidentifiedImageError

    images = []
    for p in image_paths:
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except (OSError, UnidentifiedImageError) as e:
            raise DataIOError(f"cannot read image {p}: {e}") from e
        images.append(arr)
    model = build_model(cfg, workdir)
    t = cfg["frames"]
    tokens = run_generative_encoder(model.codec, model.denoiser, images, t,
                                    schedule=cfg.schedule(), tap=cfg["denoiser.tap"])
    variant = EncoderVariant(cfg["semantic.variant"])
    towers = {k: v for k, v in model.towers.items()}
    grid = encode_semantic(towers, select_semantic_input(images), variant)
    header = {
        "frames": t,
        "keyframe_indices": keyframe_indices(len(images), t),
        "tap": cfg["denoiser.tap"],
        "rows_dynamic": int(tokens.data.shape[0]),
        "rows_semantic": int(grid.data.shape[0]),
        "hidden_shape": list(tokens.shape),
        "variant": cfg["semantic.variant"],
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out_path, dynamic=tokens.data.numpy(), semantic=grid.data.numpy(),
             header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8))
    return header
