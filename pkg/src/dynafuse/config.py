"""Experiment configuration: strict JSON loading, defaults, and fingerprints.

Unknown keys, type mismatches, and invalid combinations are errors carrying
the offending key path. The fingerprint is the sha256 of the fully resolved
config in canonical JSON form, so any field change changes it.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .denoiser import TAPS, DenoiserSpec
from .errors import ConfigurationError
from .generative import NoiseSchedule
from .model import DYNAMIC_SOURCES, ModelConfig
from .semantic import VARIANTS
from .training import POLICIES, FreezePolicy, TrainConfig

TASK_NAMES = ("relation", "counting", "motion", "view", "claim")

# encoder combination -> (semantic variant, dynamic source, semantic seed offset)
ENCODER_COMBOS = {
    "vae_only": ("none", "vae", 0),
    "svd_only": ("none", "denoiser", 0),
    "selfsup_svd": ("self_supervised", "denoiser", 0),
    "text_svd": ("text_aligned", "denoiser", 0),
    "text2_svd": ("text_aligned", "denoiser", 1),
    "combined_svd": ("combined", "denoiser", 0),
}

DEFAULTS: dict = {
    "seed": 0,
    "frames": 8,
    "encoders": "text_svd",
    "freeze": "frozen_both",
    "semantic": {
        "variant": None,  # derived from `encoders` unless set
        "width": 64,
        "pretrain_steps": 250,
        "pretrain_samples": 768,
        "pretrain_seed": 0,
    },
    "codec": {"width": 16, "pretrain_steps": 300},
    "denoiser": {
        "base_width": 32,
        "depth": 2,
        "channel_multipliers": [1, 2],
        "tap": "pre_mid",
        "pretrain_steps": 500,
        "pretrain_clips": 384,
        "pretrain_seed": 0,
    },
    "schedule": {"sigma0": 1.0, "dsigma": -1.0},
    "fusion": {"dynamic_source": None, "projector": None, "projector_hidden": 256},
    "decoder": {"width": 128, "depth": 4, "heads": 4},
    "train": {
        "batch_size": 32,
        "peak_lr": 3e-4,
        "weight_decay": 0.1,
        "max_grad_norm": 1.0,
        "warmup_ratio": 0.03,
        "total_steps": 1500,
        "seed": 0,
        "align_stage": False,
    },
    "align": {"steps": 150, "samples": 512},
    "data": {
        "train_tasks": ["relation", "counting", "claim"],
        "train_per_task": 1024,
        "eval_tasks": ["relation", "counting", "motion", "view"],
        "eval_n": 200,
        "seed": 1017,
        "motion_frames": 6,
    },
    "ablation": {
        "encoders": ["vae_only", "svd_only", "selfsup_svd",
                     "text_svd", "text2_svd", "combined_svd"],
        "align": [False, True],
    },
}

_PROJECTOR_FOR_SOURCE = {"denoiser": "dynamic_mlp", "vae": "vae_conv_mlp"}


def _type_name(value) -> str:
    return type(value).__name__


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigurationError(message, key_path=path)


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        full = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigurationError(f"unknown config key", key_path=full)
        if isinstance(defaults[key], dict):
            _check(isinstance(value, dict), full,
                   f"expected object, got {_type_name(value)}")
            out[key] = _merge(defaults[key], value, full)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _expect_int(cfg: dict, path: str, lo: int | None = None, hi: int | None = None):
    value = _dig(cfg, path)
    _check(isinstance(value, int) and not isinstance(value, bool), path,
           f"expected integer, got {_type_name(value)}")
    if lo is not None:
        _check(value >= lo, path, f"must be >= {lo}, got {value}")
    if hi is not None:
        _check(value <= hi, path, f"must be <= {hi}, got {value}")


def _expect_real(cfg: dict, path: str, positive: bool = False):
    value = _dig(cfg, path)
    _check(isinstance(value, (int, float)) and not isinstance(value, bool), path,
           f"expected number, got {_type_name(value)}")
    if positive:
        _check(value > 0, path, f"must be positive, got {value}")


def _expect_bool(cfg: dict, path: str):
    value = _dig(cfg, path)
    _check(isinstance(value, bool), path, f"expected boolean, got {_type_name(value)}")


def _expect_choice(cfg: dict, path: str, allowed):
    value = _dig(cfg, path)
    _check(value in allowed, path,
           f"must be one of {sorted(str(a) for a in allowed)}, got {value!r}")


def _dig(cfg: dict, path: str):
    node = cfg
    for part in path.split("."):
        node = node[part]
    return node


def _set(cfg: dict, path: str, value) -> None:
    parts = path.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value


def validate_config(cfg: dict) -> dict:
    """Validate a merged config dict and resolve derived fields in place."""
    _expect_int(cfg, "seed", 0)
    _expect_int(cfg, "frames", 1, 32)
    _expect_choice(cfg, "encoders", ENCODER_COMBOS)
    _expect_choice(cfg, "freeze", POLICIES)

    variant, source, seed_off = ENCODER_COMBOS[cfg["encoders"]]
    if cfg["semantic"]["variant"] is None:
        cfg["semantic"]["variant"] = variant
    if cfg["fusion"]["dynamic_source"] is None:
        cfg["fusion"]["dynamic_source"] = source
    cfg["semantic"]["pretrain_seed"] = cfg["semantic"]["pretrain_seed"] + seed_off

    _expect_choice(cfg, "semantic.variant", VARIANTS)
    _expect_int(cfg, "semantic.width", 8)
    _expect_int(cfg, "semantic.pretrain_steps", 1)
    _expect_int(cfg, "semantic.pretrain_samples", 8)
    _expect_int(cfg, "semantic.pretrain_seed", 0)
    _expect_int(cfg, "codec.width", 4)
    _expect_int(cfg, "codec.pretrain_steps", 1)
    _expect_int(cfg, "denoiser.base_width", 8)
    _expect_int(cfg, "denoiser.depth", 1, 3)
    mults = cfg["denoiser"]["channel_multipliers"]
    _check(isinstance(mults, list) and all(isinstance(m, int) and m >= 1 for m in mults),
           "denoiser.channel_multipliers", f"expected list of positive ints, got {mults!r}")
    _expect_choice(cfg, "denoiser.tap", TAPS)
    _expect_int(cfg, "denoiser.pretrain_steps", 1)
    _expect_int(cfg, "denoiser.pretrain_clips", 8)
    _expect_int(cfg, "denoiser.pretrain_seed", 0)
    _expect_real(cfg, "schedule.sigma0", positive=True)
    _expect_real(cfg, "schedule.dsigma")
    _check(cfg["schedule"]["sigma0"] + cfg["schedule"]["dsigma"] >= 0,
           "schedule.dsigma", "step must not cross sigma = 0")
    _expect_choice(cfg, "fusion.dynamic_source", DYNAMIC_SOURCES)
    if cfg["fusion"]["projector"] is None:
        cfg["fusion"]["projector"] = _PROJECTOR_FOR_SOURCE[cfg["fusion"]["dynamic_source"]]
    _expect_choice(cfg, "fusion.projector", ("dynamic_mlp", "vae_conv_mlp"))
    expected = _PROJECTOR_FOR_SOURCE[cfg["fusion"]["dynamic_source"]]
    _check(cfg["fusion"]["projector"] == expected, "fusion.projector",
           f"{cfg['fusion']['dynamic_source']} features require {expected}, "
           f"got {cfg['fusion']['projector']!r}")
    _expect_int(cfg, "fusion.projector_hidden", 8)
    _expect_int(cfg, "decoder.width", 16)
    _expect_int(cfg, "decoder.depth", 1)
    _expect_int(cfg, "decoder.heads", 1)
    _expect_int(cfg, "train.batch_size", 1)
    _expect_real(cfg, "train.peak_lr", positive=True)
    _expect_real(cfg, "train.weight_decay")
    _expect_real(cfg, "train.max_grad_norm", positive=True)
    _expect_real(cfg, "train.warmup_ratio")
    _check(0 <= cfg["train"]["warmup_ratio"] < 1, "train.warmup_ratio",
           "must be in [0, 1)")
    _expect_int(cfg, "train.total_steps", 1)
    _expect_int(cfg, "train.seed", 0)
    _expect_bool(cfg, "train.align_stage")
    _expect_int(cfg, "align.steps", 1)
    _expect_int(cfg, "align.samples", 8)
    for key in ("data.train_tasks", "data.eval_tasks"):
        tasks = _dig(cfg, key)
        _check(isinstance(tasks, list) and tasks, key, "expected non-empty list")
        for name in tasks:
            _check(name in TASK_NAMES, key,
                   f"must be one of {sorted(TASK_NAMES)}, got {name!r}")
    _check("view" not in cfg["data"]["train_tasks"], "data.train_tasks",
           "view needs two frames; training is single-image only "
           "(use `claim`, its single-image form)")
    _expect_int(cfg, "data.train_per_task", 1)
    _expect_int(cfg, "data.eval_n", 1)
    _expect_int(cfg, "data.seed", 0)
    _expect_int(cfg, "data.motion_frames", 1, 32)
    combos = cfg["ablation"]["encoders"]
    _check(isinstance(combos, list) and combos, "ablation.encoders",
           "expected non-empty list")
    for name in combos:
        _check(name in ENCODER_COMBOS, "ablation.encoders",
               f"must be one of {sorted(ENCODER_COMBOS)}, got {name!r}")
    aligns = cfg["ablation"]["align"]
    _check(isinstance(aligns, list) and aligns and all(isinstance(a, bool) for a in aligns),
           "ablation.align", "expected non-empty list of booleans")

    spec = DenoiserSpec(cfg["denoiser"]["base_width"], cfg["denoiser"]["depth"],
                        tuple(mults), cfg["denoiser"]["tap"])
    spec.validate()
    return cfg


def fingerprint(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class ExperimentConfig:
    """A validated, fully resolved experiment description."""

    raw: dict

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.raw)

    def __getitem__(self, key: str):
        return _dig(self.raw, key)

    def denoiser_spec(self) -> DenoiserSpec:
        d = self.raw["denoiser"]
        return DenoiserSpec(d["base_width"], d["depth"],
                            tuple(d["channel_multipliers"]), d["tap"])

    def schedule(self) -> NoiseSchedule:
        s = self.raw["schedule"]
        return NoiseSchedule(sigma0=float(s["sigma0"]), dsigma=float(s["dsigma"]))

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.raw["semantic"]["variant"],
            dynamic_source=self.raw["fusion"]["dynamic_source"],
            t_frames=self.raw["frames"],
            tap=self.raw["denoiser"]["tap"],
            schedule=self.schedule(),
            semantic_width=self.raw["semantic"]["width"],
            decoder_width=self.raw["decoder"]["width"],
            decoder_depth=self.raw["decoder"]["depth"],
            decoder_heads=self.raw["decoder"]["heads"],
            projector_hidden=self.raw["fusion"]["projector_hidden"],
            denoiser_spec=self.denoiser_spec(),
        )

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(batch_size=t["batch_size"], peak_lr=float(t["peak_lr"]),
                           weight_decay=float(t["weight_decay"]),
                           max_grad_norm=float(t["max_grad_norm"]),
                           warmup_ratio=float(t["warmup_ratio"]),
                           total_steps=t["total_steps"], seed=t["seed"],
                           align_stage=t["align_stage"])

    def freeze_policy(self) -> FreezePolicy:
        return FreezePolicy(self.raw["freeze"])

    def pretrain_subconfig(self) -> dict:
        """The slice of config that determines pretrained encoder parameters;
        its fingerprint keys the pretraining cache."""
        return {
            "codec": self.raw["codec"],
            "denoiser": self.raw["denoiser"],
            "semantic": self.raw["semantic"],
            "frames_source": self.raw["data"]["motion_frames"],
        }


def parse_config(overrides: dict, seed: int | None = None) -> ExperimentConfig:
    if not isinstance(overrides, dict):
        raise ConfigurationError(f"config root must be an object, got {_type_name(overrides)}")
    merged = _merge(DEFAULTS, overrides)
    if seed is not None:
        merged["seed"] = seed
    return ExperimentConfig(raw=validate_config(merged))


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config is not valid JSON: {e}") from e
    return parse_config(data, seed=seed)
