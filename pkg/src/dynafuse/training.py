"""Training recipes: codec/denoiser pretraining, projector alignment, and the
single-stage instruction tuning loop with freeze policies.

The single-stage loop trains on single-image samples only; multi-image inputs
are reserved for zero-shot evaluation. Components outside the active freeze
policy are excluded from the optimizer entirely (not just zero-lr), so weight
decay cannot touch them and their parameters stay bit-identical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch

from .codec import LatentCodec
from .decoder import answer_cross_entropy
from .denoiser import DenoiserSpec, VideoDenoiser
from .errors import InvalidArgumentError, NumericError, ValidationError
from .generative import keyframe_indices
from .model import WorldModelQA, collate_streams, predict
from .tasks import EvalResult, TaskSample, score

POLICIES = ("frozen_both", "unet_trainable", "unet_vae_trainable")


@dataclass
class FreezePolicy:
    """Selects which parameter groups train; the semantic encoder never does."""

    policy: str = "frozen_both"

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise InvalidArgumentError(f"policy must be one of {POLICIES}, got {self.policy!r}")

    def trainable_groups(self) -> tuple[str, ...]:
        self.validate()
        groups = ["projectors", "decoder"]
        if self.policy in ("unet_trainable", "unet_vae_trainable"):
            groups.append("denoiser")
        if self.policy == "unet_vae_trainable":
            groups.append("codec")
        return tuple(groups)


@dataclass
class TrainConfig:
    batch_size: int = 32
    peak_lr: float = 3e-4
    weight_decay: float = 0.1
    max_grad_norm: float = 1.0
    warmup_ratio: float = 0.03
    total_steps: int = 1500
    seed: int = 0
    align_stage: bool = False

    def validate(self) -> None:
        if self.batch_size < 1 or self.total_steps < 1:
            raise InvalidArgumentError("batch_size and total_steps must be >= 1")
        if self.peak_lr <= 0 or self.max_grad_norm <= 0:
            raise InvalidArgumentError("peak_lr and max_grad_norm must be positive")
        if not 0 <= self.warmup_ratio < 1:
            raise InvalidArgumentError("warmup_ratio must be in [0, 1)")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_ratio * self.total_steps)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr over ceil(warmup_ratio * total), then cosine to 0."""
    if step < 0 or step > cfg.total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {cfg.total_steps}]")
    w = cfg.warmup_steps
    if step <= w and w > 0:
        return cfg.peak_lr * step / w
    if step >= cfg.total_steps:
        return 0.0
    progress = (step - w) / (cfg.total_steps - w)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> dict[str, torch.Tensor]:
    """Global-L2 clipping: if the joint norm exceeds max_norm, scale all
    gradients by max_norm / norm. Pure; returns new tensors."""
    if max_norm <= 0:
        raise InvalidArgumentError("max_norm must be positive")
    total = 0.0
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericError("non-finite gradient", context={"parameter": name})
        total += float(g.double().pow(2).sum())
    norm = math.sqrt(total)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def clip_parameter_grads_(named_params: list[tuple[str, torch.nn.Parameter]],
                          max_norm: float) -> float:
    """In-place variant for the training loop; returns the pre-clip norm."""
    total = 0.0
    for name, p in named_params:
        if p.grad is None:
            continue
        if not torch.isfinite(p.grad).all():
            raise NumericError("non-finite gradient", context={"parameter": name})
        total += float(p.grad.double().pow(2).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad.mul_(scale)
    return norm


def make_optimizer(named_params: list[tuple[str, torch.nn.Parameter]],
                   cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW([p for _, p in named_params], lr=cfg.peak_lr,
                             betas=(0.9, 0.999), eps=1e-8,
                             weight_decay=cfg.weight_decay)


# --- pretraining -------------------------------------------------------------


def _frames_tensor(frames: list[np.ndarray]) -> torch.Tensor:
    return torch.as_tensor(np.stack(frames).astype(np.float32)).permute(0, 3, 1, 2)


def pretrain_codec(frames: list[np.ndarray], steps: int, seed: int = 0,
                   batch_size: int = 32, lr: float = 2e-3,
                   width: int = 16) -> tuple[LatentCodec, dict]:
    """Reconstruction pretraining for the latent codec."""
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    torch.manual_seed(seed)
    codec = LatentCodec(width=width)
    data = _frames_tensor(frames)
    n_held = max(4, len(frames) // 10)
    held, train = data[:n_held], data[n_held:]
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    rng = np.random.default_rng(seed)

    def held_loss() -> float:
        with torch.no_grad():
            return float(torch.nn.functional.mse_loss(codec(held), held))

    initial = held_loss()
    for _ in range(steps):
        idx = rng.choice(len(train), size=min(batch_size, len(train)), replace=False)
        batch = train[idx]
        loss = torch.nn.functional.mse_loss(codec(batch), batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return codec, {"held_out_initial": initial, "held_out_final": held_loss()}


def _keyframe_degenerate(clips: torch.Tensor, ks: list[int]) -> torch.Tensor:
    """Replace each clip with its keyframe-slotted reduction: keep K evenly
    spaced frames in their slots, fill the rest with frame 0's latent."""
    out = clips[:, 0:1].expand_as(clips).clone()
    t = clips.shape[1]
    for i, k in enumerate(ks):
        src = keyframe_indices(k, t)
        for j, idx in enumerate(src):
            out[i, idx] = clips[i, src[j]]
    return out


def pretrain_denoiser(codec: LatentCodec, clips: list[list[np.ndarray]], steps: int,
                      seed: int = 0, batch_size: int = 16, lr: float = 2e-3,
                      spec: DenoiserSpec | None = None,
                      sigma_range: tuple[float, float] = (0.02, 1.5),
                      sigma_key: float = 1.0) -> tuple[VideoDenoiser, dict]:
    """Denoising pretraining on synthetic latent clips.

    Each batch mixes two corruptions of the clean clip: Gaussian noise at a
    log-uniform sigma (classic denoising), and keyframe degeneracy at the
    fixed deployment level `sigma_key` (K evenly spaced true frames, the rest
    frame-0 copies). The second matches exactly what inference feeds the
    denoiser, so the learned prior interpolates motion between keyframes.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    t = len(clips[0])
    for c in clips:
        if len(c) != t or any(f.shape != c[0].shape for f in c):
            raise ValidationError("clips must share one (T, H, W, 3) shape")
    torch.manual_seed(seed)
    denoiser = VideoDenoiser(spec or DenoiserSpec())
    with torch.no_grad():
        frames = _frames_tensor([f for clip in clips for f in clip])
        z_all = []
        for i in range(0, len(frames), 64):
            z_all.append(codec.encode(frames[i: i + 64]))
        z = torch.cat(z_all).reshape(len(clips), t, *z_all[0].shape[1:])
    n_held = max(2, len(clips) // 10)
    held, train = z[:n_held], z[n_held:]
    opt = torch.optim.Adam(denoiser.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    lo, hi = sigma_range
    k_max = min(t, 6)

    def corrupt(batch: torch.Tensor, brng: np.random.Generator):
        n = batch.shape[0]
        keyed = brng.random(n) < 0.5
        ks = [int(brng.integers(1, k_max + 1)) for _ in range(n)]
        noisy = _keyframe_degenerate(batch, ks)
        sigma = torch.tensor(np.where(
            keyed, sigma_key, np.exp(brng.uniform(np.log(lo), np.log(hi), size=n))),
            dtype=batch.dtype)
        eps = torch.as_tensor(brng.standard_normal(batch.shape), dtype=batch.dtype)
        gauss = batch + sigma.reshape(n, 1, 1, 1, 1) * eps
        mask = torch.as_tensor(keyed).reshape(n, 1, 1, 1, 1)
        return torch.where(mask, noisy, gauss), sigma

    def denoise_loss(batch: torch.Tensor, brng: np.random.Generator) -> torch.Tensor:
        noisy, sigma = corrupt(batch, brng)
        pred = denoiser(noisy, sigma)
        return torch.nn.functional.mse_loss(pred, batch)

    def held_loss() -> float:
        with torch.no_grad():
            return float(denoise_loss(held, np.random.default_rng(seed + 1)))

    initial = held_loss()
    for _ in range(steps):
        idx = rng.choice(len(train), size=min(batch_size, len(train)), replace=False)
        loss = denoise_loss(train[idx], rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return denoiser, {"held_out_initial": initial, "held_out_final": held_loss()}


# --- feature caching ---------------------------------------------------------


class FeatureCache:
    """Precomputed per-sample visual features for stages whose encoders are
    frozen. Dynamic features are cached as flattened hidden tokens (denoiser
    source) or assembled latent clips (vae source)."""

    def __init__(self, model: WorldModelQA, samples: list[TaskSample],
                 cache_dynamic: bool, chunk: int = 64):
        self.cache_dynamic = cache_dynamic
        sems, dyns, self._samples = [], [], samples
        model.eval()
        with torch.no_grad():
            for i in range(0, len(samples), chunk):
                part = samples[i: i + chunk]
                clips = model.images_to_clips(part)
                sem = model.semantic_features(clips)
                sems.append(sem if sem is not None else None)
                if cache_dynamic:
                    dyns.append(model.dynamic_features(clips))
                else:
                    dyns.append(clips)
        model.train()
        self.sem = torch.cat(sems) if sems[0] is not None else None
        self.dyn = torch.cat(dyns)

    def batch(self, model: WorldModelQA, idx: np.ndarray):
        sem = self.sem[idx] if self.sem is not None else None
        if self.cache_dynamic:
            return sem, self.dyn[idx]
        return sem, model.dynamic_features(self.dyn[idx])


# --- alignment and single-stage tuning ----------------------------------------


def _set_requires_grad(model: WorldModelQA, trainable: tuple[str, ...]) -> dict[str, bool]:
    saved = {}
    for group, params in model.parameter_groups().items():
        for name, p in params:
            saved[name] = p.requires_grad
            p.requires_grad_(group in trainable)
    return saved


def _restore_requires_grad(model: WorldModelQA, saved: dict[str, bool]) -> None:
    for name, p in model.named_parameters():
        p.requires_grad_(saved[name])


def _run_stage(model: WorldModelQA, samples: list[TaskSample], cfg: TrainConfig,
               trainable: tuple[str, ...], fingerprint: str | None) -> list[dict]:
    cfg.validate()
    saved = _set_requires_grad(model, trainable)
    groups = model.parameter_groups()
    named = [np_ for g in trainable for np_ in groups[g]]
    opt = make_optimizer(named, cfg)
    cache_dynamic = "denoiser" not in trainable and "codec" not in trainable
    cache = FeatureCache(model, samples, cache_dynamic)
    ids, mask = collate_streams(samples)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(samples))
    cursor = 0
    log: list[dict] = []
    try:
        for step in range(cfg.total_steps):
            t0 = time.perf_counter()
            if cursor + cfg.batch_size > len(order):
                order = rng.permutation(len(samples))
                cursor = 0
            idx = order[cursor: cursor + cfg.batch_size]
            cursor += cfg.batch_size
            sem, dyn = cache.batch(model, idx)
            visual = model.visual_tokens(sem, dyn)
            logits = model.decoder(visual, ids[idx])
            loss = answer_cross_entropy(logits, ids[idx], mask[idx], visual.shape[1])
            if not torch.isfinite(loss):
                raise NumericError("non-finite training loss",
                                   context={"step": step, "fingerprint": fingerprint})
            lr = lr_at(step, cfg)
            for pg in opt.param_groups:
                pg["lr"] = lr
            opt.zero_grad()
            loss.backward()
            grad_norm = clip_parameter_grads_(named, cfg.max_grad_norm)
            opt.step()
            log.append({"step": step, "loss": round(float(loss.detach()), 6), "lr": lr,
                        "grad_norm": round(grad_norm, 6),
                        "wall_ms": round((time.perf_counter() - t0) * 1e3, 3)})
    finally:
        _restore_requires_grad(model, saved)
    return log


def align_stage(model: WorldModelQA, caption_samples: list[TaskSample],
                cfg: TrainConfig, fingerprint: str | None = None) -> list[dict]:
    """Projector-only warm start on caption samples; everything else frozen."""
    return _run_stage(model, caption_samples, cfg, ("projectors",), fingerprint)


def train_single_stage(model: WorldModelQA, samples: list[TaskSample], cfg: TrainConfig,
                       policy: FreezePolicy | None = None,
                       fingerprint: str | None = None) -> list[dict]:
    """Instruction tuning on single-image QA samples under a freeze policy."""
    policy = policy or FreezePolicy()
    for s in samples:
        if len(s.images) != 1:
            raise InvalidArgumentError(
                "single-stage training takes single-image samples only; "
                "multi-image inputs are reserved for zero-shot evaluation")
    return _run_stage(model, samples, cfg, policy.trainable_groups(), fingerprint)


def evaluate(model: WorldModelQA, samples: list[TaskSample],
             batch_size: int = 64) -> EvalResult:
    """Greedy-decode predictions and score them per task kind."""
    return score(predict(model, samples, batch_size=batch_size), samples)
