"""Generative visual encoding: latent assembly, the single Euler step, and
hidden-feature extraction.

The pipeline treats the denoiser as an encoder: images become codec latents,
latents are replicated (or keyframe-slotted) into a T-frame clip Z0, one
explicit Euler step produces Z1 = Z0 + dsigma * drift(Z0, sigma0, cond), and a
second denoiser pass on Z1 is tapped at the mid block for features. No frames
are ever rendered back to pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .codec import LatentCodec
from .denoiser import DenoiserSpec, VideoDenoiser, sinusoidal_embedding
from .errors import InvalidArgumentError, NumericError, ValidationError

# Noise level claimed for the feature pass on Z1. The step usually lands at
# sigma = 0, but the sigma embedding needs log(sigma), so the pass runs at a
# small positive floor instead.
SIGMA_FEATURE_FLOOR = 0.02


@dataclass
class NoiseSchedule:
    """Initial noise level and Euler step size; the default is one full step."""

    sigma0: float = 1.0
    dsigma: float = -1.0

    def validate(self) -> None:
        if not np.isfinite(self.sigma0) or self.sigma0 <= 0:
            raise InvalidArgumentError(f"sigma0 must be positive, got {self.sigma0}")
        if not np.isfinite(self.dsigma) or self.sigma0 + self.dsigma < -1e-12:
            raise InvalidArgumentError(
                f"step must not cross sigma=0: sigma0={self.sigma0} dsigma={self.dsigma}")

    @property
    def sigma_feature(self) -> float:
        return max(self.sigma0 + self.dsigma, SIGMA_FEATURE_FLOOR)


@dataclass
class ImageLatent:
    data: torch.Tensor  # (C_lat, H', W')
    source_id: int = 0

    def validate(self) -> None:
        if self.data.dim() != 3:
            raise ValidationError(f"latent must be (C, H', W'), got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ValidationError("latent has non-finite entries")


@dataclass
class LatentVideo:
    data: torch.Tensor  # (T, C_lat, H', W')

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    def validate(self) -> None:
        if self.data.dim() != 4 or self.data.shape[0] < 1:
            raise ValidationError(f"video must be (T, C, H', W'), got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ValidationError("video has non-finite entries")


@dataclass
class ConditioningContext:
    """Deterministic conditioning: frame position codes + pooled first frame."""

    frame_embeddings: torch.Tensor  # (T, d_cond)
    image_summary: torch.Tensor  # (d_cond,)

    @staticmethod
    def from_video(video: LatentVideo, d_cond: int) -> "ConditioningContext":
        t = video.frame_count
        frames = sinusoidal_embedding(torch.arange(t, dtype=video.data.dtype), d_cond)
        pooled = video.data[0].mean(dim=(1, 2))
        reps = -(-d_cond // pooled.shape[0])
        summary = pooled.repeat(reps)[:d_cond]
        return ConditioningContext(frame_embeddings=frames, image_summary=summary)


@dataclass
class HiddenFeatures:
    data: torch.Tensor  # (T, H_d, W_d, C_h), channels last
    tap: str = "pre_mid"

    def validate(self) -> None:
        if self.data.dim() != 4:
            raise ValidationError(f"hidden features must be 4-d, got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ValidationError("hidden features have non-finite entries")


@dataclass
class FlatDynamicTokens:
    data: torch.Tensor  # (T*H_d*W_d, C_h); frame-major, then row-major
    shape: tuple[int, int, int] = field(default=(0, 0, 0))  # (T, H_d, W_d)


def encode_latent(codec: LatentCodec, image: np.ndarray | torch.Tensor,
                  source_id: int = 0) -> ImageLatent:
    """Embed one (H, W, 3) image in [0,1] into its (C_lat, H/8, W/8) latent."""
    arr = torch.as_tensor(np.asarray(image))
    if arr.dim() != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {tuple(arr.shape)}")
    h, w = arr.shape[0], arr.shape[1]
    if h % 8 or w % 8:
        raise InvalidArgumentError(f"image dimensions must be divisible by 8, got {h}x{w}")
    if not torch.isfinite(arr).all():
        raise ValidationError("image has non-finite entries")
    param = next(codec.parameters())
    x = arr.permute(2, 0, 1).unsqueeze(0).to(param.dtype)
    with torch.no_grad():
        z = codec.encode(x)[0]
    return ImageLatent(data=z, source_id=source_id)


def replicate_latent(z0: ImageLatent, t: int) -> LatentVideo:
    """Stack T bitwise-equal copies of one latent into a clip."""
    if t < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {t}")
    return LatentVideo(data=z0.data.unsqueeze(0).repeat(t, 1, 1, 1))


def keyframe_indices(k: int, t: int) -> list[int]:
    """Evenly spaced frame slots round(linspace(0, T-1, K)), ties away from zero."""
    if k < 1 or k > t:
        raise InvalidArgumentError(f"need 1 <= K <= T, got K={k} T={t}")
    if k == 1:
        return [0]
    positions = np.linspace(0.0, float(t - 1), k)
    # numpy rounds half to even; the contract is half away from zero
    return [int(np.floor(p + 0.5)) for p in positions]


def assemble_multi_image(latents: list[ImageLatent], t: int) -> LatentVideo:
    """Fill a T-frame clip with copies of latents[0], then slot each latent k
    at frame index round(linspace(0, T-1, K))[k]."""
    if not latents:
        raise InvalidArgumentError("need at least one latent")
    shape = tuple(latents[0].data.shape)
    for z in latents[1:]:
        if tuple(z.data.shape) != shape:
            raise ValidationError(f"latent shapes differ: {shape} vs {tuple(z.data.shape)}")
    video = replicate_latent(latents[0], t)
    for k, idx in enumerate(keyframe_indices(len(latents), t)):
        video.data[idx] = latents[k].data
    return video


def to_drift(z: torch.Tensor, sigma: float, denoised: torch.Tensor) -> torch.Tensor:
    """Convert a denoised estimate into the ODE drift (z - denoised) / sigma."""
    return (z - denoised) / sigma


def euler_step(z0: LatentVideo, schedule: NoiseSchedule, drift) -> LatentVideo:
    """One explicit Euler step Z1 = Z0 + dsigma * drift(Z0, sigma0).

    `drift` is any callable (tensor (T, C, H', W'), sigma) -> tensor; the
    denoiser-backed pipeline passes a closure over its parameters, tests pass
    synthetic closures. The callable is evaluated exactly once.
    """
    schedule.validate()
    z0.validate()
    f = drift(z0.data, schedule.sigma0)
    z1 = z0.data + schedule.dsigma * f
    if not torch.isfinite(z1).all():
        bad = torch.nonzero(~torch.isfinite(z1).reshape(z1.shape[0], -1).all(dim=1))
        frame = int(bad[0]) if len(bad) else -1
        raise NumericError("non-finite Euler step output", context={"frame": frame})
    return LatentVideo(data=z1)


def denoiser_drift(denoiser: VideoDenoiser, cond: ConditioningContext):
    """Drift closure over denoiser parameters, for euler_step."""

    def drift(z: torch.Tensor, sigma: float) -> torch.Tensor:
        with torch.no_grad():
            d = denoiser(z.unsqueeze(0), sigma,
                         frame_emb=cond.frame_embeddings,
                         summary=cond.image_summary.unsqueeze(0))[0]
        return to_drift(z, sigma, d)

    return drift


def extract_hidden(denoiser: VideoDenoiser, z1: LatentVideo, cond: ConditioningContext,
                   sigma: float, tap: str | None = None) -> HiddenFeatures:
    """Record the mid-block activations of a forward pass on Z1.

    pre_mid is the activation entering the mid block, post_mid the one leaving
    it; both live at the lowest down-path resolution.
    """
    tap = tap or denoiser.spec.tap
    if tap not in ("pre_mid", "post_mid"):
        raise InvalidArgumentError(f"unknown tap {tap!r}")
    z1.validate()
    taps: dict = {}
    with torch.no_grad():
        denoiser(z1.data.unsqueeze(0), sigma,
                 frame_emb=cond.frame_embeddings,
                 summary=cond.image_summary.unsqueeze(0), taps=taps)
    feats = taps[tap][0]  # (T, C_h, H_d, W_d)
    return HiddenFeatures(data=feats.permute(0, 2, 3, 1).contiguous(), tap=tap)


def flatten_hidden(h: HiddenFeatures) -> FlatDynamicTokens:
    """(T, H_d, W_d, C_h) -> (T*H_d*W_d, C_h), frame-major then row-major."""
    h.validate()
    t, hd, wd, c = h.data.shape
    return FlatDynamicTokens(data=h.data.reshape(t * hd * wd, c), shape=(t, hd, wd))


def unflatten_hidden(tokens: FlatDynamicTokens, tap: str = "pre_mid") -> HiddenFeatures:
    t, hd, wd = tokens.shape
    return HiddenFeatures(data=tokens.data.reshape(t, hd, wd, -1), tap=tap)


def run_generative_encoder(codec: LatentCodec, denoiser: VideoDenoiser,
                           images: list, t: int,
                           schedule: NoiseSchedule | None = None,
                           tap: str | None = None) -> FlatDynamicTokens:
    """encode -> assemble -> euler_step -> extract_hidden -> flatten."""
    schedule = schedule or NoiseSchedule()
    if not images:
        raise InvalidArgumentError("need at least one image")
    if len(images) > t:
        raise InvalidArgumentError(f"got {len(images)} images for T={t} frames")
    latents = [encode_latent(codec, img, source_id=i) for i, img in enumerate(images)]
    z0 = assemble_multi_image(latents, t)
    cond = ConditioningContext.from_video(z0, denoiser.spec.cond_width)
    z1 = euler_step(z0, schedule, denoiser_drift(denoiser, cond))
    hidden = extract_hidden(denoiser, z1, cond, schedule.sigma_feature, tap)
    return flatten_hidden(hidden)
