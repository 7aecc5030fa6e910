"""Toy video-diffusion denoiser: a depth-configurable U-Net over latent clips.

The network runs per-frame spatial convolutions with temporal self-attention
at the lowest resolution and in the mid block, so mid-block activations can
carry cross-frame information. It predicts the clean clip from a corrupted
one, conditioned on the noise level sigma, sinusoidal frame-position codes,
and a pooled first-frame summary. Preconditioning follows the standard
sigma-data scaling so both very noisy and nearly clean inputs are
well-behaved.

Hidden activations entering and leaving the mid block (the "pre_mid" and
"post_mid" taps) are what the pipeline extracts as dynamic features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError

SIGMA_DATA = 0.5

TAPS = ("pre_mid", "post_mid")


@dataclass
class DenoiserSpec:
    """Architecture hyperparameters plus the feature tap selection."""

    base_width: int = 32
    depth: int = 2
    channel_multipliers: tuple[int, ...] = (1, 2)
    tap: str = "pre_mid"

    def validate(self, latent_hw: tuple[int, int] = (8, 8)) -> None:
        if self.tap not in TAPS:
            raise ConfigurationError(
                f"tap must be one of {TAPS}, got {self.tap!r}", key_path="denoiser.tap")
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1", key_path="denoiser.depth")
        if len(self.channel_multipliers) != self.depth:
            raise ConfigurationError(
                f"need {self.depth} channel multipliers, got {len(self.channel_multipliers)}",
                key_path="denoiser.channel_multipliers")
        factor = 2 ** self.depth
        h, w = latent_hw
        if h % factor or w % factor or h < factor or w < factor:
            raise ConfigurationError(
                f"tap resolution {h}/{factor} x {w}/{factor} is not a whole grid >= 1x1",
                key_path="denoiser.depth")

    def tap_hw(self, latent_hw: tuple[int, int] = (8, 8)) -> tuple[int, int]:
        f = 2 ** self.depth
        return latent_hw[0] // f, latent_hw[1] // f

    @property
    def hidden_channels(self) -> int:
        return self.base_width * self.channel_multipliers[-1]

    @property
    def cond_width(self) -> int:
        return self.base_width


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos position codes, shape (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=positions.dtype) / half)
    args = positions[..., None] * freqs
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_width: int):
        super().__init__()
        groups = math.gcd(8, c_in)
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb_proj = nn.Linear(emb_width, c_out)
        self.norm2 = nn.GroupNorm(math.gcd(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class TemporalAttention(nn.Module):
    """Self-attention across the frame axis at each spatial location."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, C, h, w) -> tokens (B*h*w, T, C)
        b, t, c, h, w = x.shape
        tokens = x.permute(0, 3, 4, 1, 2).reshape(b * h * w, t, c)
        normed = self.norm(tokens)
        out, _ = self.attn(normed, normed, normed, need_weights=False)
        tokens = tokens + out
        return tokens.reshape(b, h, w, t, c).permute(0, 3, 4, 1, 2)


class VideoDenoiser(nn.Module):
    """U-Net denoiser over (B, T, C_lat, h, w) latent clips."""

    def __init__(self, spec: DenoiserSpec | None = None, latent_channels: int = 4):
        super().__init__()
        self.spec = spec or DenoiserSpec()
        self.spec.validate()
        self.latent_channels = latent_channels
        base = self.spec.base_width
        emb_width = base * 4
        channels = [base] + [base * m for m in self.spec.channel_multipliers]

        self.sigma_mlp = nn.Sequential(
            nn.Linear(base, emb_width), nn.SiLU(), nn.Linear(emb_width, emb_width))
        self.frame_proj = nn.Linear(self.spec.cond_width, base)
        self.summary_proj = nn.Linear(self.spec.cond_width, emb_width)

        self.stem = nn.Conv2d(latent_channels, base, 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.down_samples = nn.ModuleList()
        for i in range(self.spec.depth):
            self.down_blocks.append(ResBlock(channels[i], channels[i + 1], emb_width))
            self.down_samples.append(nn.Conv2d(channels[i + 1], channels[i + 1], 3, stride=2, padding=1))
        c_mid = channels[-1]
        self.down_temporal = TemporalAttention(c_mid)
        self.mid_block1 = ResBlock(c_mid, c_mid, emb_width)
        self.mid_temporal = TemporalAttention(c_mid)
        self.mid_block2 = ResBlock(c_mid, c_mid, emb_width)

        self.up_blocks = nn.ModuleList()
        self.up_convs = nn.ModuleList()
        for i in reversed(range(self.spec.depth)):
            self.up_convs.append(nn.Conv2d(channels[i + 1], channels[i + 1], 3, padding=1))
            self.up_blocks.append(ResBlock(2 * channels[i + 1], channels[i], emb_width))
        self.head_norm = nn.GroupNorm(math.gcd(8, base), base)
        self.head = nn.Conv2d(base, latent_channels, 3, padding=1)

    def frame_embeddings(self, t: int, dtype=torch.float32) -> torch.Tensor:
        """(T, cond_width) sinusoidal frame-position codes."""
        return sinusoidal_embedding(torch.arange(t, dtype=dtype), self.spec.cond_width)

    def image_summary(self, video: torch.Tensor) -> torch.Tensor:
        """(B, cond_width) tiled spatial mean of the first frame's latent."""
        pooled = video[:, 0].mean(dim=(2, 3))
        reps = -(-self.spec.cond_width // pooled.shape[1])
        return pooled.repeat(1, reps)[:, : self.spec.cond_width]

    def _inner(self, x: torch.Tensor, sigma: torch.Tensor, frame_emb, summary,
               taps: dict | None) -> torch.Tensor:
        b, t, c, h, w = x.shape
        log_sigma = torch.log(sigma).reshape(b)
        emb = self.sigma_mlp(sinusoidal_embedding(log_sigma / 4.0, self.spec.base_width))
        if summary is not None:
            emb = emb + self.summary_proj(summary)
        emb = emb.repeat_interleave(t, dim=0)  # (B*T, emb_width)

        flat = x.reshape(b * t, c, h, w)
        feat = self.stem(flat)
        if frame_emb is not None:
            if frame_emb.dim() == 2:
                frame_emb = frame_emb.unsqueeze(0).expand(b, -1, -1)
            bias = self.frame_proj(frame_emb).reshape(b * t, -1)
            feat = feat + bias[:, :, None, None]

        skips = []
        for block, down in zip(self.down_blocks, self.down_samples):
            feat = block(feat, emb)
            skips.append(feat)
            feat = down(feat)
        feat = self.down_temporal(feat.reshape(b, t, *feat.shape[1:])).reshape(b * t, *feat.shape[1:])
        if taps is not None:
            taps["pre_mid"] = feat.reshape(b, t, *feat.shape[1:])
        feat = self.mid_block1(feat, emb)
        feat = self.mid_temporal(feat.reshape(b, t, *feat.shape[1:])).reshape(b * t, *feat.shape[1:])
        feat = self.mid_block2(feat, emb)
        if taps is not None:
            taps["post_mid"] = feat.reshape(b, t, *feat.shape[1:])
        for up_conv, block, skip in zip(self.up_convs, self.up_blocks, reversed(skips)):
            feat = nn.functional.interpolate(feat, scale_factor=2, mode="nearest")
            feat = up_conv(feat)
            feat = block(torch.cat([feat, skip], dim=1), emb)
        out = self.head(nn.functional.silu(self.head_norm(feat)))
        return out.reshape(b, t, c, h, w)

    def forward(self, video: torch.Tensor, sigma, frame_emb=None, summary=None,
                taps: dict | None = None) -> torch.Tensor:
        """Denoised clip estimate D(video, sigma, cond), same shape as video.

        `sigma` is a positive scalar or a (B,) tensor. When `taps` is a dict it
        is filled with the pre_mid/post_mid hidden activations of this pass,
        each shaped (B, T, C_h, H_d, W_d).
        """
        b = video.shape[0]
        sigma = torch.as_tensor(sigma, dtype=video.dtype, device=video.device)
        if sigma.dim() == 0:
            sigma = sigma.expand(b)
        s = sigma.reshape(b, 1, 1, 1, 1)
        sd2 = SIGMA_DATA ** 2
        c_skip = sd2 / (s * s + sd2)
        c_out = s * SIGMA_DATA / torch.sqrt(s * s + sd2)
        c_in = 1.0 / torch.sqrt(s * s + sd2)
        if frame_emb is None:
            frame_emb = self.frame_embeddings(video.shape[1], dtype=video.dtype)
        if summary is None:
            summary = self.image_summary(video)
        inner = self._inner(c_in * video, sigma, frame_emb, summary, taps)
        return c_skip * video + c_out * inner
