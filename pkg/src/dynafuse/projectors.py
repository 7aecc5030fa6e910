"""Projectors from encoder feature spaces into decoder token space, and fusion.

Semantic and dynamic features each pass through a 3-layer GELU MLP. The raw
latent pathway (no denoiser) first runs stride-2 convolution stages over each
frame's latent grid before its MLP head, halving the spatial side per stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, InvalidArgumentError

PROJECTOR_KINDS = ("semantic_mlp", "dynamic_mlp", "vae_conv_mlp")


@dataclass
class ProjectorSpec:
    kind: str
    in_width: int
    out_width: int
    hidden_width: int = 256
    conv_stages: int = 1  # vae_conv_mlp only: stride-2 stages before the head

    def validate(self) -> None:
        if self.kind not in PROJECTOR_KINDS:
            raise ConfigurationError(
                f"projector kind must be one of {PROJECTOR_KINDS}, got {self.kind!r}")
        if min(self.in_width, self.out_width, self.hidden_width) < 1:
            raise ConfigurationError("projector widths must be positive")
        if self.kind == "vae_conv_mlp" and self.conv_stages < 1:
            raise ConfigurationError("vae_conv_mlp needs at least one conv stage")


@dataclass
class TokenSequence:
    data: torch.Tensor  # (rows, d) or (B, rows, d)
    origin: str = "semantic"  # semantic | dynamic | fused | prompt

    @property
    def rows(self) -> int:
        return self.data.shape[-2]


def _mlp(in_width: int, hidden: int, out_width: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_width, hidden), nn.GELU(),
        nn.Linear(hidden, hidden), nn.GELU(),
        nn.Linear(hidden, out_width))


class MlpProjector(nn.Module):
    """3-layer GELU MLP; rows in, rows out."""

    def __init__(self, spec: ProjectorSpec):
        super().__init__()
        spec.validate()
        if spec.kind == "vae_conv_mlp":
            raise ConfigurationError("vae_conv_mlp features need VaeConvProjector")
        self.spec = spec
        self.net = _mlp(spec.in_width, spec.hidden_width, spec.out_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.in_width:
            raise ConfigurationError(
                f"{self.spec.kind} expects width {self.spec.in_width}, got {x.shape[-1]}")
        return self.net(x)


class VaeConvProjector(nn.Module):
    """Stride-2 conv stages over per-frame latents, then the 3-layer head.

    Input (B, T, C_lat, h, w); each stage halves h and w, so the row count is
    T * (h / 2^stages) * (w / 2^stages).
    """

    def __init__(self, spec: ProjectorSpec, conv_width: int = 32):
        super().__init__()
        spec.validate()
        if spec.kind != "vae_conv_mlp":
            raise ConfigurationError(f"expected vae_conv_mlp spec, got {spec.kind}")
        self.spec = spec
        convs = []
        c = spec.in_width
        for _ in range(spec.conv_stages):
            convs += [nn.Conv2d(c, conv_width, 3, stride=2, padding=1), nn.SiLU()]
            c = conv_width
        self.convs = nn.Sequential(*convs)
        self.net = _mlp(c, spec.hidden_width, spec.out_width)

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        if video.dim() != 5 or video.shape[2] != self.spec.in_width:
            raise ConfigurationError(
                f"vae_conv_mlp expects (B, T, {self.spec.in_width}, h, w), "
                f"got {tuple(video.shape)}")
        b, t, c, h, w = video.shape
        feat = self.convs(video.reshape(b * t, c, h, w))
        c2, h2, w2 = feat.shape[1:]
        # frame-major, then row-major, matching the flattened hidden layout
        rows = feat.reshape(b, t, c2, h2 * w2).permute(0, 1, 3, 2).reshape(b, t * h2 * w2, c2)
        return self.net(rows)


def fuse(vs: TokenSequence, vd: TokenSequence) -> TokenSequence:
    """Concatenate semantic-first: V = [V_s; V_d]."""
    if vs.data.shape[-1] != vd.data.shape[-1]:
        raise InvalidArgumentError(
            f"token widths differ: {vs.data.shape[-1]} vs {vd.data.shape[-1]}")
    return TokenSequence(data=torch.cat([vs.data, vd.data], dim=-2), origin="fused")
