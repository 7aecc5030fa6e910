"""Latent image codec: a deterministic 8x-downsampling convolutional autoencoder.

Maps (3, H, W) images in [0,1] to (C_lat, H/8, W/8) latents. There is no
sampled posterior; the encoder is a plain deterministic embedding, which is
all the downstream pipeline relies on. The decoder exists only to give the
codec a reconstruction pretraining objective.
"""

from __future__ import annotations

import torch
from torch import nn

LATENT_CHANNELS = 4
DOWN_FACTOR = 8


class LatentCodec(nn.Module):
    """3-stage strided conv encoder with a mirrored upsampling decoder.

    Latents pass through tanh so their scale is bounded and comparable to the
    unit noise levels the denoiser is conditioned on.
    """

    def __init__(self, width: int = 16, latent_channels: int = LATENT_CHANNELS):
        super().__init__()
        self.latent_channels = latent_channels
        w = width
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, latent_channels, 3, padding=1), nn.Tanh(),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w, 3, 3, padding=1), nn.Sigmoid(),
        )

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) in [0,1] -> (B, C_lat, H/8, W/8)."""
        return self.encoder(images)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decoder(latents)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(images))
