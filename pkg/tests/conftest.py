"""Shared fixtures: tiny model variants sized for fast CPU tests."""

import numpy as np
import pytest
import torch

from dynafuse.codec import LatentCodec
from dynafuse.denoiser import DenoiserSpec, VideoDenoiser
from dynafuse.generative import NoiseSchedule
from dynafuse.model import ModelConfig, WorldModelQA
from dynafuse.semantic import SemanticEncoder


TINY_DENOISER = DenoiserSpec(base_width=8, depth=1, channel_multipliers=(2,),
                             tap="pre_mid")


def tiny_model_config(variant: str = "text_aligned", source: str = "denoiser",
                      t_frames: int = 4, tap: str = "pre_mid") -> ModelConfig:
    return ModelConfig(
        variant=variant,
        dynamic_source=source,
        t_frames=t_frames,
        tap=tap,
        schedule=NoiseSchedule(),
        semantic_width=16,
        decoder_width=32,
        decoder_depth=2,
        decoder_heads=2,
        projector_hidden=32,
        denoiser_spec=DenoiserSpec(base_width=8, depth=1,
                                   channel_multipliers=(2,), tap=tap),
    )


def build_tiny(variant: str = "text_aligned", source: str = "denoiser",
               t_frames: int = 4, tap: str = "pre_mid", seed: int = 0) -> WorldModelQA:
    torch.manual_seed(seed)
    return WorldModelQA(tiny_model_config(variant, source, t_frames, tap))


@pytest.fixture
def tiny_model():
    return build_tiny()


@pytest.fixture
def tiny_codec():
    torch.manual_seed(0)
    return LatentCodec(width=8)


@pytest.fixture
def tiny_denoiser():
    torch.manual_seed(0)
    return VideoDenoiser(TINY_DENOISER)


@pytest.fixture
def tiny_semantic():
    torch.manual_seed(0)
    return SemanticEncoder(width=16, patch_size=8, depth=1, heads=2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
