"""The assembled QA model: codec + denoiser + semantic towers + projectors +
decoder, with batched feature paths for training and evaluation.

The typed single-sample operations in `generative` and `semantic` define the
reference semantics; this module provides the equivalent batched computation
(one codec call per image batch, one denoiser call per clip batch) that the
training loop and evaluator actually run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .codec import LatentCodec
from .decoder import AnswerDecoder, decode_batch
from .denoiser import DenoiserSpec, VideoDenoiser
from .errors import ConfigurationError, InvalidArgumentError
from .generative import NoiseSchedule, keyframe_indices, to_drift
from .projectors import MlpProjector, ProjectorSpec, TokenSequence, VaeConvProjector, fuse
from .semantic import SemanticEncoder
from .tasks import TaskSample
from .vocab import ANS_ID, BOS_ID, END_ID, PAD_ID

DYNAMIC_SOURCES = ("denoiser", "vae")

PARAM_GROUPS = ("codec", "denoiser", "semantic", "projectors", "decoder")


@dataclass
class ModelConfig:
    variant: str = "text_aligned"  # semantic tower selection, or "none"
    dynamic_source: str = "denoiser"
    t_frames: int = 8
    tap: str = "pre_mid"
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    semantic_width: int = 64
    decoder_width: int = 128
    decoder_depth: int = 4
    decoder_heads: int = 4
    projector_hidden: int = 256
    denoiser_spec: DenoiserSpec = field(default_factory=DenoiserSpec)

    def validate(self) -> None:
        if self.dynamic_source not in DYNAMIC_SOURCES:
            raise ConfigurationError(
                f"dynamic_source must be one of {DYNAMIC_SOURCES}", key_path="fusion.dynamic_source")
        if self.t_frames < 1:
            raise ConfigurationError("t_frames must be >= 1", key_path="frames")
        self.denoiser_spec.validate()
        self.schedule.validate()


class WorldModelQA(nn.Module):
    """End-to-end fused model. Components are owned here so freeze policies
    and checkpoints can address them as named parameter groups."""

    def __init__(self, cfg: ModelConfig, towers: dict[str, SemanticEncoder] | None = None,
                 codec: LatentCodec | None = None, denoiser: VideoDenoiser | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.codec = codec or LatentCodec()
        self.denoiser = denoiser or VideoDenoiser(cfg.denoiser_spec)
        self.towers = nn.ModuleDict(towers or {})
        if cfg.variant in ("text_aligned", "self_supervised") and cfg.variant not in self.towers:
            self.towers[cfg.variant] = SemanticEncoder(width=cfg.semantic_width)
        if cfg.variant == "combined":
            for kind in ("text_aligned", "self_supervised"):
                if kind not in self.towers:
                    self.towers[kind] = SemanticEncoder(width=cfg.semantic_width)

        d = cfg.decoder_width
        sem_width = cfg.semantic_width * (2 if cfg.variant == "combined" else 1)
        self.semantic_projector = None
        if cfg.variant != "none":
            self.semantic_projector = MlpProjector(ProjectorSpec(
                "semantic_mlp", sem_width, d, cfg.projector_hidden))
        if cfg.dynamic_source == "denoiser":
            self.dynamic_projector = MlpProjector(ProjectorSpec(
                "dynamic_mlp", self.denoiser.spec.hidden_channels, d, cfg.projector_hidden))
        else:
            self.dynamic_projector = VaeConvProjector(ProjectorSpec(
                "vae_conv_mlp", self.codec.latent_channels, d, cfg.projector_hidden))
        self.decoder = AnswerDecoder(width=d, depth=cfg.decoder_depth, heads=cfg.decoder_heads)

    # --- parameter bookkeeping ------------------------------------------

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list[tuple[str, nn.Parameter]]] = {g: [] for g in PARAM_GROUPS}
        for name, p in self.named_parameters():
            groups[self._group_of(name)].append((name, p))
        return groups

    @staticmethod
    def _group_of(param_name: str) -> str:
        head = param_name.split(".", 1)[0]
        return {"codec": "codec", "denoiser": "denoiser", "towers": "semantic",
                "semantic_projector": "projectors", "dynamic_projector": "projectors",
                "decoder": "decoder"}[head]

    # --- batched visual feature paths ------------------------------------

    def images_to_clips(self, samples: list[TaskSample]) -> torch.Tensor:
        """Stack samples' frames as (B, K, 3, H, W), subsampling evenly when a
        sample has more frames than the model's T."""
        ks = []
        for s in samples:
            ks.append(min(len(s.images), self.cfg.t_frames))
        if len(set(ks)) != 1:
            raise InvalidArgumentError("batch mixes different effective frame counts")
        k = ks[0]
        dtype = next(self.codec.parameters()).dtype
        clips = []
        for s in samples:
            if len(s.images) > k:
                pick = keyframe_indices(k, len(s.images))
                frames = [s.images[i] for i in pick]
            else:
                frames = s.images
            arr = np.stack(frames).astype(np.float32)
            clips.append(torch.as_tensor(arr).permute(0, 3, 1, 2))
        return torch.stack(clips).to(dtype)

    def assemble_batch(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, K, C, h, w) latents -> (B, T, C, h, w) keyframe-slotted clips."""
        b, k, c, h, w = latents.shape
        t = self.cfg.t_frames
        video = latents[:, 0:1].expand(b, t, c, h, w).clone()
        for j, idx in enumerate(keyframe_indices(k, t)):
            video[:, idx] = latents[:, j]
        return video

    def dynamic_features(self, clips: torch.Tensor) -> torch.Tensor:
        """(B, K, 3, H, W) -> dynamic token features.

        denoiser source: (B, M, C_h) flattened hidden features of the second
        pass on Z1. vae source: (B, T, C_lat, h, w) raw latent clips (the conv
        projector consumes the video directly).
        """
        b, k = clips.shape[0], clips.shape[1]
        flat = clips.reshape(b * k, *clips.shape[2:])
        z = self.codec.encode(flat).reshape(b, k, self.codec.latent_channels,
                                            clips.shape[-2] // 8, clips.shape[-1] // 8)
        z0 = self.assemble_batch(z)
        if self.cfg.dynamic_source == "vae":
            return z0
        sched = self.cfg.schedule
        frame_emb = self.denoiser.frame_embeddings(z0.shape[1], dtype=z0.dtype)
        summary = self.denoiser.image_summary(z0)
        d = self.denoiser(z0, sched.sigma0, frame_emb=frame_emb, summary=summary)
        z1 = z0 + sched.dsigma * to_drift(z0, sched.sigma0, d)
        taps: dict = {}
        self.denoiser(z1, sched.sigma_feature, frame_emb=frame_emb, summary=summary, taps=taps)
        hidden = taps[self.cfg.tap]  # (B, T, C_h, H_d, W_d)
        bt, t, ch, hd, wd = hidden.shape
        return hidden.permute(0, 1, 3, 4, 2).reshape(bt, t * hd * wd, ch)

    def semantic_features(self, clips: torch.Tensor) -> torch.Tensor | None:
        """First-frame patch grids, (B, N, C_s); None for variant `none`."""
        if self.cfg.variant == "none":
            return None
        first = clips[:, 0]
        if self.cfg.variant == "combined":
            return torch.cat([self.towers["text_aligned"](first),
                              self.towers["self_supervised"](first)], dim=-1)
        return self.towers[self.cfg.variant](first)

    def visual_tokens(self, sem: torch.Tensor | None, dyn: torch.Tensor) -> torch.Tensor:
        """Project cached features into decoder space and fuse semantic-first."""
        vd = self.dynamic_projector(dyn)
        if sem is None:
            return vd
        vs = self.semantic_projector(sem)
        return fuse(TokenSequence(vs, "semantic"), TokenSequence(vd, "dynamic")).data

    def forward(self, clips: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        """Full differentiable path: images + token streams -> logits."""
        visual = self.visual_tokens(self.semantic_features(clips), self.dynamic_features(clips))
        return self.decoder(visual, ids)


def collate_streams(samples: list[TaskSample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Token streams (B, Lt) and the answer-position loss mask.

    Stream layout per sample: <bos> question <ans> answer <end>, right-padded.
    """
    streams, spans = [], []
    for s in samples:
        ids = [BOS_ID] + list(s.question_ids) + [ANS_ID] + list(s.answer_ids) + [END_ID]
        start = 2 + len(s.question_ids)
        streams.append(ids)
        spans.append((start, start + len(s.answer_ids) + 1))
    lt = max(len(ids) for ids in streams)
    batch = torch.full((len(streams), lt), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(streams), lt), dtype=torch.bool)
    for i, (ids, (a, b)) in enumerate(zip(streams, spans)):
        batch[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[i, a:b] = True
    return batch, mask


def predict(model: WorldModelQA, samples: list[TaskSample], batch_size: int = 32,
            max_new: int = 4) -> list[list[int]]:
    """Greedy predictions, batched over groups with a uniform question shape."""
    order = sorted(range(len(samples)),
                   key=lambda i: (samples[i].kind, len(samples[i].question_ids),
                                  len(samples[i].images)))
    out: list[list[int]] = [[] for _ in samples]
    model.eval()
    with torch.no_grad():
        i = 0
        while i < len(order):
            j = i
            key = (samples[order[i]].kind, len(samples[order[i]].question_ids),
                   len(samples[order[i]].images))
            while j < len(order) and j - i < batch_size and (
                    samples[order[j]].kind, len(samples[order[j]].question_ids),
                    len(samples[order[j]].images)) == key:
                j += 1
            chunk = [samples[k] for k in order[i:j]]
            clips = model.images_to_clips(chunk)
            visual = model.visual_tokens(model.semantic_features(clips),
                                         model.dynamic_features(clips))
            qids = torch.tensor([s.question_ids for s in chunk], dtype=torch.long)
            preds = decode_batch(model.decoder, visual, qids, max_new=max_new)
            for k, pred in zip(order[i:j], preds):
                out[k] = pred
            i = j
    model.train()
    return out
