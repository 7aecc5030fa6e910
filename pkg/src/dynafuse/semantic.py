"""Static semantic patch encoder and its two toy pretraining recipes.

One tower is a patch embedding followed by two self-attention blocks. The
text_aligned recipe trains it contrastively against scene captions; the
self_supervised recipe trains augmentation invariance with no captions. The
`combined` variant channel-concatenates both towers' grids; `none` yields an
empty grid so the decoder sees dynamic tokens only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InvalidArgumentError
from .vocab import VOCAB_SIZE

VARIANTS = ("text_aligned", "self_supervised", "combined", "none")


@dataclass
class EncoderVariant:
    kind: str = "text_aligned"

    def validate(self) -> None:
        if self.kind not in VARIANTS:
            raise ConfigurationError(
                f"variant must be one of {VARIANTS}, got {self.kind!r}",
                key_path="semantic.variant")


@dataclass
class PatchGrid:
    data: torch.Tensor  # (N, C_s)
    patch_size: int
    grid: tuple[int, int]

    def validate(self) -> None:
        rows, cols = self.grid
        if self.data.shape[0] != rows * cols:
            raise InvalidArgumentError(
                f"grid {self.grid} does not match {self.data.shape[0]} rows")


class AttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class SemanticEncoder(nn.Module):
    """Patch embedding + 2 attention blocks; global receptive field."""

    def __init__(self, width: int = 64, patch_size: int = 8, depth: int = 2,
                 heads: int = 4, image_size: int = 64):
        super().__init__()
        self.width = width
        self.patch_size = patch_size
        self.pos_grid = image_size // patch_size
        self.patch_embed = nn.Conv2d(3, width, patch_size, stride=patch_size)
        self.pos = nn.Parameter(torch.zeros(1, self.pos_grid ** 2, width))
        nn.init.normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(AttentionBlock(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)

    def _pos_for(self, gh: int, gw: int) -> torch.Tensor:
        if (gh, gw) == (self.pos_grid, self.pos_grid):
            return self.pos
        # off-size inputs reuse the learned table via bilinear resampling
        grid = self.pos.reshape(1, self.pos_grid, self.pos_grid, self.width)
        grid = nn.functional.interpolate(grid.permute(0, 3, 1, 2), size=(gh, gw),
                                         mode="bilinear", align_corners=False)
        return grid.permute(0, 2, 3, 1).reshape(1, gh * gw, self.width)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, N, width) patch grid."""
        if images.shape[-1] % self.patch_size or images.shape[-2] % self.patch_size:
            raise InvalidArgumentError(
                f"image size {tuple(images.shape[-2:])} not divisible by patch {self.patch_size}")
        x = self.patch_embed(images)
        b, c, gh, gw = x.shape
        x = x.reshape(b, c, gh * gw).transpose(1, 2)
        x = x + self._pos_for(gh, gw)
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


def select_semantic_input(images: list):
    """The semantic tower always encodes the first image, whatever K is."""
    if not images:
        raise InvalidArgumentError("empty image list")
    return images[0]


def _to_batch(image) -> torch.Tensor:
    arr = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    return arr.permute(2, 0, 1).unsqueeze(0)


def encode_semantic(towers: dict[str, SemanticEncoder], image,
                    variant: EncoderVariant) -> PatchGrid:
    """Run the selected tower(s) on one (H, W, 3) image."""
    variant.validate()
    if variant.kind == "none":
        width = next(iter(towers.values())).width if towers else 64
        return PatchGrid(data=torch.zeros(0, width), patch_size=8, grid=(0, 0))
    x = _to_batch(image)
    with torch.no_grad():
        if variant.kind == "combined":
            parts = [towers["text_aligned"](x)[0], towers["self_supervised"](x)[0]]
            data = torch.cat(parts, dim=1)
            patch = towers["text_aligned"].patch_size
        else:
            tower = towers[variant.kind]
            data = tower(x)[0]
            patch = tower.patch_size
    side = int(round(float(np.sqrt(data.shape[0]))))
    return PatchGrid(data=data, patch_size=patch, grid=(side, side))


class CaptionTower(nn.Module):
    """Bag-of-words caption embedding head used only during contrastive pretraining."""

    def __init__(self, width: int, vocab_size: int = VOCAB_SIZE):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, width)
        self.proj = nn.Linear(width, width)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.proj(self.embed(ids).mean(dim=1))


@dataclass
class PretrainResult:
    encoder: SemanticEncoder
    text_tower: CaptionTower | None
    history: dict


def _pooled(encoder: SemanticEncoder, images: torch.Tensor) -> torch.Tensor:
    return encoder(images).mean(dim=1)


def _info_nce(a: torch.Tensor, b: torch.Tensor, temperature: float = 0.07) -> torch.Tensor:
    a = nn.functional.normalize(a, dim=1)
    b = nn.functional.normalize(b, dim=1)
    logits = a @ b.t() / temperature
    labels = torch.arange(a.shape[0])
    return 0.5 * (nn.functional.cross_entropy(logits, labels)
                  + nn.functional.cross_entropy(logits.t(), labels))


def _stack_images(samples) -> torch.Tensor:
    return torch.stack([torch.as_tensor(s.images[0]).permute(2, 0, 1) for s in samples])


def pretrain_text_aligned(samples, steps: int, seed: int = 0, batch_size: int = 32,
                          width: int = 64, lr: float = 3e-4) -> PretrainResult:
    """Contrastive image-caption pretraining on captioned synthetic scenes.

    `samples` carry one image each and caption token ids in `answer_ids`.
    Batches whose captions are all identical give a degenerate contrastive
    target and are skipped with a warning.
    """
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    torch.manual_seed(seed)
    encoder = SemanticEncoder(width=width)
    text_tower = CaptionTower(width)
    images = _stack_images(samples)
    captions = torch.tensor([s.answer_ids for s in samples])
    n_held = max(4, len(samples) // 10)
    held_img, held_cap = images[:n_held], captions[:n_held]
    train_img, train_cap = images[n_held:], captions[n_held:]
    opt = torch.optim.Adam(list(encoder.parameters()) + list(text_tower.parameters()), lr=lr)
    rng = np.random.default_rng(seed)

    def held_loss() -> float:
        with torch.no_grad():
            return float(_info_nce(_pooled(encoder, held_img), text_tower(held_cap)))

    initial = held_loss()
    for _ in range(steps):
        idx = rng.choice(len(train_img), size=min(batch_size, len(train_img)), replace=False)
        cap = train_cap[idx]
        if (cap == cap[0]).all():
            warnings.warn("skipping degenerate batch: all captions identical")
            continue
        loss = _info_nce(_pooled(encoder, train_img[idx]), text_tower(cap))
        opt.zero_grad()
        loss.backward()
        opt.step()
    history = {"held_out_initial": initial, "held_out_final": held_loss()}
    return PretrainResult(encoder=encoder, text_tower=text_tower, history=history)


def _augment(images: torch.Tensor, strength: float, rng: np.random.Generator) -> torch.Tensor:
    """Cyclic shift plus brightness jitter, scaled by `strength`."""
    max_shift = max(1, int(round(4 * strength)))
    out = []
    for img in images:
        dy = int(rng.integers(-max_shift, max_shift + 1))
        dx = int(rng.integers(-max_shift, max_shift + 1))
        shifted = torch.roll(img, shifts=(dy, dx), dims=(1, 2))
        gain = 1.0 + strength * 0.2 * float(rng.uniform(-1, 1))
        out.append((shifted * gain).clamp(0, 1))
    return torch.stack(out)


def pretrain_self_supervised(samples, steps: int, seed: int = 0, batch_size: int = 32,
                             width: int = 64, lr: float = 3e-4,
                             aug_strength: float = 1.0) -> PretrainResult:
    """Augmentation-invariance pretraining: two views of one scene attract."""
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    if aug_strength <= 0:
        raise ConfigurationError("aug_strength must be positive; zero makes the "
                                 "invariance objective trivial")
    torch.manual_seed(seed + 1)
    encoder = SemanticEncoder(width=width)
    images = _stack_images(samples)
    n_held = max(4, len(samples) // 10)
    held, train = images[:n_held], images[n_held:]
    opt = torch.optim.Adam(encoder.parameters(), lr=lr)
    rng = np.random.default_rng(seed)

    def held_loss() -> float:
        eval_rng = np.random.default_rng(seed + 2)
        with torch.no_grad():
            return float(_info_nce(_pooled(encoder, _augment(held, aug_strength, eval_rng)),
                                   _pooled(encoder, _augment(held, aug_strength, eval_rng))))

    initial = held_loss()
    for _ in range(steps):
        idx = rng.choice(len(train), size=min(batch_size, len(train)), replace=False)
        batch = train[idx]
        loss = _info_nce(_pooled(encoder, _augment(batch, aug_strength, rng)),
                         _pooled(encoder, _augment(batch, aug_strength, rng)))
        opt.zero_grad()
        loss.backward()
        opt.step()
    history = {"held_out_initial": initial, "held_out_final": held_loss()}
    return PretrainResult(encoder=encoder, text_tower=None, history=history)
