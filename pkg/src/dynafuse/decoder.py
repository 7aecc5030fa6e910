"""Causal answer decoder: a small autoregressive transformer over
[visual tokens; prompt tokens] with cross-entropy on the answer span only.

Token streams follow a fixed layout: <bos> question <ans> answer <end>. Only
the positions that predict answer tokens (including <end>) contribute to the
loss; visual and question positions are context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import InvalidArgumentError, InvalidSampleError
from .projectors import TokenSequence
from .vocab import ANS_ID, BOS_ID, END_ID, PAD_ID, VOCAB_SIZE


def sinusoidal_positions(length: int, width: int) -> torch.Tensor:
    """(length, width) fixed sin/cos position codes (sin even, cos odd lanes)."""
    pos = torch.arange(length, dtype=torch.float32)[:, None]
    freq = torch.exp(torch.arange(0, width, 2, dtype=torch.float32)
                     * (-math.log(10000.0) / width))
    table = torch.zeros(length, width)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: width // 2])
    return table


@dataclass
class PromptTokens:
    ids: list[int]
    answer_ids: list[int] = field(default_factory=list)
    vocab_size: int = VOCAB_SIZE

    def validate(self) -> None:
        if any(i < 0 or i >= self.vocab_size for i in self.ids + self.answer_ids):
            raise InvalidArgumentError("token id outside vocabulary")


def token_stream(prompt: PromptTokens) -> tuple[list[int], slice]:
    """Full id stream and the slice of answer positions (answer plus <end>)."""
    ids = [BOS_ID] + list(prompt.ids) + [ANS_ID] + list(prompt.answer_ids) + [END_ID]
    start = 2 + len(prompt.ids)
    return ids, slice(start, start + len(prompt.answer_ids) + 1)


class DecoderBlock(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, h, attn_mask=attn_mask, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class AnswerDecoder(nn.Module):
    """4-block causal transformer with learned positions over the full sequence.

    Positions are learnable but start from the sinusoidal table rather than
    near-zero noise: visual tokens then carry a distinctive, comparable
    position code from step 0, which is what the spatial questions have to
    read, instead of waiting for a coordinate system to self-organize.

    The output head is tied to the token embedding. Besides the usual sample
    efficiency at small scale, tying keeps every vocabulary word reachable at
    decode time: an untied head row for a word that never appears as a target
    only ever receives softmax suppression, which would strand the words that
    occur in questions but not in training answers.
    """

    def __init__(self, vocab_size: int = VOCAB_SIZE, width: int = 128,
                 depth: int = 4, heads: int = 4, max_len: int = 320):
        super().__init__()
        self.width = width
        self.max_len = max_len
        self.token_embed = nn.Embedding(vocab_size, width)
        # 0.02-std embeddings keep tied logits near zero at init; the position
        # table starts from the sinusoidal code at the same scale.
        nn.init.normal_(self.token_embed.weight, std=0.02)
        self.pos = nn.Parameter(sinusoidal_positions(max_len, width)[None] * 0.02)
        self.blocks = nn.ModuleList(DecoderBlock(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, vocab_size, bias=False)
        self.head.weight = self.token_embed.weight

    def forward(self, visual: torch.Tensor | None, ids: torch.Tensor) -> torch.Tensor:
        """Logits over the concatenated sequence.

        visual: (B, Lv, width) or None; ids: (B, Lt) int64.
        Returns (B, Lv + Lt, vocab).
        """
        tok = self.token_embed(ids)
        x = tok if visual is None else torch.cat([visual, tok], dim=1)
        s = x.shape[1]
        if s > self.max_len:
            raise InvalidArgumentError(f"sequence length {s} exceeds max_len {self.max_len}")
        x = x + self.pos[:, :s]
        mask = torch.full((s, s), float("-inf"), dtype=x.dtype).triu(1)
        for block in self.blocks:
            x = block(x, mask)
        return self.head(self.norm(x))


def text_loss(logits: torch.Tensor, prompt: PromptTokens, visual_len: int) -> torch.Tensor:
    """Mean cross-entropy over answer positions of one sample.

    logits cover [visual; stream]; position p predicts stream token p+1, so
    answer token j (stream index i) is scored by logits[visual_len + i - 1].
    """
    if not prompt.answer_ids:
        raise InvalidSampleError("empty answer span")
    ids, span = token_stream(prompt)
    targets = torch.tensor(ids[span], dtype=torch.long)
    rows = logits[visual_len + span.start - 1: visual_len + span.stop - 1]
    return nn.functional.cross_entropy(rows, targets)


def answer_cross_entropy(logits: torch.Tensor, ids: torch.Tensor,
                         loss_mask: torch.Tensor, visual_len: int) -> torch.Tensor:
    """Batched answer-span loss.

    ids: (B, Lt) streams; loss_mask: (B, Lt) bool marking answer positions
    (targets). The logit row for stream position i is visual_len + i - 1.
    """
    b, lt = ids.shape
    pred = logits[:, visual_len - 1: visual_len + lt - 1] if visual_len > 0 \
        else logits[:, : lt - 1]
    if visual_len == 0:
        ids = ids[:, 1:]
        loss_mask = loss_mask[:, 1:]
    flat = pred.reshape(-1, pred.shape[-1])[loss_mask.reshape(-1)]
    targets = ids.reshape(-1)[loss_mask.reshape(-1)]
    if targets.numel() == 0:
        raise InvalidSampleError("no answer positions in batch")
    return nn.functional.cross_entropy(flat, targets)


def decode(decoder: AnswerDecoder, visual: TokenSequence | None,
           prompt: PromptTokens, max_new: int = 4) -> list[int]:
    """Greedy decoding; stops at <end>, which is not returned."""
    if max_new < 1:
        raise InvalidArgumentError("max_new must be >= 1")
    prompt.validate()
    ids = [BOS_ID] + list(prompt.ids) + [ANS_ID]
    vis = None
    if visual is not None and visual.rows > 0:
        vis = visual.data.unsqueeze(0) if visual.data.dim() == 2 else visual.data
    out: list[int] = []
    with torch.no_grad():
        for _ in range(max_new):
            logits = decoder(vis, torch.tensor([ids], dtype=torch.long))
            nxt = int(logits[0, -1].argmax())
            if nxt == END_ID:
                break
            out.append(nxt)
            ids.append(nxt)
    return out


def decode_batch(decoder: AnswerDecoder, visual: torch.Tensor | None,
                 question_ids: torch.Tensor, max_new: int = 4) -> list[list[int]]:
    """Greedy decoding for a batch of equal-length questions."""
    if max_new < 1:
        raise InvalidArgumentError("max_new must be >= 1")
    b = question_ids.shape[0]
    bos = torch.full((b, 1), BOS_ID, dtype=torch.long)
    ans = torch.full((b, 1), ANS_ID, dtype=torch.long)
    ids = torch.cat([bos, question_ids, ans], dim=1)
    done = torch.zeros(b, dtype=torch.bool)
    outs: list[list[int]] = [[] for _ in range(b)]
    with torch.no_grad():
        for _ in range(max_new):
            logits = decoder(visual, ids)
            nxt = logits[:, -1].argmax(dim=-1)
            nxt = torch.where(done, torch.full_like(nxt, PAD_ID), nxt)
            for j in range(b):
                if not done[j] and int(nxt[j]) == END_ID:
                    done[j] = True
                elif not done[j]:
                    outs[j].append(int(nxt[j]))
            ids = torch.cat([ids, nxt.unsqueeze(1)], dim=1)
            if bool(done.all()):
                break
    return outs
