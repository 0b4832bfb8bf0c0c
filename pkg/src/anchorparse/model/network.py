"""Encoder-decoder generator: image features, greedy decoding and the masked training loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..grammar import BOS_ID, EOS_ID, PAD_ID, TokenSequence, Vocabulary, encode_prompt
from ..preprocess import PageImage
from ..types import Prompt
from .config import ModelConfig
from .decoder import NEG_INF, TextDecoder
from .encoder import WindowEncoder

IGNORE = -100


class ShapeMismatch(ValueError):
    pass


@dataclass
class VisualFeatures:
    """Encoder output for one image, stored token-major as [N, d]."""

    tokens: torch.Tensor

    @property
    def matrix(self) -> torch.Tensor:
        """d x N view."""
        return self.tokens.t()

    @property
    def shape(self) -> tuple[int, int]:
        n, d = self.tokens.shape
        return d, n


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = WindowEncoder(cfg)
        self.decoder = TextDecoder(cfg)

    def forward(self, images: torch.Tensor, input_ids: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(images)
        return self.decoder(input_ids, self.decoder.memory(feats))[0]


def image_tensor(images: Sequence[PageImage], frame_size: int, dtype=torch.float32) -> torch.Tensor:
    """Stack images as ink-density tensors [B, F, F] (white 0, black 1)."""
    arr = np.empty((len(images), frame_size, frame_size), dtype=np.uint8)
    for i, im in enumerate(images):
        if im.width != frame_size or im.height != frame_size:
            raise ShapeMismatch(f"expected {frame_size}x{frame_size} image, got {im.width}x{im.height}")
        arr[i] = im.gray()
    return (255.0 - torch.from_numpy(arr).to(dtype)) / 255.0


def build_sequences(prefixes: Sequence[Sequence[int]], targets: Sequence[Sequence[int]]
                    ) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forcing inputs and labels; only target tokens and the closing EOS are scored."""
    rows, labels = [], []
    for pre, tgt in zip(prefixes, targets):
        seq = list(pre) + list(tgt) + [EOS_ID]
        lab = [IGNORE] * (len(pre) - 1) + list(tgt) + [EOS_ID]
        rows.append(seq[:-1])
        labels.append(lab)
    T = max(len(r) for r in rows)
    ids = torch.full((len(rows), T), PAD_ID, dtype=torch.long)
    lab = torch.full((len(rows), T), IGNORE, dtype=torch.long)
    for i, (r, l) in enumerate(zip(rows, labels)):
        ids[i, : len(r)] = torch.tensor(r)
        lab[i, : len(l)] = torch.tensor(l)
    return ids, lab


def masked_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE)


class Model:
    """A network plus its vocabulary: the unit that is checkpointed and served."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, net: Optional[Seq2Seq] = None):
        if cfg.vocab_size != len(vocab):
            raise ValueError(f"config vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}")
        self.cfg = cfg
        self.vocab = vocab
        if net is None:
            torch.manual_seed(cfg.seed)
            net = Seq2Seq(cfg)
        self.net = net

    @property
    def dtype(self):
        return next(self.net.parameters()).dtype

    # ------------------------------------------------------------ inference

    @torch.no_grad()
    def encode_batch(self, images: Sequence[PageImage]) -> list[VisualFeatures]:
        self.net.eval()
        x = image_tensor(images, self.cfg.frame_size, self.dtype)
        feats = self.net.encoder(x)
        if not torch.isfinite(feats).all():
            raise FloatingPointError("non-finite encoder features")
        return [VisualFeatures(f) for f in feats]

    def encode(self, img: PageImage) -> VisualFeatures:
        return self.encode_batch([img])[0]

    def generate(self, prompt: Prompt, z: VisualFeatures, max_len: int) -> TokenSequence:
        return self.generate_batch([(prompt, z)], max_len)[0]

    @torch.no_grad()
    def generate_batch(self, items: Sequence[tuple[Union[Prompt, Sequence[int]], VisualFeatures]],
                       max_len: int) -> list[TokenSequence]:
        """Greedy decoding of all items together, one decoder call per step.

        Prompts are left-padded; padded keys are masked so each row sees only its own prefix.
        """
        if not items:
            raise ValueError("generate_batch needs at least one item")
        self.net.eval()
        dec = self.net.decoder
        prefixes = [encode_prompt(self.vocab, p) if isinstance(p, Prompt) else list(p) for p, _ in items]
        B = len(items)
        P = max(len(p) for p in prefixes)
        if P >= self.cfg.max_seq_len:
            raise ValueError("prompt longer than max_seq_len")
        ids = torch.full((B, P), PAD_ID, dtype=torch.long)
        valid = torch.zeros((B, P), dtype=torch.bool)
        for i, p in enumerate(prefixes):
            ids[i, P - len(p):] = torch.tensor(p)
            valid[i, P - len(p):] = True
        positions = (valid.long().cumsum(1) - 1).clamp(min=0)
        limits = [min(max_len, self.cfg.max_seq_len - len(p)) for p in prefixes]

        dtype = self.dtype
        causal = torch.ones(P, P, dtype=torch.bool).tril()
        allowed = causal[None] & (valid[:, None, :] | torch.eye(P, dtype=torch.bool)[None])
        mask = torch.zeros(B, 1, P, P, dtype=dtype).masked_fill(~allowed[:, None], NEG_INF)
        mem = dec.memory(torch.stack([z.tokens for _, z in items]).to(dtype))
        logits, past = dec(ids, mem, positions, mask)
        nxt = logits[:, -1].argmax(-1)

        out: list[list[int]] = [[] for _ in range(B)]
        active = list(range(B))  # original row of each batch row still being decoded
        done = [False] * B
        pos = positions[:, -1:].clone()
        keys_valid = valid
        for step in range(max(limits)):
            keep = []
            for r, i in enumerate(active):
                if not done[i]:
                    t = int(nxt[r])
                    out[i].append(t)
                    done[i] = t == EOS_ID or len(out[i]) >= limits[i]
                if not done[i]:
                    keep.append(r)
            if not keep:
                break
            if len(keep) < len(active):
                # finished rows leave the batch so later steps only pay for live ones
                sel = torch.tensor(keep)
                active = [active[r] for r in keep]
                mem = [(k.index_select(0, sel), v.index_select(0, sel)) for k, v in mem]
                past = [(k.index_select(0, sel), v.index_select(0, sel)) for k, v in past]
                pos, keys_valid = pos.index_select(0, sel), keys_valid.index_select(0, sel)
            n = len(active)
            tok = torch.tensor([PAD_ID if done[i] else out[i][-1] for i in active]).view(n, 1)
            pos = (pos + 1).clamp(max=self.cfg.max_seq_len - 1)
            keys_valid = torch.cat([keys_valid, torch.ones(n, 1, dtype=torch.bool)], dim=1)
            step_mask = torch.zeros(n, 1, 1, keys_valid.shape[1], dtype=dtype)
            step_mask.masked_fill_(~keys_valid[:, None, None, :], NEG_INF)
            logits, past = dec(tok, mem, pos, step_mask, past)
            nxt = logits[:, -1].argmax(-1)

        return [TokenSequence([BOS_ID] + o, truncated=not (o and o[-1] == EOS_ID)) for o in out]

    # ------------------------------------------------------------ training

    def loss(self, images: torch.Tensor, prefixes, targets) -> tuple[torch.Tensor, int]:
        ids, labels = build_sequences(prefixes, targets)
        if ids.shape[1] > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_seq_len {self.cfg.max_seq_len}")
        logits = self.net(images, ids)
        return masked_cross_entropy(logits, labels), int((labels != IGNORE).sum())

    def n_params(self) -> int:
        return sum(p.numel() for p in self.net.parameters())
