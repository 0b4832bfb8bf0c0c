"""Autoregressive text decoder with causal self-attention and cross-attention to image features."""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn

from .config import ModelConfig
from .encoder import Mlp, Projection

NEG_INF = float("-inf")


def _split(x: torch.Tensor, heads: int) -> torch.Tensor:
    B, T, D = x.shape
    return x.view(B, T, heads, D // heads).transpose(1, 2)


def _merge(x: torch.Tensor) -> torch.Tensor:
    B, H, T, dh = x.shape
    return x.transpose(1, 2).reshape(B, T, H * dh)


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    scores = (q * q.shape[-1] ** -0.5) @ k.transpose(-2, -1)
    if mask is not None:
        scores = scores + mask
    return scores.softmax(dim=-1) @ v


def grid_position_code(n_tokens: int, dim: int) -> torch.Tensor:
    """Fixed sine/cosine code [n_tokens, dim] for a square token grid: half the channels encode the
    row, half the column."""
    g = math.isqrt(n_tokens)
    if g * g != n_tokens or dim % 4:
        raise ValueError(f"need a square grid and dim divisible by 4, got {n_tokens} tokens, dim {dim}")
    q = dim // 4
    freq = torch.exp(-math.log(100.0) * torch.arange(q, dtype=torch.float64) / q)
    angles = torch.arange(g, dtype=torch.float64)[:, None] * freq[None]
    axis = torch.cat([angles.sin(), angles.cos()], dim=1)
    rows = axis[:, None, :].expand(g, g, dim // 2)
    cols = axis[None, :, :].expand(g, g, dim // 2)
    return torch.cat([rows, cols], dim=-1).reshape(n_tokens, dim)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = Projection(dim, 3, no_bias=(1,))
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, mask, past=None):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q, k, v = (_split(t, self.heads) for t in (q, k, v))
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        return self.proj(_merge(attend(q, k, v, mask))), (k, v)


class CrossAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = Projection(dim, 2, no_bias=(0,))
        self.proj = nn.Linear(dim, dim)

    def memory_kv(self, memory: torch.Tensor):
        k, v = self.kv(memory).chunk(2, dim=-1)
        # laid out contiguously once so each decoding step reads them without a copy
        return _split(k, self.heads).contiguous(), _split(v, self.heads).contiguous()

    def forward(self, x, kv):
        q = _split(self.q(x), self.heads)
        return self.proj(_merge(attend(q, kv[0], kv[1], None)))


class DecoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = CrossAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x, mask, mem_kv, past=None):
        h, cache = self.self_attn(self.norm1(x), mask, past)
        x = x + h
        x = x + self.cross_attn(self.norm2(x), mem_kv)
        return x + self.mlp(self.norm3(x)), cache


class TextDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.decoder_dim
        self.memory_proj = nn.Linear(cfg.feature_dim, D)
        self.memory_norm = nn.LayerNorm(D)
        self.tok_emb = nn.Embedding(cfg.vocab_size, D)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, D)
        # unit-scale rows keep the first LayerNorm away from its near-zero-variance regime
        nn.init.normal_(self.tok_emb.weight, std=D ** -0.5)
        nn.init.normal_(self.pos_emb.weight, std=D ** -0.5)
        self.blocks = nn.ModuleList(DecoderBlock(D, cfg.decoder_heads, cfg.mlp_ratio)
                                    for _ in range(cfg.decoder_layers))
        self.norm = nn.LayerNorm(D)
        # output logits reuse the unit-scale token embeddings; a half gain starts them near uniform
        nn.init.constant_(self.norm.weight, 0.5)

    def memory(self, features: torch.Tensor) -> list:
        """Per-layer cross-attention keys/values for encoder features [B, N, d]."""
        # the fixed grid code tells cross-attention where each feature sits on the page
        m = self.memory_norm(self.memory_proj(features))
        m = m + grid_position_code(m.shape[1], m.shape[2]).to(m.dtype)
        return [blk.cross_attn.memory_kv(m) for blk in self.blocks]

    def logits(self, h: torch.Tensor) -> torch.Tensor:
        return self.norm(h) @ self.tok_emb.weight.t()

    def forward(self, ids: torch.Tensor, mem_kv: list, positions: Optional[torch.Tensor] = None,
                mask: Optional[torch.Tensor] = None, past: Optional[list] = None):
        """Returns (logits [B, T, V], per-layer self-attention caches).

        Without an explicit ``mask`` a plain causal mask is used (training, right padding).
        """
        B, T = ids.shape
        if positions is None:
            positions = torch.arange(T, device=ids.device).expand(B, T)
        if mask is None:
            mask = torch.full((T, T), NEG_INF, dtype=self.tok_emb.weight.dtype).triu(1)
        x = self.tok_emb(ids) + self.pos_emb(positions)
        caches = []
        for i, blk in enumerate(self.blocks):
            x, c = blk(x, mask, mem_kv[i], None if past is None else past[i])
            caches.append(c)
        return self.logits(x), caches
