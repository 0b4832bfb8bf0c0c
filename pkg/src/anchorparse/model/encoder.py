"""Hierarchical windowed-attention image encoder.

Patches are embedded linearly, then each stage runs blocks of window self-attention (alternating
plain and half-window-shifted partitions, counted across the whole encoder) followed by 2x2 patch
merging between stages.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """[B, H, W, C] -> [B * nW, ws*ws, C]"""
    B, H, W, C = x.shape
    x = x.view(B, H // ws, ws, W // ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, C)


def window_reverse(windows: torch.Tensor, ws: int, H: int, W: int) -> torch.Tensor:
    """[B * nW, ws*ws, C] -> [B, H, W, C]"""
    C = windows.shape[-1]
    B = windows.shape[0] // ((H // ws) * (W // ws))
    x = windows.view(B, H // ws, W // ws, ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)


def relative_position_index(ws: int) -> torch.Tensor:
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij")).flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (ws - 1)
    return rel[..., 0] * (2 * ws - 1) + rel[..., 1]


def shifted_window_mask(H: int, W: int, ws: int, shift: int) -> torch.Tensor:
    """Additive mask [nW, ws*ws, ws*ws] keeping attention within the pre-shift regions."""
    img = torch.zeros(1, H, W, 1)
    cnt = 0
    for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
        for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            img[:, hs, wsl, :] = cnt
            cnt += 1
    win = window_partition(img, ws).squeeze(-1)
    diff = win[:, None, :] - win[:, :, None]
    return torch.zeros_like(diff).masked_fill(diff != 0, float("-inf"))


class Projection(nn.Module):
    """Fused linear projection to ``parts`` outputs of width ``dim``; ``no_bias`` parts get no bias.

    A key bias shifts every score in a softmax row equally, so it is left out rather than carried as a
    parameter whose gradient is identically zero.
    """

    def __init__(self, dim: int, parts: int, no_bias: tuple[int, ...] = ()):
        super().__init__()
        self.dim = dim
        self.weight = nn.Parameter(torch.empty(parts * dim, dim))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        self.with_bias = [i for i in range(parts) if i not in no_bias]
        bound = dim ** -0.5
        self.bias = nn.Parameter(torch.empty(len(self.with_bias) * dim).uniform_(-bound, bound))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        parts = self.weight.shape[0] // self.dim
        chunks = list(self.bias.split(self.dim))
        full = [chunks.pop(0) if i in self.with_bias else self.bias.new_zeros(self.dim) for i in range(parts)]
        return F.linear(x, self.weight, torch.cat(full))


class WindowAttention(nn.Module):
    def __init__(self, dim: int, heads: int, ws: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = Projection(dim, 3, no_bias=(1,))
        self.proj = nn.Linear(dim, dim)
        self.rel_bias = nn.Parameter(torch.zeros((2 * ws - 1) ** 2, heads))
        nn.init.trunc_normal_(self.rel_bias, std=0.02)
        self.register_buffer("rel_index", relative_position_index(ws), persistent=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        Bw, N, C = x.shape
        qkv = self.qkv(x).view(Bw, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.rel_bias[self.rel_index.view(-1)].view(N, N, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nW = mask.shape[0]
            attn = attn.view(Bw // nW, nW, self.heads, N, N) + mask[None, :, None]
            attn = attn.view(Bw, self.heads, N, N)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(Bw, N, C)
        return self.proj(out)


class Mlp(nn.Sequential):
    def __init__(self, dim: int, ratio: int):
        super().__init__(nn.Linear(dim, dim * ratio), nn.GELU(), nn.Linear(dim * ratio, dim))


class WindowBlock(nn.Module):
    def __init__(self, dim: int, heads: int, grid: int, ws: int, shift: int, mlp_ratio: int):
        super().__init__()
        self.ws = ws
        self.shift = shift if grid > ws else 0
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, ws)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)
        if self.shift:
            self.register_buffer("mask", shifted_window_mask(grid, grid, ws, self.shift), persistent=False)
        else:
            self.mask = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, H, W, C = x.shape
        h = self.norm1(x)
        if self.shift:
            h = torch.roll(h, shifts=(-self.shift, -self.shift), dims=(1, 2))
        h = window_reverse(self.attn(window_partition(h, self.ws), self.mask), self.ws, H, W)
        if self.shift:
            h = torch.roll(h, shifts=(self.shift, self.shift), dims=(1, 2))
        x = x + h
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, H, W, C = x.shape
        x = x.view(B, H // 2, 2, W // 2, 2, C).permute(0, 1, 3, 4, 2, 5).reshape(B, H // 2, W // 2, 4 * C)
        return self.reduction(self.norm(x))


class WindowEncoder(nn.Module):
    """Image [B, frame, frame] in [0, 1] (ink = 1) -> features [B, N, d]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch_size
        grid = cfg.frame_size // p
        self.patch_embed = nn.Linear(cfg.in_chans * p * p, cfg.embed_dim)
        self.row_pos = nn.Parameter(torch.zeros(grid, cfg.embed_dim))
        self.col_pos = nn.Parameter(torch.zeros(grid, cfg.embed_dim))
        nn.init.trunc_normal_(self.row_pos, std=0.02)
        nn.init.trunc_normal_(self.col_pos, std=0.02)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        layer = 0
        for i, (depth, heads) in enumerate(zip(cfg.stage_depths, cfg.stage_heads)):
            dim = cfg.stage_dim(i)
            blocks = []
            for _ in range(depth):
                shift = cfg.window_size // 2 if layer % 2 else 0
                blocks.append(WindowBlock(dim, heads, grid, cfg.window_size, shift, cfg.mlp_ratio))
                layer += 1
            self.stages.append(nn.Sequential(*blocks))
            if i < len(cfg.stage_depths) - 1:
                self.merges.append(PatchMerging(dim))
                grid //= 2
        self.norm = nn.LayerNorm(cfg.feature_dim)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        p = cfg.patch_size
        if img.dim() == 3:
            img = img.unsqueeze(1)
        B, C, H, W = img.shape
        g = H // p
        x = img.view(B, C, g, p, g, p).permute(0, 2, 4, 1, 3, 5).reshape(B, g, g, C * p * p)
        x = self.patch_embed(x) + self.row_pos[None, :, None, :] + self.col_pos[None, None, :, :]
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.merges):
                x = self.merges[i](x)
        x = self.norm(x)
        return x.reshape(B, -1, x.shape[-1])
