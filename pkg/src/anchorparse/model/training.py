"""Optimizer, learning-rate schedule and the single training step."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from ..grammar import encode_prompt
from ..preprocess import PageImage
from ..types import Prompt
from .network import Model, image_tensor


class NonFiniteLoss(FloatingPointError):
    def __init__(self, loss: float, batch_id=None, detail: str = ""):
        super().__init__(f"non-finite loss {loss} (batch {batch_id}) {detail}".strip())
        self.loss = loss
        self.batch_id = batch_id


@dataclass
class TrainExample:
    image: PageImage
    prompt: Prompt
    target: list[int]  # answer token ids, no BOS/EOS


def cosine_lr(step: int, total: int, peak: float, warmup: int = 0, floor: float = 0.0) -> float:
    if warmup and step < warmup:
        return peak * (step + 1) / warmup
    if total <= warmup:
        return peak
    progress = min(1.0, (step - warmup) / max(1, total - warmup))
    return floor + 0.5 * (peak - floor) * (1 + math.cos(math.pi * progress))


class Trainer:
    """AdamW (decoupled weight decay) with warmup + cosine decay, one step per batch."""

    def __init__(self, model: Model, total_steps: int, peak_lr: float = 1e-3, weight_decay: float = 0.01,
                 warmup: int = 0, min_lr: float = 0.0, grad_clip: Optional[float] = 1.0):
        self.model = model
        self.total_steps = total_steps
        self.peak_lr = peak_lr
        self.warmup = warmup
        self.min_lr = min_lr
        self.grad_clip = grad_clip
        decay, no_decay = [], []
        for name, p in model.net.named_parameters():
            (no_decay if p.ndim < 2 or "pos" in name or "rel_bias" in name else decay).append(p)
        self.opt = torch.optim.AdamW([{"params": decay, "weight_decay": weight_decay},
                                      {"params": no_decay, "weight_decay": 0.0}], lr=peak_lr)
        self.step_no = 0

    def current_lr(self) -> float:
        return cosine_lr(self.step_no, self.total_steps, self.peak_lr, self.warmup, self.min_lr)

    def train_step(self, batch: Sequence[TrainExample], lr: Optional[float] = None, batch_id=None) -> float:
        m = self.model
        m.net.train()
        lr = self.current_lr() if lr is None else lr
        for g in self.opt.param_groups:
            g["lr"] = lr
        images = image_tensor([ex.image for ex in batch], m.cfg.frame_size, m.dtype)
        prefixes = [encode_prompt(m.vocab, ex.prompt) for ex in batch]
        loss, _ = m.loss(images, prefixes, [ex.target for ex in batch])
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(value, batch_id, f"at step {self.step_no}, lr {lr:.3g}")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        if self.grad_clip:
            torch.nn.utils.clip_grad_norm_(m.net.parameters(), self.grad_clip)
        self.opt.step()
        self.step_no += 1
        return value


def train_step(trainer: Trainer, batch: Sequence[TrainExample], lr: Optional[float] = None) -> float:
    return trainer.train_step(batch, lr)
