"""Central finite-difference verification of the backward pass, in double precision."""

from __future__ import annotations

import random
from typing import Callable, Optional

import numpy as np
import torch

from .config import ModelConfig, micro_profile
from .network import IGNORE, Seq2Seq, build_sequences, masked_cross_entropy

STEP = 1e-4


def _probe_batch(cfg: ModelConfig, seed: int, blank: bool):
    rng = random.Random(seed)
    g = torch.Generator().manual_seed(seed)
    B = 2
    if blank:
        images = torch.zeros(B, cfg.frame_size, cfg.frame_size, dtype=torch.float64)
    else:
        images = torch.rand(B, cfg.frame_size, cfg.frame_size, generator=g, dtype=torch.float64)
    # ids 4.. are ordinary tokens; keep total length within max_seq_len
    lo, hi = 4, cfg.vocab_size - 1
    prefixes, targets = [], []
    for _ in range(B):
        n_pre = rng.randint(2, 3)
        n_tgt = rng.randint(1, min(8, cfg.max_seq_len - n_pre - 1))
        prefixes.append([0] + [rng.randint(lo, hi) for _ in range(n_pre - 1)])
        targets.append([rng.randint(lo, hi) for _ in range(n_tgt)])
    ids, labels = build_sequences(prefixes, targets)
    return images, ids, labels


def finite_difference_check(cfg: ModelConfig, seed: int = 0, blank: bool = False,
                            corrupt: Optional[Callable[[str, torch.Tensor], torch.Tensor]] = None) -> float:
    """Max over all parameter entries of |a - n| / max(|a|, |n|, 1e-8).

    ``a`` is the autograd gradient of the full training loss and ``n`` the central difference with
    step 1e-4.  ``corrupt`` may rewrite the analytic gradient of a named parameter (sensitivity test).
    """
    if cfg.vocab_size < 6:
        raise ValueError("gradient check needs vocab_size >= 6")
    torch.manual_seed(seed)
    net = Seq2Seq(cfg).to(torch.float64)
    net.train()
    images, ids, labels = _probe_batch(cfg, seed, blank)

    lab = labels.numpy()
    scored = lab != IGNORE
    safe = np.where(scored, lab, 0)[..., None]

    def loss() -> float:
        # the reduction runs in extended precision: one float64 ulp of the loss divided by 2h is
        # already ~1e-12, the size of the absolute error budget at the 1e-8 floor
        z = net(images, ids).numpy().astype(np.longdouble)
        z = z - z.max(-1, keepdims=True)
        nll = np.log(np.exp(z).sum(-1)) - np.take_along_axis(z, safe, -1)[..., 0]
        return (nll * scored).sum() / scored.sum()

    net.zero_grad()
    masked_cross_entropy(net(images, ids), labels).backward()
    worst = 0.0
    with torch.no_grad():
        for name, p in net.named_parameters():
            analytic = p.grad.detach().clone()
            if corrupt is not None:
                analytic = corrupt(name, analytic)
            flat = p.view(-1)
            a_flat = analytic.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + STEP
                up = loss()
                flat[i] = orig - STEP
                down = loss()
                flat[i] = orig
                num = float((up - down) / (2 * STEP))
                a = float(a_flat[i])
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = max(worst, err)
    return worst


def random_micro_config(seed: int, vocab_size: int = 16) -> ModelConfig:
    """A small config drawn at random: one or two encoder stages, one or two decoder layers."""
    rng = random.Random(seed)
    two_stage = rng.random() < 0.5
    return micro_profile(
        vocab_size=vocab_size,
        frame_size=32,
        embed_dim=8,
        decoder_dim=8,
        stage_depths=(1, 1) if two_stage else (rng.randint(1, 2),),
        stage_heads=(2, 2) if two_stage else (rng.choice([1, 2]),),
        decoder_layers=rng.randint(1, 2),
        decoder_heads=rng.choice([1, 2]),
        max_seq_len=12,
        seed=seed,
    )
