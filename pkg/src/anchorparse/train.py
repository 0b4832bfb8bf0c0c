"""Corpus training: mixed page and element tasks, per-epoch held-out edit distance, checkpointing."""

from __future__ import annotations

import logging
import random
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import torch

from .grammar import Vocabulary, decode_tokens
from .metrics import edit_distance
from .model.checkpoint import save_checkpoint
from .model.config import PROFILES, ModelConfig
from .model.network import Model
from .model.training import Trainer, TrainExample
from .preprocess import PageImage
from .synth.corpus import load_manifest, load_page
from .synth.pages import GroundTruth
from .tasks import TaskSampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    peak_lr: float = 3e-3
    min_lr: float = 1e-5
    warmup_steps: int = 200
    weight_decay: float = 0.01
    page_samples: int = 3  # page-level task draws per page per epoch
    jitter: bool = True  # randomize element crop margins
    seed: int = 0
    eval_elements: int = 60  # held-out element crops scored after each epoch
    length_bucket: int = 8  # batches per length-sorted bucket


Page = tuple[PageImage, GroundTruth]


def epoch_examples(pages: Sequence[Page], sampler: TaskSampler, rng: random.Random, tc: TrainConfig
                   ) -> list[TrainExample]:
    """One pass: ``page_samples`` page tasks per page plus every element crop (jittered)."""
    out = []
    for page, gt in pages:
        for _ in range(tc.page_samples):
            ex = sampler.page_example(page, gt, rng)
            if ex is not None:
                out.append(ex)
        for i in range(len(gt.layout)):
            ex = sampler.element_example(page, gt, i, rng if tc.jitter else None)
            if ex is not None:
                out.append(ex)
    return out


def make_batches(examples: list[TrainExample], rng: random.Random, tc: TrainConfig) -> list[list[TrainExample]]:
    """Shuffle, then sort by target length inside buckets to cut padding, then shuffle batch order."""
    rng.shuffle(examples)
    span = tc.batch_size * tc.length_bucket
    batches = []
    for s in range(0, len(examples), span):
        bucket = sorted(examples[s:s + span], key=lambda ex: len(ex.target))
        batches += [bucket[k:k + tc.batch_size] for k in range(0, len(bucket), tc.batch_size)]
    rng.shuffle(batches)
    return batches


def heldout_ed(model: Model, pages: Sequence[Page], sampler: TaskSampler, limit: int, max_len: int = 300
               ) -> Optional[float]:
    """Mean normalized ED of element parsing on the first ``limit`` held-out element crops."""
    jobs = []
    for page, gt in pages:
        for i in range(len(gt.layout)):
            if len(jobs) >= limit:
                break
            ex = sampler.element_example(page, gt, i, None)
            if ex is not None:
                jobs.append((ex, gt.contents[i]))
    if not jobs:
        return None
    eds = []
    for s in range(0, len(jobs), 16):
        chunk = jobs[s:s + 16]
        feats = model.encode_batch([ex.image for ex, _ in chunk])
        outs = model.generate_batch([(ex.prompt, z) for (ex, _), z in zip(chunk, feats)], max_len)
        for (_, ref), out in zip(chunk, outs):
            eds.append(edit_distance(decode_tokens(model.vocab, out.ids), ref)[1])
    return sum(eds) / len(eds)


def new_model(profile: str, seed: int, vocab: Optional[Vocabulary] = None) -> Model:
    vocab = vocab or Vocabulary.default()
    cfg: ModelConfig = PROFILES[profile](len(vocab), seed=seed)
    return Model(cfg, vocab)


def load_split(corpus_dir: Union[str, Path], manifest: dict, split: str) -> list[Page]:
    out = []
    for entry in manifest["pages"]:
        if entry["split"] == split:
            page, gt, _ = load_page(corpus_dir, entry)
            out.append((page, gt))
    return out


def train_corpus(corpus_dir: Union[str, Path], out_path: Union[str, Path], profile: str = "desk",
                 tc: TrainConfig = TrainConfig(), progress: Optional[Callable[[dict], None]] = None,
                 max_pages: Optional[int] = None) -> tuple[Model, list[dict]]:
    """Train on the corpus train split and write a checkpoint; returns the model and per-epoch logs."""
    torch.manual_seed(tc.seed)
    manifest = load_manifest(corpus_dir)
    train_pages = load_split(corpus_dir, manifest, "train")[:max_pages]
    held_pages = load_split(corpus_dir, manifest, "heldout")
    model = new_model(profile, tc.seed)
    sampler = TaskSampler(model.vocab, model.cfg.frame_size, model.cfg.max_seq_len)
    rng = random.Random(tc.seed)

    per_epoch = len(epoch_examples(train_pages, sampler, random.Random(tc.seed), tc))
    steps_per_epoch = -(-per_epoch // tc.batch_size)
    trainer = Trainer(model, total_steps=max(1, tc.epochs * steps_per_epoch), peak_lr=tc.peak_lr,
                      weight_decay=tc.weight_decay, warmup=tc.warmup_steps, min_lr=tc.min_lr)
    history = []
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        batches = make_batches(epoch_examples(train_pages, sampler, rng, tc), rng, tc)
        total, n = 0.0, 0
        for b, batch in enumerate(batches):
            total += trainer.train_step(batch, batch_id=f"epoch {epoch} batch {b}") * len(batch)
            n += len(batch)
        rec = {"epoch": epoch + 1, "loss": total / max(n, 1), "steps": trainer.step_no,
               "heldout_ed": heldout_ed(model, held_pages, sampler, tc.eval_elements),
               "seconds": round(time.perf_counter() - t0, 1)}
        history.append(rec)
        log.info("epoch %d loss %.4f heldout_ed %s (%ss)", rec["epoch"], rec["loss"], rec["heldout_ed"],
                 rec["seconds"])
        if progress:
            progress(rec)
    meta = {"train": asdict(tc), "profile": profile, "corpus_config_hash": manifest["config_hash"],
            "train_pages": len(train_pages),
            "history": [{k: v for k, v in h.items() if k != "seconds"} for h in history]}
    save_checkpoint(model, out_path, meta)
    return model, history
