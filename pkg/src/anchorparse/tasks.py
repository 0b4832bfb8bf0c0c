"""Instruction samples built from synthetic ground truth.

Every page or element sample gets one task drawn at random from the tasks its annotations support:
pages can be used for layout analysis, text spotting or box queries; element crops for paragraph
or table parsing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .grammar import (UntokenizableInput, Vocabulary, encode_prompt, serialize_layout, serialize_spotting)
from .model.training import TrainExample
from .preprocess import (EmptyAfterQuantization, FrameTransform, PageImage, crop_element,
                         frame_transform_for, resize_pad, to_model_frame)
from .synth.pages import GroundTruth
from .types import (LAYOUT_PROMPT, SPOTTING_PROMPT, BoundingBox, ElementType, LayoutSequence, Prompt,
                    prompt_for)

# crops are taken around the element box with this margin (model-frame pixels) and never enlarged
CROP_MARGIN = 4
CROP_MAX_SCALE = Fraction(1)
TEXT_TYPES = frozenset(t for t in ElementType if t not in (ElementType.tab, ElementType.fig))

PAGE_TASK_WEIGHTS = {"layout": 0.6, "box": 0.25, "spot": 0.15}


def model_layout(gt: GroundTruth, t: FrameTransform) -> LayoutSequence:
    items = []
    for e in gt.layout:
        try:
            items.append((e.etype, to_model_frame(e.bbox.as_list(), t)))
        except EmptyAfterQuantization:
            continue
    return LayoutSequence.from_items(items)


def spotting_lines(gt: GroundTruth, t: FrameTransform) -> list[tuple[BoundingBox, str]]:
    out = []
    for boxes, texts in zip(gt.line_boxes, gt.line_texts):
        for b, s in zip(boxes, texts):
            try:
                out.append((to_model_frame(b, t), s))
            except EmptyAfterQuantization:
                continue
    return out


def jittered_crop(page: PageImage, t: FrameTransform, bbox: BoundingBox, rng: Optional[random.Random],
                  frame_size: int) -> PageImage:
    if rng is None:
        box = bbox.dilate(CROP_MARGIN)
    else:
        lo, hi = CROP_MARGIN - 3, CROP_MARGIN + 3
        f = bbox.frame_size
        box = BoundingBox(max(0, bbox.x1 - rng.randint(lo, hi)), max(0, bbox.y1 - rng.randint(lo, hi)),
                          min(f, bbox.x2 + rng.randint(lo, hi)), min(f, bbox.y2 + rng.randint(lo, hi)), f)
    return crop_element(page, t, box, frame_size, CROP_MAX_SCALE)


@dataclass
class TaskSampler:
    vocab: Vocabulary
    frame_size: int
    max_seq_len: int

    def _example(self, image: PageImage, prompt: Prompt, target: str) -> Optional[TrainExample]:
        try:
            ids = self.vocab.tokenize(target)
            n_prefix = len(encode_prompt(self.vocab, prompt))
        except UntokenizableInput:
            return None
        if n_prefix + len(ids) + 1 > self.max_seq_len:
            return None
        return TrainExample(image, prompt, ids)

    def page_tasks(self, page: PageImage, gt: GroundTruth, t: FrameTransform, framed: PageImage,
                   rng: random.Random) -> list[tuple[str, object]]:
        """Applicable page-level tasks as (name, builder) pairs."""
        tasks = [("layout", lambda: self._example(framed, LAYOUT_PROMPT, serialize_layout(model_layout(gt, t))))]
        lines = spotting_lines(gt, t)
        if lines:
            tasks.append(("spot", lambda: self._example(framed, SPOTTING_PROMPT, serialize_spotting(lines))))
        text_idx = [i for i, e in enumerate(gt.layout) if e.etype in TEXT_TYPES and gt.contents[i]]
        if text_idx:
            def box_query():
                i = rng.choice(text_idx)
                b = to_model_frame(gt.layout[i].bbox.as_list(), t)
                return self._example(framed, Prompt.box_query(b.x1, b.y1, b.x2, b.y2), gt.contents[i])
            tasks.append(("box", box_query))
        return tasks

    def page_example(self, page: PageImage, gt: GroundTruth, rng: random.Random) -> Optional[TrainExample]:
        framed, t = resize_pad(page, self.frame_size)
        tasks = self.page_tasks(page, gt, t, framed, rng)
        names = [n for n, _ in tasks]
        weights = [PAGE_TASK_WEIGHTS[n] for n in names]
        order = rng.choices(range(len(tasks)), weights)[0]
        ex = tasks[order][1]()
        # a task whose target does not fit falls back to layout analysis
        return ex if ex is not None else tasks[0][1]()

    def element_example(self, page: PageImage, gt: GroundTruth, index: int,
                        rng: Optional[random.Random]) -> Optional[TrainExample]:
        t = frame_transform_for(page.width, page.height, self.frame_size)
        e = gt.layout[index]
        bbox = to_model_frame(e.bbox.as_list(), t)
        view = jittered_crop(page, t, bbox, rng, self.frame_size)
        return self._example(view, prompt_for(e.etype), gt.contents[index])

