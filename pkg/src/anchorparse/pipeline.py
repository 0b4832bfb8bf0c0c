"""Two-stage page parsing: layout analysis on the whole page, then content parsing of each element crop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from html import escape
from typing import Optional, Sequence

from .grammar import ParseWarning, decode_tokens, parse_layout, parse_spotting
from .model.network import Model
from .preprocess import (DegenerateImage, EmptyAfterQuantization, FrameTransform, OutOfBounds, PageImage,
                         resize_pad, source_box_valid, to_model_frame)
from .tasks import jittered_crop
from .types import (LAYOUT_PROMPT, SPOTTING_PROMPT, BoundingBox, ElementType, LayoutSequence, ParsedDocument,
                    ParsedElement, Prompt, StageTiming, content_format_for, prompt_for)


@dataclass(frozen=True)
class PipelineConfig:
    max_batch: int = 16
    max_layout_len: int = 300
    max_element_len: int = 300
    parallel: bool = True
    # crops per encoder call; the encoder is memory-bound on CPU and large batches fall out of cache
    encode_chunk: int = 2

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.encode_chunk < 1:
            raise ValueError("encode_chunk must be >= 1")


class Parser:
    """Runs both stages against one model.  Weights are only read, so calls may share a Parser."""

    def __init__(self, model: Model, cfg: Optional[PipelineConfig] = None):
        self.model = model
        self.cfg = cfg or PipelineConfig()

    @property
    def frame_size(self) -> int:
        return self.model.cfg.frame_size

    def _decode(self, prompt: Prompt, image: PageImage, max_len: int) -> tuple[str, bool]:
        z = self.model.encode(image)
        out = self.model.generate(prompt, z, max_len)
        return decode_tokens(self.model.vocab, out.ids), out.truncated

    # ------------------------------------------------------------ stage 1

    def analyze_page(self, img: PageImage) -> tuple[LayoutSequence, FrameTransform, list[ParseWarning]]:
        framed, t = resize_pad(img, self.frame_size)
        text, truncated = self._decode(LAYOUT_PROMPT, framed, self.cfg.max_layout_len)
        seq, warnings = parse_layout(text, self.frame_size)
        if truncated:
            warnings.append(ParseWarning("MalformedLine", -1, "", "layout output truncated at max_layout_len"))
        return seq, t, warnings

    # ------------------------------------------------------------ stage 2

    def parse_elements(self, page: PageImage, t: FrameTransform, seq: LayoutSequence,
                       timing: Optional[StageTiming] = None) -> list[ParsedElement]:
        """Parse every element crop; the result is in reading order whatever the batching."""
        t0 = time.perf_counter()
        results: list[Optional[ParsedElement]] = [None] * len(seq)
        jobs: list[tuple[int, Prompt, PageImage]] = []
        for i, el in enumerate(seq):
            try:
                view = jittered_crop(page, t, el.bbox, None, self.frame_size)
            except (OutOfBounds, EmptyAfterQuantization, DegenerateImage) as e:
                results[i] = ParsedElement(el, "", content_format_for(el.etype), error=f"{type(e).__name__}: {e}")
                continue
            jobs.append((i, prompt_for(el.etype), view))

        size = self.cfg.max_batch if self.cfg.parallel else 1
        if self.cfg.parallel:
            # crops of similar area tend to decode to similar lengths, so batches finish together
            jobs.sort(key=lambda j: (seq[j[0]].bbox.area, j[0]))
        n_batches = 0
        for start in range(0, len(jobs), size):
            chunk = jobs[start:start + size]
            step = self.cfg.encode_chunk
            feats = [z for s in range(0, len(chunk), step)
                     for z in self.model.encode_batch([v for _, _, v in chunk[s:s + step]])]
            outs = self.model.generate_batch([(p, z) for (_, p, _), z in zip(chunk, feats)],
                                             self.cfg.max_element_len)
            n_batches += 1
            for (i, _, _), out in zip(chunk, outs):
                el = seq[i]
                err = "truncated at max_element_len" if out.truncated else None
                results[i] = ParsedElement(el, decode_tokens(self.model.vocab, out.ids),
                                           content_format_for(el.etype), error=err)
        if timing is not None:
            timing.stage2_ms = (time.perf_counter() - t0) * 1000.0
            timing.n_elements = len(seq)
            timing.n_batches = n_batches
        return results

    def parse_document(self, img: PageImage) -> ParsedDocument:
        timing = StageTiming()
        t0 = time.perf_counter()
        seq, t, warnings = self.analyze_page(img)
        timing.stage1_ms = (time.perf_counter() - t0) * 1000.0
        elements = self.parse_elements(img, t, seq, timing)
        return ParsedDocument(img.width, img.height, t, elements, timing, [str(w) for w in warnings])

    # ------------------------------------------------------------ whole-page prompts

    def box_query(self, img: PageImage, bbox_src: Sequence[int]) -> str:
        """Read the text inside a source-pixel box from full-page features (no cropping)."""
        if not source_box_valid(bbox_src, img.width, img.height):
            raise OutOfBounds(f"box {list(bbox_src)} is empty or outside the {img.width}x{img.height} page")
        framed, t = resize_pad(img, self.frame_size)
        try:
            b = to_model_frame(bbox_src, t)
        except EmptyAfterQuantization as e:
            raise OutOfBounds(str(e)) from e
        return self.box_query_framed(framed, b)

    def box_query_framed(self, framed: PageImage, b: BoundingBox) -> str:
        text, _ = self._decode(Prompt.box_query(b.x1, b.y1, b.x2, b.y2), framed, self.cfg.max_element_len)
        return text

    def text_spot(self, img: PageImage) -> tuple[list[tuple[BoundingBox, str]], list[ParseWarning]]:
        framed, _ = resize_pad(img, self.frame_size)
        text, _ = self._decode(SPOTTING_PROMPT, framed, self.cfg.max_layout_len)
        return parse_spotting(text, self.frame_size)


# ---------------------------------------------------------------- rendering

_HEADINGS = {ElementType.title: "# ", ElementType.sec: "## ", ElementType.sub_sec: "### "}
_OMITTED = {ElementType.header, ElementType.foot, ElementType.watermark}


def element_markdown(etype: ElementType, content: str) -> Optional[str]:
    if etype in _OMITTED:
        return None
    if etype in _HEADINGS:
        return _HEADINGS[etype] + content
    if etype is ElementType.alg:
        return f"```\n{content}\n```"
    if etype is ElementType.fig:
        return "![fig](#)"
    return content


def assemble_markdown(doc: ParsedDocument) -> str:
    blocks = []
    for pe in sorted(doc.elements, key=lambda e: e.element.order_index):
        md = element_markdown(pe.element.etype, pe.content)
        if md is not None:
            blocks.append(md)
    return "\n\n".join(blocks)


def overlay_svg(doc: ParsedDocument, frame_size: Optional[int] = None) -> str:
    """Boxes with type tag and reading-order index, drawn in model-frame coordinates."""
    f = frame_size or (doc.elements[0].element.bbox.frame_size if doc.elements else 896)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{f}" height="{f}" viewBox="0 0 {f} {f}">',
           f'<rect x="0" y="0" width="{f}" height="{f}" fill="white" stroke="#999"/>']
    for pe in doc.elements:
        b = pe.element.bbox
        color = "#c00" if pe.error else "#06c"
        out.append(f'<rect x="{b.x1}" y="{b.y1}" width="{b.width}" height="{b.height}" fill="none" '
                   f'stroke="{color}" stroke-width="1"/>')
        label = escape(f"{pe.element.order_index}:{pe.element.etype.value}")
        out.append(f'<text x="{b.x1}" y="{max(b.y1 - 1, 8)}" font-size="8" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def expected_batches(n_jobs: int, cfg: PipelineConfig) -> int:
    return math.ceil(n_jobs / cfg.max_batch) if cfg.parallel else n_jobs
