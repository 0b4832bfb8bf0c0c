"""Shared document vocabulary: element taxonomy, geometry, prompts and the parsed-document model."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

DEFAULT_FRAME = 896


class UnknownElementType(ValueError):
    pass


class InvalidBox(ValueError):
    pass


class ElementType(str, enum.Enum):
    title = "title"
    author = "author"
    sec = "sec"
    sub_sec = "sub_sec"
    para = "para"
    header = "header"
    foot = "foot"
    fnote = "fnote"
    watermark = "watermark"
    fig = "fig"
    tab = "tab"
    cap = "cap"
    anno = "anno"
    alg = "alg"
    list = "list"

    def __str__(self) -> str:
        return self.value


def element_type_parse(s: str) -> ElementType:
    try:
        return ElementType(s)
    except ValueError:
        raise UnknownElementType(f"unknown element type {s!r}") from None


@dataclass(frozen=True)
class BoundingBox:
    """Integer box in the padded square model frame; x2/y2 are exclusive."""

    x1: int
    y1: int
    x2: int
    y2: int
    frame_size: int = field(default=DEFAULT_FRAME, compare=False, repr=False)

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if isinstance(v, bool) or not isinstance(v, int):
                raise InvalidBox(f"coordinates must be integers, got {v!r}")
        f = self.frame_size
        if not (0 <= self.x1 < self.x2 <= f and 0 <= self.y1 < self.y2 <= f):
            raise InvalidBox(f"box {self.as_list()} invalid in a {f}x{f} frame")

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def iou(self, other: "BoundingBox") -> float:
        ix = max(0, min(self.x2, other.x2) - max(self.x1, other.x1))
        iy = max(0, min(self.y2, other.y2) - max(self.y1, other.y1))
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def dilate(self, margin: int) -> "BoundingBox":
        f = self.frame_size
        return BoundingBox(max(0, self.x1 - margin), max(0, self.y1 - margin),
                           min(f, self.x2 + margin), min(f, self.y2 + margin), f)


@dataclass(frozen=True)
class LayoutElement:
    etype: ElementType
    bbox: BoundingBox
    order_index: int


@dataclass(frozen=True)
class LayoutSequence:
    elements: tuple[LayoutElement, ...] = ()

    def __post_init__(self):
        got = [e.order_index for e in self.elements]
        if got != list(range(len(got))):
            raise ValueError(f"order_index must be 0..n-1 in iteration order, got {got}")

    @classmethod
    def from_items(cls, items: Sequence[tuple[ElementType, BoundingBox]]) -> "LayoutSequence":
        return cls(tuple(LayoutElement(t, b, i) for i, (t, b) in enumerate(items)))

    def __iter__(self) -> Iterator[LayoutElement]:
        return iter(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, i: int) -> LayoutElement:
        return self.elements[i]


class PromptKind(str, enum.Enum):
    Layout = "Layout"
    Paragraph = "Paragraph"
    Table = "Table"
    Spotting = "Spotting"
    BoxQuery = "BoxQuery"


PROMPT_TEXT = {
    PromptKind.Layout: "Parse the reading order of this document.",
    PromptKind.Paragraph: "Read text in the image.",
    PromptKind.Table: "Parse the table in the image.",
    PromptKind.Spotting: "Detect and recognize all the text lines in the image.",
}
BOX_QUERY_PREFIX = "Read the text in the image within the specified box "


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    text: str

    @classmethod
    def of(cls, kind: PromptKind) -> "Prompt":
        if kind is PromptKind.BoxQuery:
            raise ValueError("use Prompt.box_query for box queries")
        return cls(kind, PROMPT_TEXT[kind])

    @classmethod
    def box_query(cls, x1: int, y1: int, x2: int, y2: int) -> "Prompt":
        return cls(PromptKind.BoxQuery, f"{BOX_QUERY_PREFIX}[{x1},{y1},{x2},{y2}].")


LAYOUT_PROMPT = Prompt.of(PromptKind.Layout)
PARAGRAPH_PROMPT = Prompt.of(PromptKind.Paragraph)
TABLE_PROMPT = Prompt.of(PromptKind.Table)
SPOTTING_PROMPT = Prompt.of(PromptKind.Spotting)


def prompt_for(etype: ElementType) -> Prompt:
    """Tables get the HTML table prompt; everything else is read as text."""
    return TABLE_PROMPT if etype is ElementType.tab else PARAGRAPH_PROMPT


class ContentFormat(str, enum.Enum):
    PlainText = "PlainText"
    Html = "Html"
    LatexInline = "LatexInline"


def content_format_for(etype: ElementType) -> ContentFormat:
    return ContentFormat.Html if etype is ElementType.tab else ContentFormat.PlainText


@dataclass(frozen=True)
class ParsedElement:
    element: LayoutElement
    content: str
    content_format: ContentFormat
    error: Optional[str] = None

    def __post_init__(self):
        if self.content_format is not content_format_for(self.element.etype):
            raise ValueError(f"{self.element.etype} content must be {content_format_for(self.element.etype)}")


@dataclass
class StageTiming:
    stage1_ms: float = 0.0
    stage2_ms: float = 0.0
    n_elements: int = 0
    n_batches: int = 0


@dataclass
class ParsedDocument:
    page_w: int
    page_h: int
    transform: "object"
    elements: list[ParsedElement]
    timing: StageTiming = field(default_factory=StageTiming)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "page_w": self.page_w,
            "page_h": self.page_h,
            "elements": [
                {
                    "type": pe.element.etype.value,
                    "bbox": pe.element.bbox.as_list(),
                    "order": pe.element.order_index,
                    "format": pe.content_format.value,
                    "content": pe.content,
                }
                for pe in self.elements
            ],
            "timing": {"stage1_ms": float(self.timing.stage1_ms), "stage2_ms": float(self.timing.stage2_ms)},
        }
        errors = [
            {"order": pe.element.order_index, "error": pe.error} for pe in self.elements if pe.error
        ]
        if errors or self.warnings:
            d["warnings"] = list(self.warnings) + [f"element {e['order']}: {e['error']}" for e in errors]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, frame_size: int = DEFAULT_FRAME) -> "ParsedDocument":
        elements = []
        for e in d["elements"]:
            etype = element_type_parse(e["type"])
            le = LayoutElement(etype, BoundingBox(*e["bbox"], frame_size=frame_size), e["order"])
            elements.append(ParsedElement(le, e["content"], ContentFormat(e["format"])))
        t = d.get("timing", {})
        timing = StageTiming(t.get("stage1_ms", 0.0), t.get("stage2_ms", 0.0), len(elements))
        return cls(d["page_w"], d["page_h"], None, elements, timing, list(d.get("warnings", [])))
