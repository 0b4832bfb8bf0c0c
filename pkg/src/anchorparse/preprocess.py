"""Geometry between source images and the padded square model frame, plus element cropping.

Content is anchored top-left and the right/bottom remainder is padded white.  Scales are kept
as exact integer ratios so that coordinate quantization (round half up) is platform independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .types import DEFAULT_FRAME, BoundingBox, InvalidBox

PAD_VALUE = 255


class DegenerateImage(ValueError):
    pass


class EmptyAfterQuantization(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


class PageImage:
    """Decoded 8-bit image, row-major, 1 (gray) or 3 (RGB) channels."""

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        pixels = np.asarray(pixels)
        if pixels.dtype != np.uint8:
            raise TypeError(f"expected uint8 pixels, got {pixels.dtype}")
        if pixels.ndim == 3 and pixels.shape[2] == 1:
            pixels = pixels[:, :, 0]
        if pixels.ndim not in (2, 3) or (pixels.ndim == 3 and pixels.shape[2] != 3):
            raise ValueError(f"unsupported pixel array shape {pixels.shape}")
        if pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise DegenerateImage(f"image has zero extent: {pixels.shape[1]}x{pixels.shape[0]}")
        self.pixels = np.ascontiguousarray(pixels)

    @classmethod
    def from_bytes(cls, width: int, height: int, channels: int, data: bytes) -> "PageImage":
        if width < 1 or height < 1:
            raise DegenerateImage(f"image has zero extent: {width}x{height}")
        if len(data) != width * height * channels:
            raise ValueError("data length does not match dimensions")
        arr = np.frombuffer(data, dtype=np.uint8)
        shape = (height, width) if channels == 1 else (height, width, channels)
        return cls(arr.reshape(shape).copy())

    @classmethod
    def blank(cls, width: int, height: int, value: int = PAD_VALUE) -> "PageImage":
        if width < 1 or height < 1:
            raise DegenerateImage(f"image has zero extent: {width}x{height}")
        return cls(np.full((height, width), value, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.pixels
        p = self.pixels.astype(np.uint32)
        # ITU-R 601 luma in integer arithmetic
        return ((p[..., 0] * 299 + p[..., 1] * 587 + p[..., 2] * 114 + 500) // 1000).astype(np.uint8)

    def __eq__(self, other) -> bool:
        return isinstance(other, PageImage) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"PageImage({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True)
class FrameTransform:
    """Source → model frame mapping: ``model = round_half_up(source * scale)``."""

    scale_num: int
    scale_den: int
    pad_right: int
    pad_bottom: int
    frame_size: int = DEFAULT_FRAME

    @property
    def scale(self) -> float:
        return self.scale_num / self.scale_den

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.scale_num, self.scale_den)

    @property
    def content_w(self) -> int:
        return self.frame_size - self.pad_right

    @property
    def content_h(self) -> int:
        return self.frame_size - self.pad_bottom

    def to_dict(self) -> dict:
        return {"scale": self.scale, "scale_num": self.scale_num, "scale_den": self.scale_den,
                "pad_right": self.pad_right, "pad_bottom": self.pad_bottom, "frame_size": self.frame_size}


def _round_half_up(num: int, den: int) -> int:
    """round_half_up(num / den) for integers, den > 0."""
    return (2 * num + den) // (2 * den)


def frame_transform_for(width: int, height: int, frame_size: int = DEFAULT_FRAME,
                        max_scale: Optional[Fraction] = None) -> FrameTransform:
    if width < 1 or height < 1:
        raise DegenerateImage(f"image has zero extent: {width}x{height}")
    longest = max(width, height)
    ratio = Fraction(frame_size, longest)
    if max_scale is not None and ratio > max_scale:
        ratio = Fraction(max_scale)
    cw = min(frame_size, max(1, _round_half_up(width * ratio.numerator, ratio.denominator)))
    ch = min(frame_size, max(1, _round_half_up(height * ratio.numerator, ratio.denominator)))
    return FrameTransform(ratio.numerator, ratio.denominator, frame_size - cw, frame_size - ch, frame_size)


def resize_pad(image: PageImage, frame_size: int = DEFAULT_FRAME,
               max_scale: Optional[Fraction] = None) -> tuple[PageImage, FrameTransform]:
    """Resize the longer edge to ``frame_size`` (bilinear) and pad right/bottom with white.

    ``max_scale`` caps enlargement; with a cap the content may not reach the frame edge.
    """
    if frame_size < 8:
        raise ValueError("frame_size must be >= 8")
    if image.width == 0 or image.height == 0:
        raise DegenerateImage("image has zero extent")
    t = frame_transform_for(image.width, image.height, frame_size, max_scale)
    cw, ch = t.content_w, t.content_h
    if (cw, ch) == (image.width, image.height):
        content = image.pixels
    else:
        mode = "L" if image.channels == 1 else "RGB"
        content = np.asarray(Image.fromarray(image.pixels, mode).resize((cw, ch), Image.BILINEAR))
    shape = (frame_size, frame_size) if image.channels == 1 else (frame_size, frame_size, 3)
    out = np.full(shape, PAD_VALUE, dtype=np.uint8)
    out[:ch, :cw] = content
    return PageImage(out), t


def to_model_frame(bbox_src, t: FrameTransform) -> BoundingBox:
    """Scale a source-pixel rectangle into the model frame, clamped to the content region."""
    x1, y1, x2, y2 = (int(v) for v in bbox_src)
    n, d = t.scale_num, t.scale_den
    qx1 = min(max(_round_half_up(x1 * n, d), 0), t.content_w)
    qy1 = min(max(_round_half_up(y1 * n, d), 0), t.content_h)
    qx2 = min(max(_round_half_up(x2 * n, d), 0), t.content_w)
    qy2 = min(max(_round_half_up(y2 * n, d), 0), t.content_h)
    if qx2 <= qx1 or qy2 <= qy1:
        raise EmptyAfterQuantization(f"box {[x1, y1, x2, y2]} collapses to zero area at scale {t.scale:.4g}")
    return BoundingBox(qx1, qy1, qx2, qy2, frame_size=t.frame_size)


def from_model_frame(bbox: BoundingBox, t: FrameTransform) -> tuple[int, int, int, int]:
    """Back-project to source pixels (outward rounding, not clamped)."""
    n, d = t.scale_num, t.scale_den
    return (
        (bbox.x1 * d) // n,
        (bbox.y1 * d) // n,
        -((-bbox.x2 * d) // n),
        -((-bbox.y2 * d) // n),
    )


def crop_source(page: PageImage, t: FrameTransform, bbox: BoundingBox) -> PageImage:
    """Back-project ``bbox`` and cut the region out of the original page."""
    x1, y1, x2, y2 = from_model_frame(bbox, t)
    # one source pixel plus the half-step lost when the content size was rounded
    tol = 1 + math.ceil(t.scale_den / (2 * t.scale_num))
    if x2 > page.width + tol or y2 > page.height + tol:
        raise OutOfBounds(
            f"box {bbox.as_list()} maps to {[x1, y1, x2, y2]}, outside {page.width}x{page.height} page")
    x2, y2 = min(x2, page.width), min(y2, page.height)
    if x2 <= x1 or y2 <= y1:
        raise OutOfBounds(f"box {bbox.as_list()} lies entirely outside the page content")
    return PageImage(page.pixels[y1:y2, x1:x2].copy())


def crop_element(page: PageImage, t: FrameTransform, bbox: BoundingBox,
                 frame_size: Optional[int] = None, max_scale: Optional[Fraction] = None) -> PageImage:
    """Local view of one element: crop from the original page, then resize_pad it."""
    crop = crop_source(page, t, bbox)
    view, _ = resize_pad(crop, frame_size or t.frame_size, max_scale)
    return view


# ---------------------------------------------------------------- image files

def read_image(path: Union[str, Path]) -> PageImage:
    """Decode PNG or binary PGM/PPM into a PageImage."""
    with Image.open(path) as im:
        im.load()
        if im.mode in ("L", "1", "I", "I;16", "F"):
            im = im.convert("L")
        elif im.mode != "RGB":
            im = im.convert("RGB")
        return PageImage(np.asarray(im).copy())


def write_png(image: PageImage, path: Union[str, Path]) -> None:
    mode = "L" if image.channels == 1 else "RGB"
    Image.fromarray(image.pixels, mode).save(path, format="PNG", optimize=False)


def source_box_valid(bbox_src, width: int, height: int) -> bool:
    x1, y1, x2, y2 = bbox_src
    return 0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height


__all__ = [
    "PageImage", "FrameTransform", "DegenerateImage", "EmptyAfterQuantization", "OutOfBounds", "InvalidBox",
    "resize_pad", "to_model_frame", "from_model_frame", "crop_element", "crop_source", "frame_transform_for",
    "read_image", "write_png", "source_box_valid",
]
