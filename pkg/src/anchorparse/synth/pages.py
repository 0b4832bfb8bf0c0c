"""Deterministic synthetic pages with exact layout, content and line ground truth."""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from ..preprocess import PageImage
from ..types import BoundingBox, ElementType, LayoutSequence
from .font import advance, draw_text, text_width
from .formula import Formula, random_formula

LINE_PITCH = 18
GLYPH_CELL_H = 14
MARGIN = 8
GUTTER = 12
ELEMENT_GAP = 8
MAX_ATTEMPTS = 10

WORDS = (
    "the of and to in is that for it as was with be by on not he this are or his from at which but "
    "have an they you were her she there one all we their has been if more when will would who so no "
    "data model page table value result method input output layer level order reading text line "
    "figure image sample train test error small large first second new each time over under between "
    "paper system task score field area form block cell row column grid map set key note part point "
    "rate case unit base mode type view local global parse read write range scale size shape state "
    "zero one two three four five six seven eight nine ten low high fast slow left right top end"
).split()
CAPWORDS = ("Introduction Methods Results Analysis Overview Summary Discussion Background Related "
            "Training Evaluation Appendix Experiments Setup Design Model Data Layout Tables Notes").split()
HEADERS = ("Journal of Data", "Proc. Layout", "Tech Report", "Notes on Text", "Draft Copy", "Review")

DEFAULT_MIX = {"sec": 0.16, "para": 0.34, "tab": 0.12, "cap": 0.1, "fig": 0.08, "list": 0.1,
               "header": 0.05, "foot": 0.05}
DEFAULT_CHARSET = ("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
                   " .,:;-()$^_{}+=\\")


class LayoutOverflow(RuntimeError):
    pass


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.  ``columns`` 0 picks one or two columns per page."""

    page_size: int = 256
    columns: int = 0
    element_mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    formula_prob: float = 0.25
    charset: str = DEFAULT_CHARSET
    seed: int = 0
    min_elements: int = 2
    max_elements: int = 7
    blank_prob: float = 0.03
    max_table_rows: int = 4
    max_table_cols: int = 3

    def __post_init__(self):
        if self.page_size < 128:
            raise SynthConfigError("page_size must be >= 128")
        if self.columns not in (0, 1, 2):
            raise SynthConfigError("columns must be 1, 2 or 0 (mixed)")
        unknown = set(self.element_mix) - set(DEFAULT_MIX)
        if unknown:
            raise SynthConfigError(f"unsupported element types in mix: {sorted(unknown)}")
        if any(p < 0 for p in self.element_mix.values()) or abs(sum(self.element_mix.values()) - 1) > 1e-9:
            raise SynthConfigError("element_mix probabilities must be non-negative and sum to 1")
        if not (1 <= self.min_elements <= self.max_elements):
            raise SynthConfigError("need 1 <= min_elements <= max_elements")
        if not (1 <= self.max_table_rows <= 6 and 1 <= self.max_table_cols <= 6):
            raise SynthConfigError("tables are capped at 6x6")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


@dataclass
class GroundTruth:
    """Exact annotations in page pixel coordinates."""

    layout: LayoutSequence
    contents: list[str]
    line_boxes: list[list[tuple[int, int, int, int]]]
    line_texts: list[list[str]]

    def to_dict(self) -> dict:
        return {
            "layout": [{"type": e.etype.value, "bbox": e.bbox.as_list(), "order": e.order_index}
                       for e in self.layout],
            "contents": list(self.contents),
            "lines": [[list(b) for b in boxes] for boxes in self.line_boxes],
            "line_texts": [list(t) for t in self.line_texts],
        }

    @classmethod
    def from_dict(cls, d: dict, frame_size: int) -> "GroundTruth":
        items = [(ElementType(e["type"]), BoundingBox(*e["bbox"], frame_size=frame_size))
                 for e in sorted(d["layout"], key=lambda e: e["order"])]
        lines = [[tuple(b) for b in boxes] for boxes in d["lines"]]
        texts = d.get("line_texts") or [[] for _ in lines]
        return cls(LayoutSequence.from_items(items), list(d["contents"]), lines, [list(t) for t in texts])


def ink_bbox(canvas: np.ndarray, threshold: int = 128) -> Optional[tuple[int, int, int, int]]:
    """Tight box (x2/y2 exclusive) around pixels darker than ``threshold``."""
    ys, xs = np.nonzero(canvas < threshold)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


# ---------------------------------------------------------------- element drafts

@dataclass
class Draft:
    """A rendered element on its own small canvas, not yet placed."""

    etype: ElementType
    canvas: np.ndarray
    content: str
    lines: list[tuple[tuple[int, int, int, int], str]]

    @property
    def height(self) -> int:
        return self.canvas.shape[0]

    @property
    def width(self) -> int:
        return self.canvas.shape[1]


class _Text:
    def __init__(self, cfg: SynthConfig, rng: random.Random):
        self.rng = rng
        allowed = set(cfg.charset)
        self.words = [w for w in WORDS if set(w) <= allowed] or ["a"]
        self.capwords = [w for w in CAPWORDS if set(w) <= allowed] or self.words
        self.digits = "".join(c for c in "0123456789" if c in allowed) or None
        self.allowed = allowed

    def word(self) -> str:
        if self.digits and self.rng.random() < 0.06:
            return "".join(self.rng.choice(self.digits) for _ in range(self.rng.randint(1, 3)))
        return self.rng.choice(self.words)

    def sentence_words(self, n: int) -> list[str]:
        ws = [self.word() for _ in range(n)]
        first = ws[0]
        if first[0].isalpha() and first[0].upper() in self.allowed:
            ws[0] = first[0].upper() + first[1:]
        if "," in self.allowed and n > 4 and self.rng.random() < 0.3:
            k = self.rng.randint(1, n - 2)
            ws[k] += ","
        if "." in self.allowed:
            ws[-1] += "."
        return ws


Item = Union[str, Formula]


def _item_width(it: Item) -> int:
    return text_width(it) if isinstance(it, str) else it.width()


def _item_text(it: Item) -> str:
    return it if isinstance(it, str) else it.source()


def wrap(items: list[Item], width: int) -> list[list[Item]]:
    lines: list[list[Item]] = []
    cur: list[Item] = []
    cur_w = 0
    space = advance()
    for it in items:
        w = _item_width(it)
        if w > width:
            continue
        if cur and cur_w + space + w > width:
            lines.append(cur)
            cur, cur_w = [], 0
        cur_w = w if not cur else cur_w + space + w
        cur.append(it)
    if cur:
        lines.append(cur)
    return lines


def render_lines(lines: list[list[Item]]) -> tuple[np.ndarray, list[tuple[tuple[int, int, int, int], str]]]:
    width = max(sum(_item_width(i) for i in ln) + advance() * (len(ln) - 1) for ln in lines)
    canvas = np.full((LINE_PITCH * len(lines), width + 2), 255, dtype=np.uint8)
    out = []
    for k, ln in enumerate(lines):
        y, x = k * LINE_PITCH, 0
        for it in ln:
            if isinstance(it, str):
                draw_text(canvas, x, y, it)
            else:
                it.draw(canvas, x, y)
            x += _item_width(it) + advance()
        band = canvas[y:y + LINE_PITCH]
        bb = ink_bbox(band)
        if bb is not None:
            out.append(((bb[0], bb[1] + y, bb[2], bb[3] + y), " ".join(_item_text(i) for i in ln)))
    return canvas, out


def _trim(d: Draft) -> Draft:
    bb = ink_bbox(d.canvas)
    x1, y1, x2, y2 = bb
    lines = [((a - x1, b - y1, c - x1, e - y1), t) for (a, b, c, e), t in d.lines]
    return Draft(d.etype, d.canvas[y1:y2, x1:x2].copy(), d.content, lines)


def draft_paragraph(tx: _Text, cfg: SynthConfig, width: int, max_lines: int = 4) -> Draft:
    rng = tx.rng
    n_lines = rng.randint(2, max_lines)
    target_chars = n_lines * (width // advance())
    items: list[Item] = []
    formula_ok = {"$", "^", "_", "{", "}", "\\"} <= tx.allowed
    while sum(len(_item_text(i)) + 1 for i in items) < target_chars * 0.85:
        items += tx.sentence_words(rng.randint(4, 9))
        if formula_ok and rng.random() < cfg.formula_prob:
            f = random_formula(rng, width)
            if f is not None:
                items.insert(rng.randint(1, len(items)), f)
    lines = wrap(items, width)[:n_lines]
    if len(lines) < 2:
        lines = wrap(items, width)[:2]
    # finish the paragraph on a sentence end so the content reads naturally
    last = lines[-1]
    if isinstance(last[-1], str) and "." in tx.allowed and not last[-1].endswith("."):
        last[-1] = last[-1].rstrip(",") + "."
        if _item_width(last[-1]) + sum(_item_width(i) + advance() for i in last[:-1]) > width:
            last.pop()
            if not last:
                lines.pop()
    canvas, lines_out = render_lines(lines)
    content = " ".join(" ".join(_item_text(i) for i in ln) for ln in lines)
    return _trim(Draft(ElementType.para, canvas, content, lines_out))


def _fit_words(tx: _Text, words: list[str], width: int) -> str:
    s = ""
    for w in words:
        cand = w if not s else s + " " + w
        if text_width(cand) > width:
            break
        s = cand
    return s or words[0][: max(1, (width + 2) // advance())]


def draft_single_line(etype: ElementType, text: str) -> Draft:
    canvas, lines = render_lines([[text]])
    return _trim(Draft(etype, canvas, text, lines))


def draft_section(tx: _Text, width: int) -> Draft:
    rng = tx.rng
    numbered = bool(tx.digits and tx.digits[1:])
    room = width - (2 * advance() if numbered else 0)
    fitting = [w for w in tx.capwords if text_width(w) <= room] or [w for w in tx.words if text_width(w) <= room]
    words = [rng.choice(fitting)] + [tx.word() for _ in range(rng.randint(0, 2))]
    if numbered:
        words.insert(0, rng.choice(tx.digits[1:]))
    return draft_single_line(ElementType.sec, _fit_words(tx, words, width))


def draft_list(tx: _Text, width: int) -> Draft:
    rng = tx.rng
    bullet = "-" if "-" in tx.allowed else ""
    rows = []
    for _ in range(rng.randint(2, 3)):
        words = [bullet] + [tx.word() for _ in range(rng.randint(2, 6))] if bullet else \
            [tx.word() for _ in range(rng.randint(2, 6))]
        rows.append(_fit_words(tx, words, width))
    canvas, lines = render_lines([[r] for r in rows])
    return _trim(Draft(ElementType.list, canvas, "\n".join(rows), lines))


def draft_caption(tx: _Text, width: int) -> Draft:
    rng = tx.rng
    label = rng.choice(["Figure", "Table", "Fig."]) + " " + (rng.choice(tx.digits[1:] or "1") if tx.digits else "")
    items: list[Item] = [w for w in label.split() if set(w) <= tx.allowed]
    items += tx.sentence_words(rng.randint(3, 8))
    lines = wrap(items, width)[:2]
    canvas, out = render_lines(lines)
    content = " ".join(" ".join(_item_text(i) for i in ln) for ln in lines)
    return _trim(Draft(ElementType.cap, canvas, content, out))


def draft_table(tx: _Text, cfg: SynthConfig, width: int) -> Optional[Draft]:
    rng = tx.rng
    for _ in range(6):
        rows = rng.randint(2, cfg.max_table_rows)
        cols = rng.randint(2, cfg.max_table_cols)
        max_chars = ((width - 1) // cols - 6) // advance()
        if max_chars < 1:
            cols = max(1, cols - 1)
            continue
        cells = []
        for r in range(rows):
            row = []
            for c in range(cols):
                n = rng.randint(1, min(4, max_chars))
                if tx.digits and (r > 0 and rng.random() < 0.6):
                    s = "".join(rng.choice(tx.digits) for _ in range(n))
                else:
                    s = rng.choice([w for w in tx.words if len(w) <= max_chars] or ["x"])
                row.append(s)
            cells.append(row)
        colw = [max(text_width(cells[r][c]) for r in range(rows)) + 8 for c in range(cols)]
        total_w = sum(colw) + 1
        if total_w > width:
            continue
        rowh = GLYPH_CELL_H + 6
        canvas = np.full((rows * rowh + 1, total_w), 255, dtype=np.uint8)
        xs = np.cumsum([0] + colw)
        for r in range(rows + 1):
            canvas[r * rowh, :] = 0
        for x in xs:
            canvas[:, min(x, total_w - 1)] = 0
        lines = []
        for r in range(rows):
            for c in range(cols):
                x0, y0 = xs[c] + 4, r * rowh + 3
                draw_text(canvas, int(x0), y0, cells[r][c])
                bb = ink_bbox(canvas[y0:y0 + GLYPH_CELL_H, int(x0):int(x0) + colw[c] - 6])
                lines.append(((bb[0] + int(x0), bb[1] + y0, bb[2] + int(x0), bb[3] + y0), cells[r][c]))
        html = "<table>" + "".join(
            "<tr>" + "".join(f"<td>{cells[r][c]}</td>" for c in range(cols)) + "</tr>" for r in range(rows)
        ) + "</table>"
        return Draft(ElementType.tab, canvas, html, lines)
    return None


def draft_figure(rng: random.Random, width: int) -> Draft:
    w = rng.randint(max(24, width // 2), width)
    h = rng.randint(28, 64)
    canvas = np.full((h, w), 255, dtype=np.uint8)
    canvas[0, :] = canvas[-1, :] = 0
    canvas[:, 0] = canvas[:, -1] = 0
    step = rng.choice([5, 6, 8])
    yy, xx = np.mgrid[0:h, 0:w]
    canvas[((xx + yy) % step) == 0] = 0
    return Draft(ElementType.fig, canvas, "", [])


def make_draft(etype: ElementType, tx: _Text, cfg: SynthConfig, width: int) -> Optional[Draft]:
    if etype is ElementType.para:
        return draft_paragraph(tx, cfg, width)
    if etype is ElementType.sec:
        return draft_section(tx, width)
    if etype is ElementType.list:
        return draft_list(tx, width)
    if etype is ElementType.cap:
        return draft_caption(tx, width)
    if etype is ElementType.tab:
        return draft_table(tx, cfg, width)
    if etype is ElementType.fig:
        return draft_figure(tx.rng, width)
    raise ValueError(etype)


# ---------------------------------------------------------------- pages

def _page_rng(seed: int, index: int, attempt: int) -> random.Random:
    h = hashlib.sha256(f"{seed}:{index}:{attempt}".encode()).digest()
    return random.Random(int.from_bytes(h[:8], "little"))


def _try_page(cfg: SynthConfig, rng: random.Random):
    S = cfg.page_size
    canvas = np.full((S, S), 255, dtype=np.uint8)
    if rng.random() < cfg.blank_prob:
        return canvas, []
    tx = _Text(cfg, rng)
    columns = cfg.columns or rng.choice([1, 2])
    col_w = (S - 2 * MARGIN - (columns - 1) * GUTTER) // columns
    types = list(cfg.element_mix)
    weights = [cfg.element_mix[t] for t in types]
    n = rng.randint(cfg.min_elements, cfg.max_elements)
    drawn = rng.choices(types, weights, k=n)
    has_header = "header" in drawn
    has_foot = "foot" in drawn
    body_types = [t for t in drawn if t not in ("header", "foot")]
    if not body_types:
        body_types = ["para"]

    placed: list[tuple[Draft, int, int]] = []
    top, bottom = MARGIN, S - MARGIN
    if has_header:
        words = rng.choice(HEADERS).split() + ([rng.choice(tx.digits)] if tx.digits else [])
        words = [w for w in words if set(w) <= tx.allowed] or [tx.word()]
        d = draft_single_line(ElementType.header, _fit_words(tx, words, S - 2 * MARGIN))
        placed.append((d, MARGIN, top))
        top += d.height + ELEMENT_GAP + 2
    foot = None
    if has_foot:
        label = [w for w in ["Page", str(rng.randint(1, 99))] if set(w) <= tx.allowed] or [tx.word()]
        d = draft_single_line(ElementType.foot, " ".join(label))
        bottom -= d.height
        foot = (d, (S - d.width) // 2, bottom)
        bottom -= ELEMENT_GAP + 2

    col, y = 0, top
    for t in body_types:
        d = make_draft(ElementType(t), tx, cfg, col_w)
        if d is None:
            continue
        if y + d.height > bottom:
            col, y = col + 1, top
            if col >= columns or y + d.height > bottom:
                return None
        x = MARGIN + col * (col_w + GUTTER)
        placed.append((d, x, y))
        y += d.height + ELEMENT_GAP
    if foot is not None:
        placed.append(foot)
    for d, x, y in placed:
        canvas[y:y + d.height, x:x + d.width] = np.minimum(canvas[y:y + d.height, x:x + d.width], d.canvas)
    return canvas, placed


def gen_page(cfg: SynthConfig, index: int) -> tuple[PageImage, GroundTruth]:
    """Render page ``index`` of the corpus defined by ``cfg`` (deterministic in seed and index)."""
    for attempt in range(MAX_ATTEMPTS):
        result = _try_page(cfg, _page_rng(cfg.seed, index, attempt))
        if result is not None:
            break
    else:
        raise LayoutOverflow(f"page {index}: elements could not be packed after {MAX_ATTEMPTS} attempts")
    canvas, placed = result
    S = cfg.page_size
    items, contents, line_boxes, line_texts = [], [], [], []
    for d, x, y in placed:
        items.append((d.etype, BoundingBox(x, y, x + d.width, y + d.height, frame_size=S)))
        contents.append(d.content)
        line_boxes.append([(a + x, b + y, c + x, e + y) for (a, b, c, e), _ in d.lines])
        line_texts.append([t for _, t in d.lines])
    gt = GroundTruth(LayoutSequence.from_items(items), contents, line_boxes, line_texts)
    return PageImage(canvas), gt
