"""Evaluation metrics: normalized edit distance, TEDS for HTML tables, an edit-distance formula
score, layout matching, and corpus-level aggregation."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .types import BoundingBox, ElementType, ParsedDocument


class MalformedGroundTruth(ValueError):
    pass


class MissingSample(KeyError):
    def __init__(self, ids: Sequence[str]):
        super().__init__(f"missing predictions for: {', '.join(ids)}")
        self.ids = list(ids)


# ---------------------------------------------------------------- string edit distance

def levenshtein(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_distance(a: str, b: str) -> tuple[int, float]:
    """Levenshtein distance and its value normalized by the longer length (0 for two empties)."""
    raw = levenshtein(a, b)
    return raw, raw / max(len(a), len(b), 1)


# ---------------------------------------------------------------- ordered tree edit distance

@dataclass
class Node:
    label: str
    children: list["Node"] = field(default_factory=list)
    text: str = ""

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def __repr__(self) -> str:
        inner = "".join(repr(c) for c in self.children)
        return f"{self.label}({inner})" if self.children else self.label


def _postorder(root: Node):
    nodes, lmd = [], []

    def walk(n: Node) -> int:
        first = None
        for c in n.children:
            leaf = walk(c)
            if first is None:
                first = leaf
        nodes.append(n)
        idx = len(nodes) - 1
        lmd.append(idx if first is None else first)
        return lmd[idx]

    walk(root)
    return nodes, lmd


def tree_edit_distance(t1: Node, t2: Node, rename: Optional[Callable[[Node, Node], float]] = None,
                       insert_cost: float = 1.0, delete_cost: float = 1.0) -> float:
    """Zhang-Shasha ordered tree edit distance."""
    rename = rename or (lambda a, b: 0.0 if a.label == b.label else 1.0)
    n1, l1 = _postorder(t1)
    n2, l2 = _postorder(t2)

    def keyroots(lmd):
        seen, roots = set(), []
        for i in range(len(lmd) - 1, -1, -1):
            if lmd[i] not in seen:
                seen.add(lmd[i])
                roots.append(i)
        return sorted(roots)

    td = [[0.0] * len(n2) for _ in range(len(n1))]
    for i in keyroots(l1):
        for j in keyroots(l2):
            li, lj = l1[i], l2[j]
            m, n = i - li + 2, j - lj + 2
            fd = [[0.0] * n for _ in range(m)]
            for x in range(1, m):
                fd[x][0] = fd[x - 1][0] + delete_cost
            for y in range(1, n):
                fd[0][y] = fd[0][y - 1] + insert_cost
            for x in range(1, m):
                for y in range(1, n):
                    a, b = li + x - 1, lj + y - 1
                    if l1[a] == li and l2[b] == lj:
                        fd[x][y] = min(fd[x - 1][y] + delete_cost, fd[x][y - 1] + insert_cost,
                                       fd[x - 1][y - 1] + rename(n1[a], n2[b]))
                        td[a][b] = fd[x][y]
                    else:
                        p, q = l1[a] - li, l2[b] - lj
                        fd[x][y] = min(fd[x - 1][y] + delete_cost, fd[x][y - 1] + insert_cost,
                                       fd[p][q] + td[a][b])
    return td[-1][-1]


# ---------------------------------------------------------------- HTML tables

_STRUCT = {"table", "thead", "tbody", "tr", "td", "th"}


class _TableBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root: Optional[Node] = None
        self.stack: list[Node] = []
        self.closed = False

    def handle_starttag(self, tag, attrs):
        if tag not in _STRUCT or self.closed:
            return
        if tag == "table":
            if self.root is None:
                self.root = Node("table")
                self.stack = [self.root]
            return
        if not self.stack:
            return
        if tag in ("td", "th"):
            # cells are leaves: an unclosed previous cell ends here
            while self.stack[-1].label.split("[")[0] in ("td", "th"):
                self.stack.pop()
            spans = {k: v for k, v in attrs if k in ("colspan", "rowspan") and v not in (None, "1")}
            label = tag + "".join(f"[{k}={spans[k]}]" for k in sorted(spans))
        else:
            label = tag
            if tag == "tr":
                while self.stack[-1].label not in ("table", "thead", "tbody"):
                    self.stack.pop()
                if self.stack[-1].label == "table":
                    tb = Node("tbody")
                    self.stack[-1].children.append(tb)
                    self.stack.append(tb)
            else:
                while self.stack[-1].label != "table":
                    self.stack.pop()
        node = Node(label)
        self.stack[-1].children.append(node)
        self.stack.append(node)

    def handle_endtag(self, tag):
        if tag not in _STRUCT or not self.stack or self.closed:
            return
        if tag == "table":
            self.closed = True
            self.stack = []
            return
        for k in range(len(self.stack) - 1, 0, -1):
            if self.stack[k].label.split("[")[0] == tag:
                del self.stack[k:]
                return

    def handle_data(self, data):
        if self.stack and self.stack[-1].label.split("[")[0] in ("td", "th"):
            self.stack[-1].text += data


def parse_table(html: str) -> Optional[Node]:
    """Table tree (table/thead/tbody/tr/td) or None when no table element is present.

    Rows placed directly under ``table`` are wrapped in an implicit ``tbody``.
    """
    b = _TableBuilder()
    try:
        b.feed(html)
        b.close()
    except Exception:
        return None
    return b.root


def _cell_rename(a: Node, b: Node) -> float:
    if a.label != b.label:
        return 1.0
    if a.label.startswith(("td", "th")):
        return edit_distance(a.text.strip(), b.text.strip())[1]
    return 0.0


def teds(pred_html: str, gt_html: str) -> float:
    gt = parse_table(gt_html)
    if gt is None:
        raise MalformedGroundTruth("ground truth contains no <table>")
    pred = parse_table(pred_html)
    if pred is None:
        return 0.0
    dist = tree_edit_distance(pred, gt, _cell_rename)
    return max(0.0, 1.0 - dist / max(pred.size(), gt.size()))


# ---------------------------------------------------------------- formulas

_TOKEN = re.compile(r"\\[A-Za-z]+|\\.|.", re.S)


def canonical_latex(s: str) -> str:
    s = re.sub(r"\s+", " ", s).strip()
    s = re.sub(r"\\(left|right)(?![A-Za-z])\s*", "", s)
    # drop braces that wrap exactly one token: x^{2} -> x^2
    s = re.sub(r"\{\s*(\\[A-Za-z]+|\\.|[^{}\\\s])\s*\}", r"\1", s)
    return s


def cdm(pred_latex: str, gt_latex: str) -> float:
    return 1.0 - edit_distance(canonical_latex(pred_latex), canonical_latex(gt_latex))[1]


FORMULA_SPAN = re.compile(r"\$\$(.+?)\$\$|\$(.+?)\$", re.S)


def formula_spans(text: str) -> list[str]:
    return [a or b for a, b in FORMULA_SPAN.findall(text)]


# ---------------------------------------------------------------- corpus evaluation

def match_elements(pred: Sequence[BoundingBox], gt: Sequence[BoundingBox], min_iou: float = 0.5
                   ) -> dict[int, tuple[int, float]]:
    """Greedy one-to-one matching by IoU; returns gt index -> (pred index, iou)."""
    pairs = sorted(((g.iou(p), gi, pi) for gi, g in enumerate(gt) for pi, p in enumerate(pred)),
                   key=lambda x: (-x[0], x[1], x[2]))
    used_g, used_p, out = set(), set(), {}
    for iou, gi, pi in pairs:
        if iou < min_iou:
            break
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        out[gi] = (pi, iou)
    return out


def _mean(xs: Sequence[float]) -> Optional[float]:
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


@dataclass
class SampleScore:
    sample_id: str
    page_ed: float
    type_accuracy: Optional[float]
    mean_iou: Optional[float]
    order_ok: bool
    text_ed: Optional[float]
    teds: Optional[float]
    cdm: Optional[float]
    n_pred: int
    n_gt: int
    parse_failures: int
    seconds: float


@dataclass
class EvalReport:
    samples: list[SampleScore]
    mean_ed: Optional[float] = None
    mean_teds: Optional[float] = None
    mean_cdm: Optional[float] = None
    mean_text_ed: Optional[float] = None
    type_accuracy: Optional[float] = None
    mean_iou: Optional[float] = None
    order_accuracy: Optional[float] = None
    fps: Optional[float] = None
    parse_failures: int = 0

    @classmethod
    def aggregate(cls, samples: list[SampleScore]) -> "EvalReport":
        secs = sum(s.seconds for s in samples)
        return cls(
            samples=samples,
            mean_ed=_mean([s.page_ed for s in samples]),
            mean_teds=_mean([s.teds for s in samples]),
            mean_cdm=_mean([s.cdm for s in samples]),
            mean_text_ed=_mean([s.text_ed for s in samples]),
            type_accuracy=_mean([s.type_accuracy for s in samples]),
            mean_iou=_mean([s.mean_iou for s in samples]),
            order_accuracy=_mean([1.0 if s.order_ok else 0.0 for s in samples]),
            fps=(len(samples) / secs) if secs > 0 else None,
            parse_failures=sum(s.parse_failures for s in samples),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        def f(x):
            return "-" if x is None else f"{x:.4f}"
        head = ["Samples", "ED", "TEDS", "CDM", "TextED", "TypeAcc", "mIoU", "Order", "FPS"]
        row = [str(len(self.samples)), f(self.mean_ed), f(self.mean_teds), f(self.mean_cdm),
               f(self.mean_text_ed), f(self.type_accuracy), f(self.mean_iou), f(self.order_accuracy),
               f(self.fps)]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        line = "+".join("-" * (w + 2) for w in widths)
        fmt = lambda cells: "|".join(f" {c:>{w}} " for c, w in zip(cells, widths))
        return "\n".join([line, fmt(head), line, fmt(row), line, f"parse failures: {self.parse_failures}"])


def score_document(sample_id: str, pred: ParsedDocument, gt: ParsedDocument) -> SampleScore:
    from .pipeline import assemble_markdown

    page_ed = edit_distance(assemble_markdown(pred), assemble_markdown(gt))[1]
    gboxes = [e.element.bbox for e in gt.elements]
    pboxes = [e.element.bbox for e in pred.elements]
    m = match_elements(pboxes, gboxes)
    type_hits, ious, text_eds, teds_scores, cdm_scores = [], [], [], [], []
    for gi, ge in enumerate(gt.elements):
        hit = m.get(gi)
        pe = pred.elements[hit[0]] if hit else None
        ious.append(hit[1] if hit else 0.0)
        type_hits.append(1.0 if pe is not None and pe.element.etype is ge.element.etype else 0.0)
        if ge.element.etype is ElementType.tab:
            teds_scores.append(teds(pe.content, ge.content) if pe is not None else 0.0)
        elif ge.element.etype is not ElementType.fig:
            text_eds.append(edit_distance(pe.content, ge.content)[1] if pe is not None else 1.0)
            gspans = formula_spans(ge.content)
            pspans = formula_spans(pe.content) if pe is not None else []
            for k, g in enumerate(gspans):
                cdm_scores.append(cdm(pspans[k], g) if k < len(pspans) else 0.0)
    matched_order = [m[gi][0] for gi in range(len(gt.elements)) if gi in m]
    order_ok = len(m) == len(gt.elements) == len(pred.elements) and matched_order == sorted(matched_order)
    return SampleScore(
        sample_id=sample_id,
        page_ed=page_ed,
        type_accuracy=_mean(type_hits),
        mean_iou=_mean(ious),
        order_ok=order_ok,
        text_ed=_mean(text_eds),
        teds=_mean(teds_scores),
        cdm=_mean(cdm_scores),
        n_pred=len(pred.elements),
        n_gt=len(gt.elements),
        parse_failures=sum(1 for e in pred.elements if e.error) + len(pred.warnings),
        seconds=(pred.timing.stage1_ms + pred.timing.stage2_ms) / 1000.0,
    )


def load_document(path: Union[str, Path], frame_size: int) -> ParsedDocument:
    """Read a ParsedDocument JSON, or a synthetic ground-truth JSON (page pixels) mapped into the frame."""
    d = json.loads(Path(path).read_text())
    if "elements" in d:
        return ParsedDocument.from_dict(d, frame_size)
    if "layout" in d:
        return ground_truth_document(d, frame_size)
    raise MalformedGroundTruth(f"{path}: neither a parsed document nor a ground-truth file")


def ground_truth_document(d: dict, frame_size: int, page_w: Optional[int] = None,
                          page_h: Optional[int] = None) -> ParsedDocument:
    from .preprocess import frame_transform_for, to_model_frame
    from .types import ContentFormat, LayoutElement, ParsedElement, content_format_for

    w = page_w or d.get("page_w") or d.get("page_size")
    h = page_h or d.get("page_h") or d.get("page_size")
    if not w or not h:
        raise MalformedGroundTruth("ground truth lacks page dimensions")
    t = frame_transform_for(w, h, frame_size)
    elements = []
    for k, e in enumerate(sorted(d["layout"], key=lambda e: e["order"])):
        etype = ElementType(e["type"])
        box = to_model_frame(e["bbox"], t)
        le = LayoutElement(etype, box, k)
        elements.append(ParsedElement(le, d["contents"][e["order"]], content_format_for(etype)))
    return ParsedDocument(w, h, t, elements)


def evaluate_corpus(pred_dir: Union[str, Path], gt_dir: Union[str, Path], frame_size: int = 256
                    ) -> EvalReport:
    """Score every ``<id>.json`` in ``gt_dir`` against the same stem in ``pred_dir``."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_files = sorted(gt_dir.glob("*.json"))
    missing = [p.stem for p in gt_files if not (pred_dir / p.name).exists()]
    if missing:
        raise MissingSample(missing)
    samples = [score_document(p.stem, load_document(pred_dir / p.name, frame_size), load_document(p, frame_size))
               for p in gt_files]
    return EvalReport.aggregate(samples)
