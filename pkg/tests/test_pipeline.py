import numpy as np
import pytest

from anchorparse.model.config import desk_profile
from anchorparse.model.network import Model
from anchorparse.pipeline import (Parser, PipelineConfig, assemble_markdown, expected_batches, overlay_svg)
from anchorparse.preprocess import OutOfBounds, PageImage, frame_transform_for
from anchorparse.synth.pages import SynthConfig, gen_page
from anchorparse.tasks import model_layout
from anchorparse.types import (BoundingBox, ContentFormat, ElementType, LayoutElement, LayoutSequence, ParsedDocument,
                               ParsedElement, StageTiming)


def _doc(items):
    els = []
    for i, (t, c) in enumerate(items):
        et = ElementType(t)
        fmt = ContentFormat.Html if et is ElementType.tab else ContentFormat.PlainText
        els.append(ParsedElement(LayoutElement(et, BoundingBox(0, i, 10, i + 1, 256), i), c, fmt))
    return ParsedDocument(256, 256, None, els)


def test_markdown_examples():
    assert assemble_markdown(_doc([("sec", "Intro"), ("para", "Hello.")])) == "## Intro\n\nHello."
    html = "<table><tr><td>1</td></tr></table>"
    assert assemble_markdown(_doc([("tab", html)])) == html
    assert assemble_markdown(_doc([("watermark", "DRAFT")])) == ""
    md = assemble_markdown(_doc([("title", "T"), ("sub_sec", "S"), ("alg", "x = 1"), ("fig", ""), ("header", "H"),
                                 ("foot", "F"), ("author", "A"), ("cap", "C")]))
    assert md == "# T\n\n### S\n\n```\nx = 1\n```\n\n![fig](#)\n\nA\n\nC"


def test_markdown_follows_order_index():
    doc = _doc([("para", "one"), ("para", "two"), ("para", "three")])
    perm = [2, 0, 1]
    els = [ParsedElement(LayoutElement(e.element.etype, e.element.bbox, perm[i]), e.content, e.content_format)
           for i, e in enumerate(doc.elements)]
    shuffled = ParsedDocument(256, 256, None, els)
    assert assemble_markdown(shuffled).split("\n\n") == ["two", "three", "one"]


def test_batch_accounting():
    assert expected_batches(35, PipelineConfig(max_batch=16)) == 3
    assert expected_batches(35, PipelineConfig(max_batch=16, parallel=False)) == 35
    with pytest.raises(ValueError):
        PipelineConfig(max_batch=0)


@pytest.fixture(scope="module")
def desk_parser(vocab):
    return Model(desk_profile(len(vocab)), vocab)


@pytest.fixture(scope="module")
def synth_page():
    cfg = SynthConfig(seed=21, columns=1, element_mix={"para": 0.4, "sec": 0.3, "tab": 0.3}, min_elements=5,
                      max_elements=5, blank_prob=0.0)
    page, gt = gen_page(cfg, 0)
    t = frame_transform_for(page.width, page.height, 256)
    return page, t, model_layout(gt, t)


def _parse(model, page, t, seq, **kw):
    cfg = PipelineConfig(max_element_len=12, **kw)
    timing = StageTiming()
    out = Parser(model, cfg).parse_elements(page, t, seq, timing)
    return out, timing


def test_parallel_equals_sequential(desk_parser, synth_page):
    page, t, seq = synth_page
    par, tp = _parse(desk_parser, page, t, seq, max_batch=2)
    seqo, ts = _parse(desk_parser, page, t, seq, parallel=False)
    assert [e.content for e in par] == [e.content for e in seqo]
    assert [e.element for e in par] == list(seq)
    assert tp.n_batches == 3 and ts.n_batches == len(seq) == 5


def test_max_batch_one_is_sequential(desk_parser, synth_page):
    page, t, seq = synth_page
    one, timing = _parse(desk_parser, page, t, seq, max_batch=1)
    assert timing.n_batches == len(seq)


def test_error_isolation(desk_parser, synth_page):
    page, t, seq = synth_page
    small = PageImage(page.pixels[:100])  # the last elements now fall outside the page
    out, _ = _parse(desk_parser, small, t, seq)
    errs = [e for e in out if e.error and "OutOfBounds" in e.error]
    assert errs and len(out) == len(seq)
    assert all(e.content == "" for e in errs)


def test_empty_layout(desk_parser, synth_page):
    page, t, _ = synth_page
    out, timing = _parse(desk_parser, page, t, LayoutSequence(()))
    assert out == [] and timing.n_batches == 0


def test_box_query_bounds(desk_parser, synth_page):
    page, _, _ = synth_page
    p = Parser(desk_parser, PipelineConfig(max_element_len=5))
    with pytest.raises(OutOfBounds):
        p.box_query(page, (10, 10, 10, 40))
    with pytest.raises(OutOfBounds):
        p.box_query(page, (0, 0, 300, 40))
    assert isinstance(p.box_query(page, (0, 0, 100, 40)), str)


def test_document_and_overlay(desk_parser, synth_page):
    page, _, _ = synth_page
    doc = Parser(desk_parser, PipelineConfig(max_layout_len=20, max_element_len=5)).parse_document(page)
    assert doc.page_w == page.width and doc.timing.stage1_ms > 0
    svg = overlay_svg(doc, 256)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    lines, warnings = Parser(desk_parser, PipelineConfig(max_layout_len=10)).text_spot(page)
    assert isinstance(lines, list)
