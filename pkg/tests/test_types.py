import json

import pytest

from anchorparse.types import (PARAGRAPH_PROMPT, TABLE_PROMPT, BoundingBox, ContentFormat, ElementType,
                               InvalidBox, LayoutElement, LayoutSequence, ParsedDocument, ParsedElement, Prompt,
                               PromptKind, StageTiming, UnknownElementType, element_type_parse, prompt_for)


def test_fifteen_types_round_trip():
    assert len(ElementType) == 15
    for t in ElementType:
        assert element_type_parse(str(t)) is t


def test_type_examples():
    assert element_type_parse("tab") is ElementType.tab
    assert element_type_parse("para") is ElementType.para
    with pytest.raises(UnknownElementType):
        element_type_parse("formula")


def test_prompt_routing():
    assert prompt_for(ElementType.tab) == Prompt(PromptKind.Table, "Parse the table in the image.")
    assert prompt_for(ElementType.para) == Prompt(PromptKind.Paragraph, "Read text in the image.")
    assert prompt_for(ElementType.fig) is PARAGRAPH_PROMPT
    assert {prompt_for(t).kind for t in ElementType} == {PromptKind.Table, PromptKind.Paragraph}


def test_prompt_strings():
    assert Prompt.of(PromptKind.Layout).text == "Parse the reading order of this document."
    assert Prompt.of(PromptKind.Spotting).text == "Detect and recognize all the text lines in the image."
    assert Prompt.box_query(1, 2, 30, 40).text == "Read the text in the image within the specified box [1,2,30,40]."


@pytest.mark.parametrize("box", [(5, 0, 5, 10), (0, 0, 10, 900), (-1, 0, 4, 4), (3, 4, 2, 8)])
def test_invalid_boxes(box):
    with pytest.raises(InvalidBox):
        BoundingBox(*box)


def test_box_geometry():
    a = BoundingBox(0, 0, 10, 10)
    b = BoundingBox(5, 0, 15, 10)
    assert a.area == 100
    assert a.iou(b) == pytest.approx(50 / 150)
    assert a.iou(a) == 1.0
    assert BoundingBox(3, 3, 5, 5, 8).dilate(4) == BoundingBox(0, 0, 8, 8, 8)


def test_layout_sequence_order_invariant():
    e0 = LayoutElement(ElementType.sec, BoundingBox(0, 0, 5, 5), 0)
    e2 = LayoutElement(ElementType.para, BoundingBox(0, 6, 5, 9), 2)
    with pytest.raises(ValueError):
        LayoutSequence((e0, e2))
    seq = LayoutSequence.from_items([(ElementType.sec, BoundingBox(0, 0, 5, 5)),
                                     (ElementType.para, BoundingBox(0, 6, 5, 9))])
    assert [e.order_index for e in seq] == [0, 1]


def test_content_format_invariant():
    el = LayoutElement(ElementType.tab, BoundingBox(0, 0, 5, 5), 0)
    with pytest.raises(ValueError):
        ParsedElement(el, "<table></table>", ContentFormat.PlainText)
    assert ParsedElement(el, "<table></table>", ContentFormat.Html).content_format is ContentFormat.Html


def test_document_json_schema():
    el = ParsedElement(LayoutElement(ElementType.para, BoundingBox(1, 2, 30, 40), 0), "Hello.", ContentFormat.PlainText)
    doc = ParsedDocument(100, 50, None, [el], StageTiming(1.5, 2.5, 1, 1))
    d = json.loads(doc.to_json())
    assert set(d) == {"page_w", "page_h", "elements", "timing"}
    assert d["elements"] == [{"type": "para", "bbox": [1, 2, 30, 40], "order": 0, "format": "PlainText",
                              "content": "Hello."}]
    assert d["timing"] == {"stage1_ms": 1.5, "stage2_ms": 2.5}
    back = ParsedDocument.from_dict(d)
    assert back.elements == doc.elements
