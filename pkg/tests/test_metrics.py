import json
import random
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorparse.checks import label_tree, mapping_distance, tree_shapes
from anchorparse.metrics import (EvalReport, MalformedGroundTruth, MissingSample, Node, canonical_latex, cdm,
                                 edit_distance, evaluate_corpus, parse_table, teds, tree_edit_distance)


def lev_oracle(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def test_edit_distance_examples():
    assert edit_distance("abc", "abc") == (0, 0.0)
    assert edit_distance("kitten", "sitting") == (3, pytest.approx(3 / 7))
    assert edit_distance("", "abcd") == (4, 1.0)
    assert edit_distance("", "") == (0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.text("abc", max_size=9), st.text("abc", max_size=9))
def test_edit_distance_matches_recursive_oracle(a, b):
    assert edit_distance(a, b)[0] == lev_oracle(a, b)


@settings(max_examples=300, deadline=None)
@given(st.text("ab", max_size=10), st.text("ab", max_size=10), st.text("ab", max_size=10))
def test_edit_distance_metric_axioms(a, b, c):
    ab = edit_distance(a, b)[0]
    assert ab == edit_distance(b, a)[0]
    assert (ab == 0) == (a == b)
    assert edit_distance(a, c)[0] <= ab + edit_distance(b, c)[0]


def test_tree_shape_counts():
    # ordered trees with n nodes are counted by the Catalan numbers C(n-1)
    assert [len(tree_shapes(n)) for n in range(1, 8)] == [1, 1, 2, 5, 14, 42, 132]


def test_tree_distance_matches_oracle_sample():
    rng = random.Random(3)
    shapes = [s for k in range(1, 7) for s in tree_shapes(k)]
    for _ in range(400):
        t1 = label_tree(rng.choice(shapes), [rng.choice("ab") for _ in range(6)])
        t2 = label_tree(rng.choice(shapes), [rng.choice("ab") for _ in range(6)])
        assert tree_edit_distance(t1, t2) == mapping_distance(t1, t2)


def test_tree_distance_textbook_case():
    # f(d(a c(b)) e) vs f(c(d(a b)) e): distance 2
    t1 = Node("f", [Node("d", [Node("a"), Node("c", [Node("b")])]), Node("e")])
    t2 = Node("f", [Node("c", [Node("d", [Node("a"), Node("b")])]), Node("e")])
    assert tree_edit_distance(t1, t2) == 2 == mapping_distance(t1, t2)


ONE_CELL = "<table><tr><td>x</td></tr></table>"


def test_teds_examples():
    assert teds(ONE_CELL, ONE_CELL) == 1.0
    assert teds("<table></table>", ONE_CELL) == pytest.approx(0.25)
    assert teds("garbage !!", ONE_CELL) == 0.0
    with pytest.raises(MalformedGroundTruth):
        teds(ONE_CELL, "no table here")


def test_table_tree_shape():
    t = parse_table('<table><thead><tr><th>a</th></tr></thead><tr><td colspan="2">b</td></tr></table>')
    assert repr(t) == "table(thead(tr(th))tbody(tr(td[colspan=2])))"
    assert t.size() == 7


def test_teds_cell_text_and_spans():
    a = "<table><tr><td>abcd</td></tr></table>"
    b = "<table><tr><td>abce</td></tr></table>"
    assert teds(a, b) == pytest.approx(1 - 0.25 / 4)
    span = '<table><tr><td colspan="2">abcd</td></tr></table>'
    assert teds(span, a) == pytest.approx(1 - 1 / 4)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.text("ab1 ", max_size=4), min_size=1, max_size=3), min_size=1, max_size=3),
       st.text(max_size=40))
def test_teds_bounds(rows, noise):
    html = "<table>" + "".join("<tr>" + "".join(f"<td>{c}</td>" for c in r) + "</tr>" for r in rows) + "</table>"
    assert teds(html, html) == 1.0
    assert 0.0 <= teds(noise + html[: len(noise) * 2], html) <= 1.0


def test_cdm_examples():
    assert cdm("\\frac{a}{b}", "\\frac{a}{b}") == 1.0
    assert cdm("x^{2}", "x^2") == 1.0
    assert cdm("a+b", "a-b") == pytest.approx(1 - 1 / 3)
    assert canonical_latex("\\left( x \\right)") == "( x )"


def _doc(elements):
    return {"page_w": 256, "page_h": 256, "elements": [
        {"type": t, "bbox": b, "order": i, "format": "Html" if t == "tab" else "PlainText", "content": c}
        for i, (t, b, c) in enumerate(elements)], "timing": {"stage1_ms": 10.0, "stage2_ms": 40.0}}


def _write(d, name, doc):
    d.mkdir(exist_ok=True)
    (d / f"{name}.json").write_text(json.dumps(doc))


def test_evaluate_identity_and_missing(tmp_path):
    gt = _doc([("sec", [0, 0, 50, 10], "1 Intro"), ("para", [0, 20, 100, 60], "Some $x^{2}$ text."),
               ("tab", [0, 70, 100, 120], ONE_CELL)])
    _write(tmp_path / "gt", "a", gt)
    _write(tmp_path / "pred", "a", gt)
    r = evaluate_corpus(tmp_path / "pred", tmp_path / "gt")
    assert r.mean_ed == 0.0 and r.mean_teds == 1.0 and r.mean_cdm == 1.0 and r.type_accuracy == 1.0
    assert r.fps == pytest.approx(1 / 0.05)
    _write(tmp_path / "gt", "b", gt)
    with pytest.raises(MissingSample) as e:
        evaluate_corpus(tmp_path / "pred", tmp_path / "gt")
    assert e.value.ids == ["b"]


def test_evaluate_matches_hand_aggregation(tmp_path):
    from anchorparse.pipeline import assemble_markdown
    from anchorparse.types import ParsedDocument

    rng = random.Random(5)
    words = ["alpha", "beta", "gamma", "delta"]
    eds, tedses = [], []
    for k in range(10):
        g_text = " ".join(rng.choice(words) for _ in range(4))
        p_text = " ".join(rng.choice(words) for _ in range(4))
        cell = rng.choice(words)
        gt = _doc([("para", [0, 0, 100, 40], g_text), ("tab", [0, 50, 100, 90], ONE_CELL)])
        pred = _doc([("para", [0, 0, 100, 40], p_text),
                     ("tab", [0, 50, 100, 90], f"<table><tr><td>{cell}</td></tr></table>")])
        _write(tmp_path / "gt", f"s{k}", gt)
        _write(tmp_path / "pred", f"s{k}", pred)
        gmd = assemble_markdown(ParsedDocument.from_dict(gt, 256))
        pmd = assemble_markdown(ParsedDocument.from_dict(pred, 256))
        eds.append(edit_distance(pmd, gmd)[1])
        tedses.append(1 - edit_distance(cell, "x")[1] / 4)
    r = evaluate_corpus(tmp_path / "pred", tmp_path / "gt")
    assert r.mean_ed == pytest.approx(sum(eds) / 10)
    assert r.mean_teds == pytest.approx(sum(tedses) / 10)
    assert [s.sample_id for s in r.samples] == [f"s{k}" for k in range(10)]
    assert "ED" in r.to_text() and json.loads(r.to_json())["mean_ed"] == pytest.approx(r.mean_ed)


def test_report_aggregate_is_mean():
    from anchorparse.metrics import SampleScore

    s = [SampleScore(str(i), i / 10, 1.0, 0.5, True, None, None, None, 1, 1, 0, 1.0) for i in range(4)]
    r = EvalReport.aggregate(s)
    assert r.mean_ed == pytest.approx(0.15) and r.fps == 1.0 and r.mean_teds is None
