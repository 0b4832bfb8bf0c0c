"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed at the end of the pytest run.
Criteria 4 to 6 use the trained desk checkpoint in ``artifacts/desk.ckpt`` and the held-out split of
the 2,000-page seed-0 corpus, regenerated in memory from the same generator.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import pytest

from anchorparse.checks import gradient_suite, grammar_suite, metric_suite
from anchorparse.grammar import decode_tokens
from anchorparse.metrics import EvalReport, edit_distance, ground_truth_document, score_document, teds
from anchorparse.model.checkpoint import checkpoint_bytes, load_checkpoint
from anchorparse.pipeline import Parser, PipelineConfig, assemble_markdown
from anchorparse.preprocess import resize_pad
from anchorparse.synth.corpus import gen_corpus, gt_record, split_of
from anchorparse.synth.pages import LayoutOverflow, SynthConfig, gen_page
from anchorparse.tasks import TaskSampler, model_layout
from anchorparse.train import TrainConfig, train_corpus
from anchorparse.types import PARAGRAPH_PROMPT, TABLE_PROMPT, ElementType, ParsedDocument, ParsedElement

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"
CHECKPOINT = ARTIFACTS / "desk.ckpt"
TRAIN_LOG = ARTIFACTS / "train_log.jsonl"
CORPUS_PAGES = 2000
CORPUS_SEED = 0

SUMMARY: list[str] = []


def record(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n} {name}: {detail}"
    SUMMARY.append(line)
    print(line)


# ---------------------------------------------------------------- shared fixtures

@pytest.fixture(scope="module")
def model():
    if not CHECKPOINT.exists():
        pytest.fail(f"trained checkpoint missing: {CHECKPOINT} (run `anchorparse train`)")
    m, meta = load_checkpoint(CHECKPOINT)
    return m, meta


@pytest.fixture(scope="module")
def heldout_pages():
    cfg = SynthConfig(seed=CORPUS_SEED)
    split = split_of(CORPUS_PAGES)
    out = []
    for i in sorted(k for k, s in split.items() if s == "heldout"):
        page, gt = gen_page(cfg, i)
        out.append((f"{i:06d}", page, gt))
    return cfg, out


@pytest.fixture(scope="module")
def heldout_run(model, heldout_pages):
    """Full two-stage parse of every held-out page, scored against ground truth."""
    m, _ = model
    _, pages = heldout_pages
    parser = Parser(m)
    docs, samples = [], []
    for pid, page, gt in pages:
        doc = parser.parse_document(page)
        ref = ground_truth_document(gt_record(page, gt), m.cfg.frame_size)
        docs.append((pid, page, gt, doc, ref))
        samples.append(score_document(pid, doc, ref))
    report = EvalReport.aggregate(samples)
    ARTIFACTS.mkdir(exist_ok=True)
    (ARTIFACTS / "heldout_report.txt").write_text(report.to_text() + "\n")
    return docs, report


# ---------------------------------------------------------------- 1-3: self-verification suites

def test_gradient_fidelity():
    r = gradient_suite(seed=0)
    ok = r.passed and r.seconds < 120
    record(1, "gradient fidelity", ok, f"{r.detail}, {r.seconds:.1f}s (limit 120s)")
    assert ok, r.detail


def test_grammar_soundness():
    r = grammar_suite(seed=0)
    ok = r.passed and r.seconds < 60
    record(2, "grammar soundness", ok, f"{r.detail}, {r.seconds:.1f}s (limit 60s)")
    assert ok, r.detail


def test_metric_oracles():
    r = metric_suite(seed=0)
    ok = r.passed and r.seconds < 300
    record(3, "metric oracles", ok, f"{r.detail}, {r.seconds:.1f}s (limit 300s)")
    assert ok, r.detail


# ---------------------------------------------------------------- 4: parallel vs sequential

def dense_pages(n: int, frame_size: int):
    """The first ``n`` generated pages that carry at least 8 elements."""
    mix = {"sec": 0.3, "para": 0.2, "cap": 0.2, "list": 0.1, "header": 0.1, "foot": 0.1}
    cfg = SynthConfig(seed=11, columns=2, min_elements=8, max_elements=9, element_mix=mix)
    out, i = [], 0
    while len(out) < n:
        try:
            page, gt = gen_page(cfg, i)
        except LayoutOverflow:
            page = None
        i += 1
        if page is not None and len(gt.layout) >= 8:
            _, t = resize_pad(page, frame_size)
            out.append((page, t, model_layout(gt, t)))
    return out


def test_parallel_matches_sequential(model):
    m, _ = model
    pages = dense_pages(50, m.cfg.frame_size)
    par = Parser(m, PipelineConfig(max_batch=16, parallel=True))
    seq = Parser(m, PipelineConfig(parallel=False))
    # the modes alternate page by page and the best of three rounds is kept, so a noisy moment on a
    # shared core does not decide the comparison
    mismatches, rounds = 0, []
    for _ in range(3):
        t_par, t_seq = 0.0, 0.0
        for page, t, layout in pages:
            t0 = time.perf_counter()
            a = par.parse_elements(page, t, layout)
            t1 = time.perf_counter()
            b = seq.parse_elements(page, t, layout)
            t2 = time.perf_counter()
            t_par += t1 - t0
            t_seq += t2 - t1
            mismatches += sum(x.content != y.content or x.error != y.error for x, y in zip(a, b))
        rounds.append((t_par, t_seq))
    t_par = min(r[0] for r in rounds)
    t_seq = min(r[1] for r in rounds)
    ratio = t_par / t_seq
    ok = mismatches == 0 and ratio <= 0.8
    n_el = sum(len(layout) for _, _, layout in pages)
    record(4, "parallel/sequential", ok,
           f"{mismatches} differing elements of {n_el} on 50 pages x 3 rounds; best parallel/sequential "
           f"time {t_par:.1f}s/{t_seq:.1f}s = {ratio:.2f} (limit 0.80)")
    assert mismatches == 0
    assert ratio <= 0.8


# ---------------------------------------------------------------- 5: desk-scale end-to-end

def test_desk_scale_end_to_end(model, heldout_pages, heldout_run):
    m, meta = model
    cfg, pages = heldout_pages
    _, report = heldout_run
    budget_ok = True
    notes = []
    if meta.get("corpus_config_hash") != cfg.digest():
        budget_ok = False
        notes.append("checkpoint was not trained on the seed-0 corpus")
    if TRAIN_LOG.exists():
        epochs = [json.loads(line) for line in TRAIN_LOG.read_text().splitlines() if line.startswith("{\"epoch")]
        hours = sum(e["seconds"] for e in epochs) / 3600
        budget_ok &= len(epochs) <= 20 and hours <= 4.0
        notes.append(f"{len(epochs)} epochs in {hours:.2f} h CPU")
    else:
        budget_ok = False
        notes.append("training log missing")
    checks = {
        "type accuracy": (report.type_accuracy, report.type_accuracy is not None and report.type_accuracy >= 0.90,
                          ">= 0.90"),
        "mean IoU": (report.mean_iou, report.mean_iou is not None and report.mean_iou >= 0.75, ">= 0.75"),
        "page ED": (report.mean_ed, report.mean_ed is not None and report.mean_ed <= 0.15, "<= 0.15"),
        "table TEDS": (report.mean_teds, report.mean_teds is not None and report.mean_teds >= 0.80, ">= 0.80"),
    }
    parts = [f"{k} {v:.4f} ({lim})" if v is not None else f"{k} n/a" for k, (v, _, lim) in checks.items()]
    ok = budget_ok and all(c[1] for c in checks.values())
    record(5, "desk-scale end-to-end", ok, f"{len(pages)} held-out pages; " + ", ".join(parts + notes))
    assert budget_ok, notes
    failed = [k for k, c in checks.items() if not c[1]]
    assert not failed, f"below target: {failed}"


# ---------------------------------------------------------------- 6: ablation directions

def box_query_document(parser: Parser, page, doc: ParsedDocument) -> ParsedDocument:
    """The same layout as ``doc``, but every element read by box query on full-page features."""
    framed, _ = resize_pad(page, parser.frame_size)
    elements = []
    for pe in doc.elements:
        text = "" if pe.element.etype is ElementType.fig else parser.box_query_framed(framed, pe.element.bbox)
        elements.append(ParsedElement(pe.element, text, pe.content_format))
    return ParsedDocument(doc.page_w, doc.page_h, doc.transform, elements)


def test_ablation_directions(model, heldout_pages, heldout_run):
    m, _ = model
    docs, _ = heldout_run
    parser = Parser(m)
    subset = docs[:50]
    crop_ed = [edit_distance(assemble_markdown(doc), assemble_markdown(ref))[1] for _, _, _, doc, ref in subset]
    box_ed = [edit_distance(assemble_markdown(box_query_document(parser, page, doc)), assemble_markdown(ref))[1]
              for _, page, _, doc, ref in subset]
    crop_mean, box_mean = sum(crop_ed) / len(crop_ed), sum(box_ed) / len(box_ed)

    sampler = TaskSampler(m.vocab, m.cfg.frame_size, m.cfg.max_seq_len)
    specific, generic = [], []
    for _, page, gt, _, _ in docs:
        for i, e in enumerate(gt.layout):
            if e.etype is not ElementType.tab:
                continue
            ex = sampler.element_example(page, gt, i, None)
            z = m.encode(ex.image)
            for prompt, scores in ((TABLE_PROMPT, specific), (PARAGRAPH_PROMPT, generic)):
                out = m.generate(prompt, z, 300)
                scores.append(teds(decode_tokens(m.vocab, out.ids), gt.contents[i]))
    spec_mean, gen_mean = sum(specific) / len(specific), sum(generic) / len(generic)
    ok = crop_mean <= box_mean and spec_mean >= gen_mean
    record(6, "ablation directions", ok,
           f"page ED cropping {crop_mean:.4f} <= box query {box_mean:.4f} on {len(subset)} pages; "
           f"table TEDS type-specific {spec_mean:.4f} >= generic {gen_mean:.4f} on {len(specific)} tables")
    assert crop_mean <= box_mean
    assert spec_mean >= gen_mean


# ---------------------------------------------------------------- 7: determinism

def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def doc_without_timing(doc: ParsedDocument) -> str:
    d = doc.to_dict()
    d.pop("timing", None)
    return json.dumps(d, sort_keys=True)


def test_determinism(model, tmp_path):
    m, _ = model
    cfg = SynthConfig(seed=5)
    corpora = []
    for k in range(2):
        gen_corpus(cfg, 12, tmp_path / f"c{k}")
        corpora.append(tree_digest(tmp_path / f"c{k}"))

    tc = TrainConfig(epochs=1, batch_size=4, warmup_steps=2, eval_elements=4, seed=3)
    ckpts = []
    for k in range(2):
        path = tmp_path / f"m{k}.ckpt"
        train_corpus(tmp_path / "c0", path, "desk", tc, max_pages=4)
        ckpts.append(hashlib.sha256(path.read_bytes()).hexdigest())

    page, _ = gen_page(SynthConfig(seed=CORPUS_SEED), 0)
    parser = Parser(m)
    parses = [doc_without_timing(parser.parse_document(page)) for _ in range(2)]
    # a freshly loaded copy of the checkpoint must parse identically too
    reloaded, _ = load_checkpoint(CHECKPOINT)
    parses.append(doc_without_timing(Parser(reloaded).parse_document(page)))
    same_bytes = checkpoint_bytes(reloaded, {}) == checkpoint_bytes(m, {})

    ok = corpora[0] == corpora[1] and ckpts[0] == ckpts[1] and len(set(parses)) == 1 and same_bytes
    record(7, "determinism", ok,
           f"corpora {'identical' if corpora[0] == corpora[1] else 'differ'}, "
           f"checkpoints {'identical' if ckpts[0] == ckpts[1] else 'differ'}, "
           f"parse outputs {'identical' if len(set(parses)) == 1 else 'differ'} over 3 runs")
    assert corpora[0] == corpora[1]
    assert ckpts[0] == ckpts[1]
    assert len(set(parses)) == 1 and same_bytes
