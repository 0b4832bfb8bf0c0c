"""On-disk corpora: page images, ground truth, element crops and a manifest.

Layout of ``out_dir``::

    manifest.json
    pages/000000.png      gt/000000.json      elements/000000_00.png ...

Pages are split 90/10 into train/heldout by ranking the SHA-256 of each index; the heldout split is
the ``round(n / 10)`` lowest-ranked indices.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Union

from ..preprocess import PageImage, write_png
from ..tasks import CROP_MARGIN
from .pages import GroundTruth, SynthConfig, gen_page

MANIFEST = "manifest.json"


class CorpusError(ValueError):
    pass


def split_of(n: int) -> dict[int, str]:
    ranked = sorted(range(n), key=lambda i: hashlib.sha256(str(i).encode()).hexdigest())
    held = set(ranked[: round(n / 10)])
    return {i: ("heldout" if i in held else "train") for i in range(n)}


def page_id(index: int) -> str:
    return f"{index:06d}"


def element_crop(page: PageImage, box: list[int], margin: int = CROP_MARGIN) -> PageImage:
    x1, y1, x2, y2 = box
    x1, y1 = max(0, x1 - margin), max(0, y1 - margin)
    x2, y2 = min(page.width, x2 + margin), min(page.height, y2 + margin)
    return PageImage(page.pixels[y1:y2, x1:x2].copy())


def gt_record(page: PageImage, gt: GroundTruth) -> dict:
    d = gt.to_dict()
    d["page_w"], d["page_h"] = page.width, page.height
    return d


def _write_page(args) -> dict:
    cfg, index, out = args
    out = Path(out)
    pid = page_id(index)
    page, gt = gen_page(cfg, index)
    rec = gt_record(page, gt)
    try:
        write_png(page, out / "pages" / f"{pid}.png")
        (out / "gt" / f"{pid}.json").write_text(json.dumps(rec, sort_keys=True))
        elements = []
        for k, e in enumerate(rec["layout"]):
            name = f"elements/{pid}_{k:02d}.png"
            write_png(element_crop(page, e["bbox"]), out / name)
            elements.append({"image": name, "type": e["type"], "order": e["order"]})
    except OSError as e:
        raise CorpusError(f"cannot write corpus file {e.filename}: {e.strerror}") from e
    return {"id": pid, "index": index, "image": f"pages/{pid}.png", "gt": f"gt/{pid}.json", "elements": elements}


def gen_corpus(cfg: SynthConfig, n: int, out_dir: Union[str, Path], jobs: int = 1) -> dict:
    out = Path(out_dir)
    try:
        for sub in ("pages", "gt", "elements"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f"cannot create {e.filename}: {e.strerror}") from e
    work = [(cfg, i, str(out)) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            pages = list(pool.map(_write_page, work, chunksize=max(1, n // (4 * jobs))))
    else:
        pages = [_write_page(w) for w in work]
    splits = split_of(n)
    for p in pages:
        p["split"] = splits[p["index"]]
    manifest = {
        "format": 1,
        "seed": cfg.seed,
        "n": n,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "pages": pages,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def load_manifest(corpus_dir: Union[str, Path]) -> dict:
    path = Path(corpus_dir) / MANIFEST
    try:
        m = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise CorpusError(f"no manifest at {path}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorpusError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(m, dict) or not isinstance(m.get("pages"), list) or "config" not in m:
        raise CorpusError(f"{path}: missing pages or config")
    for p in m["pages"]:
        if not isinstance(p, dict) or not {"id", "image", "gt", "split"} <= set(p):
            raise CorpusError(f"{path}: malformed page entry {p!r:.80}")
        if p["split"] not in ("train", "heldout"):
            raise CorpusError(f"{path}: unknown split {p['split']!r}")
    try:
        cfg = SynthConfig.from_dict(m["config"])
    except (TypeError, ValueError) as e:
        raise CorpusError(f"{path}: invalid config ({e})") from e
    if cfg.digest() != m.get("config_hash"):
        raise CorpusError(f"{path}: config hash does not match config")
    return m


def load_page(corpus_dir: Union[str, Path], entry: dict) -> tuple[PageImage, GroundTruth, dict]:
    from ..preprocess import read_image

    root = Path(corpus_dir)
    page = read_image(root / entry["image"])
    rec = json.loads((root / entry["gt"]).read_text())
    size = max(page.width, page.height)
    return page, GroundTruth.from_dict(rec, size), rec
