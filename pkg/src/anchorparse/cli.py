"""Command line: parse, train, synth, eval, overlay, check.

Exit codes: 0 success, 2 input error, 3 non-finite loss during training, 4 failed self-check.
``DOLPHIN_HOME`` sets where the default checkpoint (``model.ckpt``) and corpus (``corpus/``) live.
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("anchorparse")


class InputError(Exception):
    pass


def home() -> Path:
    return Path(os.environ.get("DOLPHIN_HOME") or Path.home() / ".anchorparse")


def default_model() -> Path:
    return home() / "model.ckpt"


def default_corpus() -> Path:
    return home() / "corpus"


def _box(s: str) -> list[int]:
    try:
        parts = [int(v) for v in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x1,y1,x2,y2 integers, got {s!r}")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected four integers, got {s!r}")
    return parts


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _load_model(path: Path):
    from .model.checkpoint import CheckpointError, load_checkpoint

    try:
        model, _ = load_checkpoint(path)
    except FileNotFoundError:
        raise InputError(f"checkpoint not found: {path}")
    except CheckpointError as e:
        raise InputError(str(e))
    return model


def _load_image(path: Path):
    from .preprocess import read_image

    try:
        return read_image(path)
    except FileNotFoundError:
        raise InputError(f"image not found: {path}")
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read image {path}: {e}")


# ---------------------------------------------------------------- subcommands

def cmd_parse(args) -> int:
    from .pipeline import Parser, PipelineConfig, assemble_markdown, overlay_svg
    from .preprocess import DegenerateImage, OutOfBounds

    model = _load_model(Path(args.model) if args.model else default_model())
    img = _load_image(Path(args.input))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parser = Parser(model, PipelineConfig(max_batch=args.max_batch, parallel=not args.sequential))
    try:
        if args.box is not None:
            text = parser.box_query(img, args.box)
            (out / "box.txt").write_text(text)
            print(json.dumps({"box": args.box, "text": text}))
            return EXIT_OK
        if args.spot:
            lines, warnings = parser.text_spot(img)
            rec = {"lines": [{"bbox": b.as_list(), "text": t} for b, t in lines]}
            if warnings:
                rec["warnings"] = [str(w) for w in warnings]
            (out / "spot.json").write_text(json.dumps(rec, indent=2))
            print(json.dumps(rec))
            return EXIT_OK
        doc = parser.parse_document(img)
    except (DegenerateImage, OutOfBounds) as e:
        raise InputError(str(e))
    (out / "doc.json").write_text(doc.to_json())
    (out / "doc.md").write_text(assemble_markdown(doc))
    (out / "overlay.svg").write_text(overlay_svg(doc, model.cfg.frame_size))
    print(json.dumps({"out": str(out), "elements": len(doc.elements), "warnings": len(doc.to_dict().get("warnings", []))}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .model.training import NonFiniteLoss
    from .synth.corpus import CorpusError
    from .train import TrainConfig, train_corpus

    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, peak_lr=args.lr, seed=args.seed,
                     page_samples=args.page_samples, jitter=not args.no_jitter)
    corpus = Path(args.corpus) if args.corpus else default_corpus()
    out = Path(args.out) if args.out else default_model()
    try:
        _, history = train_corpus(corpus, out, args.profile, tc,
                                  progress=lambda rec: print(json.dumps(rec), flush=True))
    except CorpusError as e:
        raise InputError(str(e))
    except (FileNotFoundError, json.JSONDecodeError) as e:
        raise InputError(f"corpus {corpus}: {e}")
    except NonFiniteLoss as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps({"checkpoint": str(out), "epochs": len(history)}))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth.corpus import CorpusError, gen_corpus
    from .synth.pages import SynthConfig, SynthConfigError

    try:
        cfg = SynthConfig(page_size=args.page_size, columns=args.columns, seed=args.seed,
                          formula_prob=args.formula_prob)
    except SynthConfigError as e:
        raise InputError(str(e))
    out = Path(args.out) if args.out else default_corpus()
    try:
        m = gen_corpus(cfg, args.n, out, jobs=args.jobs)
    except CorpusError as e:
        raise InputError(str(e))
    splits = [p["split"] for p in m["pages"]]
    print(json.dumps({"out": str(out), "pages": len(splits), "train": splits.count("train"),
                      "heldout": splits.count("heldout"), "config_hash": m["config_hash"]}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import MalformedGroundTruth, MissingSample, evaluate_corpus

    for d in (args.pred, args.gt):
        if not Path(d).is_dir():
            raise InputError(f"not a directory: {d}")
    try:
        report = evaluate_corpus(args.pred, args.gt, args.frame_size)
    except MissingSample as e:
        raise InputError(str(e.args[0]))
    except (MalformedGroundTruth, json.JSONDecodeError, KeyError) as e:
        raise InputError(f"bad evaluation input: {e}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json())
        out.with_suffix(".txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return EXIT_OK


def cmd_overlay(args) -> int:
    from .pipeline import overlay_svg
    from .types import ParsedDocument

    try:
        doc = ParsedDocument.from_dict(json.loads(Path(args.doc).read_text()), args.frame_size)
    except FileNotFoundError:
        raise InputError(f"document not found: {args.doc}")
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise InputError(f"cannot read document {args.doc}: {e}")
    svg = overlay_svg(doc, args.frame_size)
    if args.image:
        from .preprocess import resize_pad

        framed, _ = resize_pad(_load_image(Path(args.image)), args.frame_size)
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(framed.pixels).save(buf, format="PNG")
        uri = "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode()
        head, rest = svg.split("\n", 1)
        rest = rest.split("\n", 1)[1]  # drop the blank background
        svg = f'{head}\n<image x="0" y="0" width="{args.frame_size}" height="{args.frame_size}" href="{uri}"/>\n{rest}'
    Path(args.out).write_text(svg)
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_all

    results = run_all(args.seed, args.suite)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anchorparse", description=__doc__.split("\n")[0])
    p.add_argument("--seed", type=int, default=0, help="seed for every randomized path (default 0)")
    p.add_argument("--jobs", type=_positive, default=1, help="worker processes for corpus generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="parse a page image")
    sp.add_argument("--model", help="checkpoint (default $DOLPHIN_HOME/model.ckpt)")
    sp.add_argument("--input", required=True, help="page image (PNG/PGM/PPM)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--sequential", action="store_true", help="parse elements one at a time")
    sp.add_argument("--max-batch", type=_positive, default=16)
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--box", type=_box, help="read the text in source box x1,y1,x2,y2 only")
    mode.add_argument("--spot", action="store_true", help="detect and read all text lines")
    sp.set_defaults(fn=cmd_parse)

    sp = sub.add_parser("train", help="train a model on a synthetic corpus")
    sp.add_argument("--corpus", help="corpus directory (default $DOLPHIN_HOME/corpus)")
    sp.add_argument("--profile", choices=["desk", "micro"], default="desk")
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch-size", type=_positive, default=16)
    sp.add_argument("--lr", type=float, default=3e-3, help="peak learning rate")
    sp.add_argument("--page-samples", type=int, default=3,
                    help="page-level task draws per page per epoch (0 trains on element crops only)")
    sp.add_argument("--no-jitter", action="store_true", help="take element crops at the fixed margin")
    sp.add_argument("--out", help="checkpoint path (default $DOLPHIN_HOME/model.ckpt)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    sp.add_argument("-n", type=int, required=True, help="number of pages")
    sp.add_argument("--out", help="corpus directory (default $DOLPHIN_HOME/corpus)")
    sp.add_argument("--page-size", type=int, default=256)
    sp.add_argument("--columns", type=int, default=0, choices=[0, 1, 2], help="0 mixes one and two columns")
    sp.add_argument("--formula-prob", type=float, default=0.25)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("eval", help="score predictions against ground truth")
    sp.add_argument("--pred", required=True, help="directory of <id>.json parsed documents")
    sp.add_argument("--gt", required=True, help="directory of <id>.json ground truth")
    sp.add_argument("--out", help="report path (.json; a .txt table is written alongside)")
    sp.add_argument("--frame-size", type=int, default=256)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("overlay", help="draw a parsed document's boxes as SVG")
    sp.add_argument("--doc", required=True, help="doc.json from parse")
    sp.add_argument("--image", help="page image to draw underneath")
    sp.add_argument("--out", required=True)
    sp.add_argument("--frame-size", type=int, default=256)
    sp.set_defaults(fn=cmd_overlay)

    sp = sub.add_parser("check", help="run the self-verification suites")
    sp.add_argument("--suite", action="append", choices=["gradient", "grammar", "metrics"],
                    help="run only this suite (repeatable)")
    sp.set_defaults(fn=cmd_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.manual_seed(args.seed)
    try:
        return args.fn(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
