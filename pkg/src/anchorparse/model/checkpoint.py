"""Single-file checkpoints.

The archive is an uncompressed zip whose members all carry the timestamp 1980-01-01 00:00:00:

* ``config.json``    model configuration, keys sorted
* ``vocab.txt``      the vocabulary file, one JSON-quoted token per line
* ``manifest.json``  ``{"format": 1, "tensors": [{"name", "shape", "offset"}, ...]}``
* ``params.bin``     every tensor in manifest order as little-endian float32, C order, concatenated;
                     ``offset`` is the byte offset of the tensor within this member
* ``meta.json``      free-form training metadata (seed, epochs, corpus digest, ...)

Identical weights and metadata always produce identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from ..grammar import Vocabulary
from .config import ModelConfig
from .network import Model, Seq2Seq

FORMAT = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def checkpoint_bytes(model: Model, meta: Optional[dict] = None) -> bytes:
    tensors, blobs, offset = [], [], 0
    for name, t in model.net.state_dict().items():
        arr = t.detach().to(torch.float32).contiguous().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _member(zf, "config.json", model.cfg.to_json().encode())
        _member(zf, "vocab.txt", model.vocab.dumps().encode())
        _member(zf, "manifest.json", json.dumps({"format": FORMAT, "tensors": tensors}, sort_keys=True).encode())
        _member(zf, "params.bin", b"".join(blobs))
        _member(zf, "meta.json", json.dumps(meta or {}, sort_keys=True).encode())
    return buf.getvalue()


def save_checkpoint(model: Model, path: Union[str, Path], meta: Optional[dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, meta))
    tmp.replace(path)


def load_checkpoint(path: Union[str, Path]) -> tuple[Model, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as e:
        raise CheckpointError(f"{path}: not a checkpoint archive") from e
    with zf:
        try:
            cfg = ModelConfig.from_dict(json.loads(zf.read("config.json")))
            vocab = Vocabulary.loads(zf.read("vocab.txt").decode())
            manifest = json.loads(zf.read("manifest.json"))
            blob = zf.read("params.bin")
            meta = json.loads(zf.read("meta.json")) if "meta.json" in zf.namelist() else {}
        except KeyError as e:
            raise CheckpointError(f"{path}: missing member {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')}")
    net = Seq2Seq(cfg)
    expected = net.state_dict()
    names = [t["name"] for t in manifest["tensors"]]
    if sorted(names) != sorted(expected):
        raise CheckpointError(f"{path}: parameter names do not match the configuration")
    state = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        if shape != tuple(expected[t["name"]].shape):
            raise CheckpointError(f"{path}: {t['name']} has shape {shape}, config implies "
                                  f"{tuple(expected[t['name']].shape)}")
        n = int(np.prod(shape)) if shape else 1
        end = t["offset"] + 4 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: {t['name']} runs past the end of params.bin")
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=t["offset"]).reshape(shape)
        state[t["name"]] = torch.from_numpy(arr.astype(np.float32))
    net.load_state_dict(state)
    return Model(cfg, vocab, net), meta
