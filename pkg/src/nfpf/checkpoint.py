"""Flat parameter checkpoints.

A checkpoint is two files sharing a stem: ``<stem>.json`` holds the manifest
(ordered parameter names and shapes plus free-form metadata) and
``<stem>.bin`` holds every parameter value, concatenated in manifest order,
as little-endian float64.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .autodiff import Tensor
from .errors import DataError

FORMAT = "nfpf-ckpt v1"


def _paths(path) -> tuple[Path, Path]:
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bin")


def save_checkpoint(path, named_params: Iterable[tuple[str, Tensor]], meta: dict | None = None) -> None:
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks = [], []
    for name, t in named_params:
        entries.append({"name": name, "shape": list(t.shape)})
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").ravel())
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    manifest = {"format": FORMAT, "params": entries, "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    blob_path.write_bytes(flat.astype("<f8").tobytes())


def read_checkpoint(path) -> tuple[list[dict], np.ndarray, dict]:
    manifest_path, blob_path = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
        flat = np.frombuffer(blob_path.read_bytes(), dtype="<f8")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise DataError(f"{manifest_path}: not an {FORMAT} manifest")
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"])
    if expected != flat.size:
        raise DataError(f"{blob_path}: holds {flat.size} values, manifest expects {expected}")
    return manifest["params"], flat, manifest.get("meta", {})


def load_into(path, named_params: Iterable[tuple[str, Tensor]]) -> dict:
    """Copy checkpoint values into existing parameters, checking names and shapes."""
    entries, flat, meta = read_checkpoint(path)
    targets = list(named_params)
    if [e["name"] for e in entries] != [n for n, _ in targets]:
        raise DataError(f"checkpoint {path}: parameter names do not match the model")
    offset = 0
    for entry, (name, t) in zip(entries, targets):
        shape = tuple(entry["shape"])
        if shape != t.shape:
            raise DataError(f"checkpoint {path}: {name} has shape {shape}, model expects {t.shape}")
        n = int(np.prod(shape))
        t.data[...] = flat[offset : offset + n].reshape(shape)
        offset += n
    return meta
