"""Flat checkpoint archive with a bit-exact round-trip guarantee.

A checkpoint is a zip file holding one raw little-endian float64 blob per
named tensor plus ``manifest.json`` describing names, shapes, group tags and
any extra metadata the owner wants to carry (models store their architecture
and session-to-column map there). Blobs are written with ZIP_STORED so the
bytes on disk are exactly ``array.astype('<f8').tobytes()``.
"""
from __future__ import annotations

import json
import zipfile
from typing import Iterable

import numpy as np

from .errors import ContractError

Array = np.ndarray

FORMAT_VERSION = 1


def save_state(path, entries: Iterable[tuple[str, Array, str]],
               extra: dict | None = None) -> None:
    entries = list(entries)
    names = [name for name, _, _ in entries]
    if len(set(names)) != len(names):
        raise ContractError("duplicate tensor name in checkpoint entries")
    manifest = {
        "format_version": FORMAT_VERSION,
        "entries": [
            {"name": name, "shape": list(arr.shape), "group": group,
             "file": f"data/{i:04d}.bin"}
            for i, (name, arr, group) in enumerate(entries)
        ],
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
        for record, (_, arr, _) in zip(manifest["entries"], entries):
            zf.writestr(record["file"], np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path) -> tuple[dict[str, Array], dict[str, str], dict]:
    """Returns (name -> array, name -> group, extra)."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ContractError("unsupported checkpoint format version")
        arrays: dict[str, Array] = {}
        groups: dict[str, str] = {}
        for record in manifest["entries"]:
            raw = zf.read(record["file"])
            arr = np.frombuffer(raw, dtype="<f8").reshape(record["shape"]).copy()
            arrays[record["name"]] = arr
            groups[record["name"]] = record["group"]
    return arrays, groups, manifest.get("extra", {})
