"""Deterministic on-disk formats: array container, JSON and manifests.

The array container is a single self-describing file:

    line 1:  ``gpcd-arrays <version>\\n`` (ASCII)
    line 2:  ``<header-length>\\n`` (ASCII decimal)
    header:  UTF-8 JSON with ``meta`` (free-form) and ``arrays`` (name ->
             {dtype, shape}) in insertion order
    body:    raw little-endian C-order buffers concatenated in header order

Unlike zip-based containers the byte stream carries no timestamps, so equal
content hashes equal. JSON files are written with sorted keys and a trailing
newline for the same reason.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ModelFormatError

_MAGIC = "gpcd-arrays"
FORMAT_VERSION = 1


def save_arrays(path, meta: dict, arrays: dict) -> Path:
    """Write a metadata header plus named float/int/bool arrays."""
    path = Path(path)
    spec = {}
    buffers = []
    # Buffers follow the header's sorted key order so reading never depends
    # on dict insertion order.
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
        elif arr.dtype.kind == "b":
            arr = arr.astype("<i1")
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
        spec[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape)}
        buffers.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": spec}, sort_keys=True)
    header_bytes = header.encode("utf-8")
    with path.open("wb") as fh:
        fh.write(f"{_MAGIC} {FORMAT_VERSION}\n".encode("ascii"))
        fh.write(f"{len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        for buf in buffers:
            fh.write(buf)
    return path


def load_arrays(path):
    """Read a container written by :func:`save_arrays`.

    Returns ``(meta, arrays)``; rejects unknown magic or version with
    :class:`ModelFormatError`.
    """
    path = Path(path)
    with path.open("rb") as fh:
        first = fh.readline().decode("ascii", errors="replace").strip()
        parts = first.split()
        if len(parts) != 2 or parts[0] != _MAGIC:
            raise ModelFormatError(f"{path} is not a gpcd array container")
        if int(parts[1]) != FORMAT_VERSION:
            raise ModelFormatError(
                f"{path} has container version {parts[1]}, "
                f"expected {FORMAT_VERSION}"
            )
        header_len = int(fh.readline().decode("ascii").strip())
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for name in sorted(header["arrays"]):
            spec = header["arrays"][name]
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ModelFormatError(f"{path} is truncated at array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return header["meta"], arrays


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def update_manifest(out_dir, entries: dict) -> Path:
    """Record files (paths relative to ``out_dir``) and their hashes.

    Every file a pipeline stage reads or writes gets hash-listed here;
    existing entries for other files are preserved.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    manifest = read_json(manifest_path) if manifest_path.exists() else {"files": {}}
    for rel, path in entries.items():
        manifest["files"][rel] = sha256_file(path)
    write_json(manifest_path, manifest)
    return manifest_path
