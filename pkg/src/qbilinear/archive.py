"""Directory-based array archive.

Layout::

    <dir>/manifest.json      {"format": ..., "arrays": [...], "meta": {...}}
    <dir>/<name>.bin         one little-endian blob per array

Dense arrays are row-major, complex values are interleaved (re, im) and
sparse matrices are stored as COO records ``(row:u64, col:u64, re:f64,
im:f64)`` sorted by (row, col).  The manifest is written with sorted keys so
identical content gives identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, IoError

FORMAT_TAG = "qbilinear-archive/1"
MANIFEST = "manifest.json"

_COO_RECORD = np.dtype([("row", "<u8"), ("col", "<u8"), ("re", "<f8"), ("im", "<f8")])


def _scalar_kind(dtype) -> str:
    return "c128" if np.issubdtype(dtype, np.complexfloating) else "f64"


def _check_name(name: str) -> None:
    if not name or "/" in name or name.startswith(".") or name == "manifest":
        raise FormatError(f"invalid array name {name!r}")


def write_archive(path, arrays: dict, meta: dict | None = None) -> Path:
    """Write ``arrays`` (ndarray or scipy sparse) and JSON ``meta`` to ``path``."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create archive directory {path}: {exc}") from exc

    entries = []
    for name in sorted(arrays):
        _check_name(name)
        value = arrays[name]
        if sp.issparse(value):
            coo = sp.csr_matrix(value)
            coo.sum_duplicates()
            coo.sort_indices()
            coo = coo.tocoo()
            rec = np.empty(coo.nnz, dtype=_COO_RECORD)
            rec["row"] = coo.row
            rec["col"] = coo.col
            rec["re"] = np.real(coo.data)
            rec["im"] = np.imag(coo.data)
            blob = rec.tobytes()
            entry = {"name": name, "kind": "sparse-coo", "shape": list(coo.shape),
                     "scalar": _scalar_kind(coo.dtype), "nnz": int(coo.nnz)}
        else:
            arr = np.asarray(value)
            kind = "vector" if arr.ndim == 1 else "dense"
            if arr.ndim == 0:
                raise FormatError(f"array {name!r} is a scalar; put it in meta")
            scalar = _scalar_kind(arr.dtype)
            target = "<c16" if scalar == "c128" else "<f8"
            blob = np.ascontiguousarray(arr, dtype=target).tobytes()
            entry = {"name": name, "kind": kind, "shape": list(arr.shape), "scalar": scalar}
        try:
            (path / f"{name}.bin").write_bytes(blob)
        except OSError as exc:
            raise IoError(f"cannot write blob for {name!r}: {exc}") from exc
        entries.append(entry)

    manifest = {"format": FORMAT_TAG, "arrays": entries, "meta": meta or {}}
    text = json.dumps(manifest, sort_keys=True, indent=1)
    try:
        (path / MANIFEST).write_text(text + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest in {path}: {exc}") from exc
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    mf = path / MANIFEST
    if not mf.is_file():
        raise IoError(f"no archive at {path} (missing {MANIFEST})")
    try:
        manifest = json.loads(mf.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest {mf}: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise FormatError(f"{mf}: unknown format tag {manifest.get('format')!r}")
    return manifest


def read_archive(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; sparse entries come back as CSR matrices."""
    path = Path(path)
    manifest = read_manifest(path)
    arrays = {}
    for entry in manifest["arrays"]:
        name, kind, shape = entry["name"], entry["kind"], tuple(entry["shape"])
        blob_path = path / f"{name}.bin"
        try:
            blob = blob_path.read_bytes()
        except OSError as exc:
            raise IoError(f"missing blob {blob_path}: {exc}") from exc
        complex_ = entry["scalar"] == "c128"
        if kind == "sparse-coo":
            if len(blob) != entry["nnz"] * _COO_RECORD.itemsize:
                raise FormatError(f"blob {blob_path} has wrong size")
            rec = np.frombuffer(blob, dtype=_COO_RECORD)
            data = rec["re"] + 1j * rec["im"] if complex_ else rec["re"].copy()
            arrays[name] = sp.csr_matrix(
                (data, (rec["row"].astype(np.int64), rec["col"].astype(np.int64))), shape=shape)
        elif kind in ("dense", "vector"):
            dtype = np.dtype("<c16" if complex_ else "<f8")
            expected = int(np.prod(shape)) * dtype.itemsize
            if len(blob) != expected:
                raise FormatError(f"blob {blob_path} holds {len(blob)} bytes, expected {expected}")
            arrays[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).astype(
                complex if complex_ else float)
        else:
            raise FormatError(f"unknown array kind {kind!r} for {name!r}")
    return arrays, manifest.get("meta", {})


def archive_exists(path) -> bool:
    return os.path.isfile(os.path.join(path, MANIFEST))
