"""Archive persistence for bilinear systems, reduction results and run manifests.

A system archive stores ``A``, ``N_k``, ``b``, ``C``, ``D_q``, ``x_e``, ``x0``
and ``y_offset``; the rest (kind, labels, field scale, builder metadata) goes
into the archive manifest.  Each stage additionally drops a
``run_manifest.json`` next to its archive; it carries timestamps and is kept
out of the archive proper so the archive bytes stay reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import archive
from .errors import FormatError, IoError
from .system import BilinearSystem

RUN_MANIFEST = "run_manifest.json"
STAGE_PRODUCERS = {
    "bound": "bound",
    "tise": "matrix",
    "tdse": "abncd",
    "lvne": "abncd",
    "lvne_b": "balance",
    "lvne_t": "truncate",
    "lvne_h": "h2model",
}


def tool_version() -> str:
    from . import __version__

    return __version__


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return repr(value)


# --- bilinear systems ----------------------------------------------------------


def export_system(system: BilinearSystem, path, extra: dict | None = None,
                  extra_meta: dict | None = None) -> Path:
    arrays = {"A": system.A, "b": system.b, "C": system.C, "x_e": system.x_e, "x0": system.x0,
              "y_offset": system.y_offset}
    for k, Nk in enumerate(system.N):
        arrays[f"N_{k}"] = Nk
    for q, Dq in enumerate(system.D):
        arrays[f"D_{q}"] = sp.csr_matrix(Dq)
    arrays.update(extra or {})
    meta = {"stage": system.kind, "kind": system.kind, "n_controls": system.n_controls,
            "n_D": len(system.D), "labels": list(system.labels), "xi": float(system.xi),
            "system_meta": _jsonable(system.meta)}
    meta.update(_jsonable(extra_meta or {}))
    return archive.write_archive(path, arrays, meta)


def _system_from(arrays: dict, meta: dict, path) -> BilinearSystem:
    if "A" not in arrays:
        raise FormatError(f"{path}: archive has no A matrix")
    A = sp.csr_matrix(arrays["A"])
    n = A.shape[0]
    if A.shape != (n, n):
        raise FormatError(f"{path}: A must be square, got {A.shape}")
    m = meta.get("n_controls")
    if m is None:
        m = len([k for k in arrays if k.startswith("N_")])
    if m < 1:
        raise FormatError(f"{path}: archive needs at least one N matrix")
    try:
        N = [sp.csr_matrix(arrays[f"N_{k}"]) for k in range(m)]
    except KeyError as exc:
        raise FormatError(f"{path}: missing control matrix {exc}") from exc
    for k, Nk in enumerate(N):
        if Nk.shape != (n, n):
            raise FormatError(f"{path}: N_{k} has shape {Nk.shape}, A is {A.shape}")
    x_e = np.asarray(arrays.get("x_e", np.zeros(n)), dtype=complex)
    if x_e.shape != (n,):
        raise FormatError(f"{path}: x_e has length {x_e.shape}, expected {n}")
    b = arrays.get("b")
    if b is None:
        b = np.array([Nk @ x_e for Nk in N])
    b = np.asarray(b, dtype=complex)
    if b.size != m * n:
        raise FormatError(f"{path}: b has {b.size} entries, expected {m}x{n}")
    C = np.asarray(arrays.get("C", np.zeros((0, n))), dtype=complex)
    if C.ndim == 1:
        C = C[None, :]
    if C.shape[1:] != (n,):
        raise FormatError(f"{path}: C has shape {C.shape}, expected (p, {n})")
    D = [np.asarray(sp.csr_matrix(arrays[f"D_{q}"]).toarray())
         for q in range(meta.get("n_D", 0))]
    x0 = np.asarray(arrays.get("x0", np.zeros(n)), dtype=complex)
    if x0.shape != (n,):
        raise FormatError(f"{path}: x0 has length {x0.shape}, expected {n}")
    y_offset = arrays.get("y_offset")
    kind = meta.get("kind", "external")
    labels = meta.get("labels") or [f"y{q}" for q in range(len(D) if kind == "tdse" else C.shape[0])]
    return BilinearSystem(kind, A, N, b, C, D, x_e, x0, labels=list(labels),
                          y_offset=None if y_offset is None else np.asarray(y_offset, float),
                          xi=float(meta.get("xi", 1.0)), meta=dict(meta.get("system_meta", {})))


def import_system(path) -> BilinearSystem:
    """Load a system archive written by :func:`export_system`."""
    arrays, meta = archive.read_archive(path)
    return _system_from(arrays, meta, path)


def import_external_system(path, tol: float = 1e-8) -> BilinearSystem:
    """Load ``A``, ``N_k`` (and optionally ``b``, ``C``, ``x_e``, ``x0``) produced elsewhere.

    Without ``x_e`` the equilibrium is taken as zero.  A supplied ``x_e``
    must satisfy ``A x_e ~ 0``.
    """
    arrays, meta = archive.read_archive(path)
    meta = {**meta, "kind": meta.get("kind", "external")}
    system = _system_from(arrays, meta, path)
    if "x_e" in arrays:
        scale = max(1.0, float(abs(system.A).max()) * float(np.linalg.norm(system.x_e)))
        if system.equilibrium_residual() > tol * scale:
            raise FormatError(f"{path}: supplied x_e is not an equilibrium "
                              f"(|A x_e| = {system.equilibrium_residual():.3e})")
    return system


# --- run manifests ----------------------------------------------------------------


def archive_hash(path) -> str:
    """SHA-256 over the manifest and blobs of an archive directory."""
    path = Path(path)
    manifest = archive.read_manifest(path)
    h = hashlib.sha256((path / archive.MANIFEST).read_bytes())
    for entry in manifest["arrays"]:
        h.update((path / f"{entry['name']}.bin").read_bytes())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    text = json.dumps(_jsonable(config), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunManifest:
    stage: str
    inputs: dict = field(default_factory=dict)  # archive path -> sha256
    config_hash: str = ""
    tool_version: str = field(default_factory=tool_version)
    started: float = 0.0
    finished: float = 0.0

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / RUN_MANIFEST
        try:
            path.write_text(json.dumps(asdict(self), sort_keys=True, indent=1) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, out_dir) -> "RunManifest":
        path = Path(out_dir) / RUN_MANIFEST
        try:
            return cls(**json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"unreadable run manifest {path}: {exc}") from exc


def start_manifest(stage: str, inputs=(), config: dict | None = None) -> RunManifest:
    return RunManifest(stage, {str(p): archive_hash(p) for p in inputs},
                       config_hash(config or {}), started=time.time())


def require_archive(path, name: str) -> Path:
    """Fail with a message naming the stage that should have produced ``name``."""
    path = Path(path)
    if not archive.archive_exists(path):
        producer = STAGE_PRODUCERS.get(name, "an earlier stage")
        raise IoError(f"missing archive {path}: run the '{producer}' subcommand first")
    return path


# --- stabilized systems and reduction results ------------------------------------


def export_stabilized(src, path) -> Path:
    """Stable system plus split projectors; the original goes into ``original/``."""
    from .reduction import Shift

    extra, meta = {}, {"stabilization": "none"}
    if isinstance(src.method, Shift):
        meta = {"stabilization": "shift", "shift": src.method.alpha}
    elif src.S1 is not None:
        extra = {"S1": src.S1, "T1": src.T1, "S2": src.S2, "T2": src.T2,
                 "removed_eigenvalues": np.asarray(src.removed_eigenvalues, complex)}
        meta = {"stabilization": "split", "M": src.M}
    out = export_system(src.system, path, extra, meta)
    export_system(src.original, Path(path) / "original")
    return out


def import_stabilized(path):
    from .reduction import Shift, SplitUnstable, StabilizedSystem

    arrays, meta = archive.read_archive(path)
    system = _system_from(arrays, meta, path)
    original = import_system(Path(path) / "original")
    kind = meta.get("stabilization", "none")
    if kind == "shift":
        return StabilizedSystem(system, Shift(meta["shift"]), original)
    if kind == "split":
        return StabilizedSystem(system, SplitUnstable(meta["M"]), original, arrays["S1"],
                                arrays["T1"], arrays["S2"], arrays["T2"],
                                arrays["removed_eigenvalues"])
    return StabilizedSystem(system, None, original)


def export_reduction(result, path) -> Path:
    """Top level: the model to simulate (re-embedded if a split was used).

    ``stable/`` holds the stable reduced model, ``source/`` the stabilized
    full-order system it was computed from.
    """
    path = Path(path)
    extra = {"S": result.S, "T": result.T}
    if result.hsv is not None:
        extra["hsv"] = np.asarray(result.hsv, float)
    top = result.reduced if result.reduced is not None else result.stable
    export_system(top, path, extra, {"reduction": result.method, "info": result.info})
    export_system(result.stable, path / "stable")
    if result.source is not None:
        export_stabilized(result.source, path / "source")
    return path


def import_reduction(path):
    from .reduction import ReductionResult

    path = Path(path)
    arrays, meta = archive.read_archive(path)
    top = _system_from(arrays, meta, path)
    stable = import_system(path / "stable")
    source = import_stabilized(path / "source") if archive.archive_exists(path / "source") else None
    reduced = None if top.dim == stable.dim and source is not None and source.M == 0 else top
    return ReductionResult(arrays["S"], arrays["T"], arrays.get("hsv"), stable,
                           meta.get("reduction", ""), source, reduced, meta.get("info", {}))


def stable_view(path) -> BilinearSystem:
    """The stable system stored in a reduction archive, else the archive's system."""
    path = Path(path)
    if archive.archive_exists(path / "stable"):
        return import_system(path / "stable")
    return import_system(path)
