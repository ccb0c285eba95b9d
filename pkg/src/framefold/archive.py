"""Parameter archives: a directory holding ``header.json`` plus one raw
little-endian float32 file per tensor.

Tensor files are named after the tensor's canonical path (the torch
``state_dict`` key, e.g. ``encoder.head.weight``) with a ``.f32`` suffix.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT = "framefold-params"
VERSION = 1
_DTYPE = np.dtype("<f4")


class ArchiveError(ValueError):
    pass


def save_archive(path, kind: str, arch: dict, tensors: dict[str, np.ndarray],
                 extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=_DTYPE)
        fname = f"{name}.f32"
        (path / fname).write_bytes(arr.tobytes())
        entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
    header = {"format": FORMAT, "version": VERSION, "kind": kind, "arch": arch,
              "tensors": entries, "extra": extra or {}}
    (path / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return path


def read_header(path) -> dict:
    hfile = Path(path) / "header.json"
    if not hfile.is_file():
        raise ArchiveError(f"no archive header at {hfile}")
    header = json.loads(hfile.read_text())
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise ArchiveError(f"unsupported archive format {header.get('format')!r} v{header.get('version')}")
    return header


def load_archive(path, kind: str | None = None, arch: dict | None = None):
    """Return ``(header, tensors)``; raise :class:`ArchiveError` if kind or architecture differ."""
    path = Path(path)
    header = read_header(path)
    if kind is not None and header["kind"] != kind:
        raise ArchiveError(f"archive holds {header['kind']!r} parameters, expected {kind!r}")
    if arch is not None and header["arch"] != arch:
        diff = {k: (header["arch"].get(k), v) for k, v in arch.items() if header["arch"].get(k) != v}
        raise ArchiveError(f"architecture mismatch (archive, expected): {diff or header['arch']}")
    tensors = {}
    for entry in header["tensors"]:
        raw = (path / entry["file"]).read_bytes()
        arr = np.frombuffer(raw, dtype=_DTYPE)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise ArchiveError(f"{entry['file']}: {arr.size} values for shape {shape}")
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float32)
    return header, tensors


def archive_checksum(path) -> str:
    """SHA-256 over kind, architecture and tensor bytes; the free-form ``extra`` is ignored."""
    path = Path(path)
    header = read_header(path)
    h = hashlib.sha256()
    h.update(json.dumps({"kind": header["kind"], "arch": header["arch"]}, sort_keys=True).encode())
    for entry in sorted(header["tensors"], key=lambda e: e["name"]):
        h.update(entry["name"].encode())
        h.update(json.dumps(entry["shape"]).encode())
        h.update((path / entry["file"]).read_bytes())
    return h.hexdigest()
