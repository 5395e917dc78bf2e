"""On-disk tensor container: a JSON manifest plus one packed payload.

A container is a directory holding `manifest.json` (entry name -> dtype,
shape, offset, byte count; plus a payload hash and free-form metadata) and
`payload.bin` (the raw little-endian bytes, entries concatenated in sorted
name order). The manifest is plain JSON with sorted keys and no timestamps,
so identical tensors produce byte-identical containers; that property is what
the bitwise-determinism guarantees for checkpoints and caches rest on.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "payload.bin"
FORMAT_TAG = "affground-container"
FORMAT_VERSION = 1


def write_container(path: str | Path, entries: dict[str, np.ndarray],
                    meta: dict | None = None, dtype: str = "<f4") -> str:
    """Write entries (converted to dtype) and return the payload hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    target = np.dtype(dtype)
    manifest_entries: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(entries):
        arr = np.ascontiguousarray(np.asarray(entries[name]), dtype=target)
        raw = arr.tobytes()
        manifest_entries[name] = {
            "dtype": target.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "entries": manifest_entries,
        "payload_sha256": digest,
        "meta": meta or {},
    }
    (path / PAYLOAD_NAME).write_bytes(payload)
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return digest


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.is_file():
        raise DataError(f"no manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable manifest at {mpath}: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise DataError(f"{mpath} is not a {FORMAT_TAG} manifest")
    return manifest


def _check_bounds(name: str, info: dict, payload_size: int) -> None:
    end = info["offset"] + info["nbytes"]
    if end > payload_size:
        raise DataError(
            f"entry '{name}' extends to byte {end} but payload has {payload_size}")
    expected = int(np.prod(info["shape"], dtype=np.int64)) * np.dtype(info["dtype"]).itemsize
    if expected != info["nbytes"]:
        raise DataError(
            f"entry '{name}' declares shape {info['shape']} ({expected} bytes) "
            f"but {info['nbytes']} stored bytes")


def read_entry(path: str | Path, name: str) -> np.ndarray:
    """Read one entry in its stored dtype without loading the whole payload."""
    path = Path(path)
    manifest = read_manifest(path)
    info = manifest["entries"].get(name)
    if info is None:
        raise DataError(f"no entry '{name}' in {path}")
    ppath = path / PAYLOAD_NAME
    if not ppath.is_file():
        raise DataError(f"no payload at {ppath}")
    _check_bounds(name, info, ppath.stat().st_size)
    with open(ppath, "rb") as fh:
        fh.seek(info["offset"])
        raw = fh.read(info["nbytes"])
    if len(raw) != info["nbytes"]:
        raise DataError(f"entry '{name}' truncated on disk")
    return np.frombuffer(raw, dtype=np.dtype(info["dtype"])).reshape(info["shape"]).copy()


def read_container(path: str | Path, verify: bool = True):
    """Read all entries (stored dtypes preserved) and the metadata dict."""
    path = Path(path)
    manifest = read_manifest(path)
    ppath = path / PAYLOAD_NAME
    if not ppath.is_file():
        raise DataError(f"no payload at {ppath}")
    payload = ppath.read_bytes()
    if verify:
        digest = hashlib.sha256(payload).hexdigest()
        if digest != manifest["payload_sha256"]:
            raise DataError(f"payload hash mismatch in {path}")
    entries = {}
    for name, info in manifest["entries"].items():
        _check_bounds(name, info, len(payload))
        raw = payload[info["offset"]:info["offset"] + info["nbytes"]]
        entries[name] = np.frombuffer(
            raw, dtype=np.dtype(info["dtype"])).reshape(info["shape"]).copy()
    return entries, manifest.get("meta", {})


def container_hash(path: str | Path) -> str:
    return read_manifest(path)["payload_sha256"]
