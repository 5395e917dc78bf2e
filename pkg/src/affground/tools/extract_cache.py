"""Pack a directory tree of .npy feature dumps into a cache container.

The expected layout mirrors the cache key scheme: each array lives at
<key>.npy with slashes as directories (ego/<id>/dino.npy, text/<action>/
action.npy, ...), plus an optional meta.json at the root. Whatever produced
the dumps (a frozen backbone, a notebook, another run) stays outside this
package; only the file contract is shared.
"""

import json
from pathlib import Path

import numpy as np

from .. import container
from ..errors import InputError


def build_cache(src: str | Path, out: str | Path,
                dtype: str = "<f4") -> tuple[int, str]:
    """Returns (number of arrays packed, payload hash)."""
    src = Path(src)
    if not src.is_dir():
        raise InputError(f"feature dump directory not found: {src}")
    entries = {}
    for path in sorted(src.rglob("*.npy")):
        key = path.relative_to(src).with_suffix("").as_posix()
        entries[key] = np.load(path)
    if not entries:
        raise InputError(f"no .npy files under {src}")
    meta = {}
    meta_path = src / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if not isinstance(meta, dict):
            raise InputError(f"{meta_path} must hold a JSON object")
    digest = container.write_container(out, entries, meta=meta, dtype=dtype)
    return len(entries), digest
