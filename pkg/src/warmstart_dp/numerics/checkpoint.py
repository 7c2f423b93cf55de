"""Parameter checkpoints: a JSON manifest naming each parameter and its
shape, plus one little-endian float64 binary blob per parameter.

Round-trips are bit-exact. The manifest carries an arbitrary ``config``
block so callers can rebuild the owning network exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

MANIFEST_NAME = "manifest.json"
_FORMAT = "warmstart-dp/params/1"


def save_checkpoint(
    path: str | Path, params: dict[str, Tensor], config: dict | None = None
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, p in params.items():
        blob = f"{name}.bin"
        p.data.astype("<f8").tofile(path / blob)
        entries.append({"name": name, "shape": list(p.data.shape), "file": blob})
    manifest = {"format": _FORMAT, "params": entries, "config": config or {}}
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], dict]:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise ContractError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != _FORMAT:
        raise ContractError(f"unrecognized checkpoint format in {manifest_path}")
    params: dict[str, Tensor] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        raw = np.fromfile(path / entry["file"], dtype="<f8")
        if raw.size != int(np.prod(shape)):
            raise ContractError(
                f"blob {entry['file']} holds {raw.size} values, expected shape {shape}"
            )
        params[entry["name"]] = Tensor(raw.reshape(shape), requires_grad=True)
    return params, manifest.get("config", {})
