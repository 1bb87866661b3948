"""Versioned checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then every tensor as little-endian float64 in header order. The header keeps
the config hash, free-form metadata and per-tensor shape and freeze flag.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Tuple

import numpy as np

from autodiff.tensor import Parameter
from errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CMGCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    frozen: Dict[str, bool]
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    def section(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {name[cut:]: v for name, v in self.tensors.items() if name.startswith(prefix + ".")}


def save_checkpoint(path, params: Iterable[Tuple[str, Parameter]], config_hash: str = "",
                    metadata: dict = None) -> None:
    entries = []
    payload = []
    offset = 0
    for name, p in params:
        data = np.ascontiguousarray(p.value, dtype="<f8")
        entries.append({
            "name": name,
            "shape": list(data.shape),
            "frozen": bool(p.frozen),
            "offset": offset,
        })
        payload.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({
        "version": VERSION,
        "config_hash": config_hash,
        "metadata": metadata or {},
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for chunk in payload:
            f.write(chunk)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(entries))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (length,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")

    body = raw[16 + length:]
    tensors, frozen = {}, {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(body):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(body[start:end], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        frozen[entry["name"]] = entry["frozen"]
    return Checkpoint(tensors, frozen, header.get("config_hash", ""), header.get("metadata", {}))
