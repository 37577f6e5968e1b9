"""Checkpoint container: JSON header plus named DAFA tensors (see docs/checkpoint.md)."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from dysaug.archive import decode_dafa, encode_dafa
from dysaug.errors import ArchiveError
from dysaug.models import Discriminator, GeneratorModel

MAGIC = b"DACK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def roster_hash(roster) -> str:
    return hashlib.sha256("\n".join(roster).encode("utf-8")).hexdigest()[:16]


def _as_matrix(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().numpy()
    if a.ndim == 2:
        return a
    return a.reshape(1, -1)


def _disc_hidden(discriminators) -> int | None:
    widths = {d.hidden_dim for d in (discriminators or {}).values()}
    if len(widths) > 1:
        raise ArchiveError("discriminators must share one hidden width")
    return widths.pop() if widths else None


def save_checkpoint(
    path: str | Path,
    model: GeneratorModel,
    discriminators: Mapping[str, Discriminator] | None = None,
    extra: dict | None = None,
) -> Path:
    """Write generator (and discriminator) parameters; values are stored as float32."""
    tensors: list[tuple[str, torch.Tensor]] = [
        (f"generator/{k}", v) for k, v in model.state_dict().items()
    ]
    for spk in sorted(discriminators or {}):
        tensors += [(f"discriminator/{spk}/{k}", v) for k, v in discriminators[spk].state_dict().items()]
    entries, blobs, offset = [], [], 0
    for name, t in tensors:
        blob = encode_dafa(_as_matrix(t))
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": "dysaug-checkpoint",
        "model": model.config(),
        "roster_hash": roster_hash(model.roster),
        "speaker_codes": dict(sorted(model.speaker_codes.items())),
        "discriminators": sorted(discriminators or {}),
        "discriminator_hidden_dim": _disc_hidden(discriminators),
        "extra": extra or {},
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        prefix = fh.read(_PREFIX.size)
        header, _ = _parse_header(prefix + fh.read(_header_len(prefix)))
    return header


def _header_len(prefix: bytes) -> int:
    if len(prefix) < _PREFIX.size:
        raise ArchiveError("truncated checkpoint")
    magic, version, n = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise ArchiveError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise ArchiveError(f"unsupported checkpoint version {version}")
    return n


def _parse_header(buf: bytes) -> tuple[dict, int]:
    n = _header_len(buf[: _PREFIX.size])
    start = _PREFIX.size
    try:
        header = json.loads(buf[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError("corrupt checkpoint header") from exc
    return header, start + n


def load_checkpoint(path: str | Path) -> tuple[GeneratorModel, dict[str, Discriminator], dict]:
    buf = Path(path).read_bytes()
    header, body = _parse_header(buf)
    cfg = header["model"]
    model = GeneratorModel(
        variant=cfg["variant"],
        roster=cfg["roster"],
        n_phones=cfg["n_phones"],
        speaker_dim=cfg["speaker_dim"],
        codebook_size=cfg["codebook_size"] or 29,
        hidden_dim=cfg.get("hidden_dim", 128),
    )
    if roster_hash(model.roster) != header["roster_hash"]:
        raise ArchiveError("roster hash mismatch")
    model.speaker_codes = {k: int(v) for k, v in header["speaker_codes"].items()}
    d_hidden = header.get("discriminator_hidden_dim") or 128
    discs = {spk: Discriminator(spk, d_hidden) for spk in header["discriminators"]}

    states: dict[str, dict] = {"generator": {}}
    for spk in discs:
        states[f"discriminator/{spk}"] = {}
    for entry in header["tensors"]:
        matrix, _ = decode_dafa(buf, body + entry["offset"])
        tensor = torch.from_numpy(matrix.copy()).reshape(entry["shape"])
        kind, _, rest = entry["name"].partition("/")
        if kind == "discriminator":
            spk, _, key = rest.partition("/")
            owner = f"discriminator/{spk}"
        else:
            owner, key = kind, rest
        if owner not in states:
            raise ArchiveError(f"tensor {entry['name']!r} has no owner in the header")
        states[owner][key] = tensor
    model.load_state_dict(states["generator"])
    for spk, d in discs.items():
        d.load_state_dict(states[f"discriminator/{spk}"])
    return model, discs, header
