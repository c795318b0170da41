"""Checksummed checkpoint container.

File layout: one header line ``uwenhance-ckpt v1 <sha256>\\n`` followed
by a torch-serialized payload. The digest covers the payload bytes, so
any corruption is caught at load time. Writes are atomic (temp file then
rename).
"""

from __future__ import annotations

import hashlib
import io
import os
import tempfile

import torch

from .errors import CheckpointCorruptError, CheckpointMissingError

_MAGIC = b"uwenhance-ckpt"
_VERSION = 1


def save_checkpoint(payload: dict, path) -> None:
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    blob = buffer.getvalue()
    digest = hashlib.sha256(blob).hexdigest()
    header = b"%s v%d %s\n" % (_MAGIC, _VERSION, digest.encode("ascii"))
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(suffix=".ckpt", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> dict:
    if not os.path.exists(path):
        raise CheckpointMissingError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        header = fh.readline()
        blob = fh.read()
    parts = header.strip().split(b" ")
    if len(parts) != 3 or parts[0] != _MAGIC:
        raise CheckpointCorruptError(f"{path}: not a recognized checkpoint file")
    if parts[1] != b"v%d" % _VERSION:
        raise CheckpointCorruptError(
            f"{path}: unsupported checkpoint version {parts[1].decode(errors='replace')}"
        )
    digest = hashlib.sha256(blob).hexdigest()
    if digest != parts[2].decode("ascii"):
        raise CheckpointCorruptError(f"{path}: checksum mismatch, file is corrupted")
    return torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
