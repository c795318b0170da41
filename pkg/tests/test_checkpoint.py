"""Checksummed checkpoint container."""

import pytest
import torch

from uwenhance.checkpoint import load_checkpoint, save_checkpoint
from uwenhance.errors import CheckpointCorruptError, CheckpointMissingError


def test_round_trip(tmp_path):
    payload = {"w": torch.arange(6, dtype=torch.float32).reshape(2, 3), "step": 7}
    path = tmp_path / "model.ckpt"
    save_checkpoint(payload, path)
    loaded = load_checkpoint(path)
    assert torch.equal(loaded["w"], payload["w"])
    assert loaded["step"] == 7


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointMissingError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_corrupted_payload_detected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint({"w": torch.zeros(4)}, path)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_foreign_file_rejected(tmp_path):
    path = tmp_path / "not_a_ckpt.bin"
    path.write_bytes(b"PK\x03\x04 something else entirely")
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)
