"""Enhancement networks behind a single swappable handle.

The training and loss machinery only assumes an image-to-image module, so
the bundled residual CNN can be swapped for any drop-in architecture via
``create_enhancer`` or an import path in the config.
"""

from __future__ import annotations

import importlib
import json
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .imageops import as_image_tensor, bchw_to_hwc, hwc_to_bchw


def _conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, padding_mode="reflect")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = _conv(channels, channels)
        self.conv2 = _conv(channels, channels)

    def forward(self, x):
        y = F.relu(self.conv1(x))
        return x + self.conv2(y)


class ReferenceCnn(nn.Module):
    """Compact residual enhancer predicting a correction on top of the input.

    One 2x downsample keeps the body cheap; the final conv is zero-
    initialized so an untrained network starts at the identity mapping.
    Inputs of odd size are reflect-padded to even and cropped back.
    """

    def __init__(self, channels: int = 32, blocks: int = 2):
        super().__init__()
        if channels < 1 or blocks < 1:
            raise ConfigError("enhancer", "channels and blocks must be >= 1")
        self.channels = channels
        self.blocks = blocks
        self.stem = _conv(3, channels)
        self.down = _conv(channels, 2 * channels, stride=2)
        self.body = nn.Sequential(*[ResidualBlock(2 * channels) for _ in range(blocks)])
        self.up = _conv(2 * channels, channels)
        self.head = _conv(channels, 3)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        pad_h, pad_w = h % 2, w % 2
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
        y = F.relu(self.stem(x))
        z = F.relu(self.down(y))
        z = self.body(z)
        z = F.interpolate(z, scale_factor=2, mode="nearest")
        z = F.relu(self.up(z))
        out = torch.clamp(x + self.head(z), 0.0, 1.0)
        return out[..., :h, :w]


@dataclass
class EnhancerHandle:
    architecture: str
    module: nn.Module
    arch_kwargs: dict

    def forward_train(self, images: torch.Tensor) -> torch.Tensor:
        """Differentiable batched pass, (B,H,W,3) -> (B,H,W,3)."""
        return bchw_to_hwc(self.module(hwc_to_bchw(images)), squeeze=False)

    def parameters(self):
        return self.module.parameters()


def create_enhancer(architecture: str = "reference_cnn", **arch_kwargs) -> EnhancerHandle:
    if architecture == "reference_cnn":
        module = ReferenceCnn(**arch_kwargs)
    elif "." in architecture:
        mod_name, _, cls_name = architecture.rpartition(".")
        try:
            cls = getattr(importlib.import_module(mod_name), cls_name)
        except (ImportError, AttributeError) as exc:
            raise ConfigError("uie.architecture", f"cannot import {architecture!r}: {exc}")
        module = cls(**arch_kwargs)
    else:
        raise ConfigError("uie.architecture",
                          f"unknown architecture {architecture!r} (use 'reference_cnn' or a dotted import path)")
    return EnhancerHandle(architecture=architecture, module=module, arch_kwargs=dict(arch_kwargs))


def enhance(image, handle: EnhancerHandle) -> torch.Tensor:
    """Deterministic full-image inference; output clamped to [0,1]."""
    tensor = as_image_tensor(image)
    was_training = handle.module.training
    handle.module.eval()
    try:
        with torch.no_grad():
            out = handle.forward_train(tensor.unsqueeze(0)).squeeze(0)
    finally:
        handle.module.train(was_training)
    return out.clamp(0.0, 1.0)


def save_enhancer(handle: EnhancerHandle, path, config_snapshot: dict | None = None,
                  extra: dict | None = None):
    payload = {
        "kind": "enhancer",
        "architecture": handle.architecture,
        "arch_kwargs": json.dumps(handle.arch_kwargs),
        "state_dict": handle.module.state_dict(),
        "config_snapshot": json.dumps(config_snapshot or {}),
    }
    if extra:
        payload.update(extra)
    save_checkpoint(payload, path)


def load_enhancer(path) -> tuple:
    """Rebuild (handle, config_snapshot) from a checkpoint."""
    payload = load_checkpoint(path)
    if payload.get("kind") != "enhancer":
        raise DataError(f"not an enhancer checkpoint: {path}")
    handle = create_enhancer(payload["architecture"], **json.loads(payload["arch_kwargs"]))
    handle.module.load_state_dict(payload["state_dict"])
    return handle, json.loads(payload["config_snapshot"])
