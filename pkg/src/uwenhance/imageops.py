"""Pixel currency helpers.

Images travel through the package as H x W x 3 float tensors with values
in [0, 1]. Files on disk are 8-bit PNG/JPEG; quantization on write uses
round-half-even so repeated save/load round-trips are stable.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataError, ShapeMismatchError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def as_image_tensor(image, dtype=torch.float32) -> torch.Tensor:
    """Coerce a numpy array or torch tensor to an HWC float image tensor."""
    if isinstance(image, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(image))
    elif isinstance(image, torch.Tensor):
        t = image
    else:
        raise TypeError(f"expected ndarray or Tensor, got {type(image).__name__}")
    if t.ndim != 3 or t.shape[-1] != 3:
        raise ShapeMismatchError(f"expected HxWx3 image, got shape {tuple(t.shape)}")
    return t.to(dtype)


def to_numpy(image) -> np.ndarray:
    if isinstance(image, torch.Tensor):
        return image.detach().cpu().numpy()
    return np.asarray(image)


def hwc_to_bchw(images: torch.Tensor) -> torch.Tensor:
    """(H,W,3) or (B,H,W,3) -> (B,3,H,W), keeping autograd connectivity."""
    if images.ndim == 3:
        images = images.unsqueeze(0)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ShapeMismatchError(f"expected (B,)HxWx3, got shape {tuple(images.shape)}")
    return images.permute(0, 3, 1, 2)


def bchw_to_hwc(images: torch.Tensor, squeeze: bool = True) -> torch.Tensor:
    out = images.permute(0, 2, 3, 1)
    if squeeze and out.shape[0] == 1:
        out = out.squeeze(0)
    return out


def quantize_to_uint8(image) -> np.ndarray:
    """Map [0,1] floats to uint8 with round-half-even, clipping out-of-range."""
    arr = np.clip(to_numpy(image), 0.0, 1.0)
    return np.rint(arr * 255.0).astype(np.uint8)


def load_image(path) -> torch.Tensor:
    """Read an image file as an HxWx3 float32 tensor in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}")
    return torch.from_numpy(arr / 255.0)


def save_image(image, path) -> None:
    """Write an HxWx3 [0,1] image as 8-bit PNG, atomically (temp then rename)."""
    arr = quantize_to_uint8(image)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            Image.fromarray(arr).save(fh, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def resize_image(image: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Bilinear resize of an HWC image (differentiable)."""
    x = hwc_to_bchw(as_image_tensor(image, dtype=image.dtype if isinstance(image, torch.Tensor) else torch.float32))
    y = torch.nn.functional.interpolate(x, size=(height, width), mode="bilinear", align_corners=False)
    return bchw_to_hwc(y)


def crop(image: torch.Tensor, top: int, left: int, size: int) -> torch.Tensor:
    return image[top : top + size, left : left + size, :]


def flip_horizontal(image: torch.Tensor) -> torch.Tensor:
    return torch.flip(image, dims=[1])


def flip_vertical(image: torch.Tensor) -> torch.Tensor:
    return torch.flip(image, dims=[0])


def list_image_files(directory):
    """Image paths in a directory, sorted by name for deterministic order."""
    if not os.path.isdir(directory):
        raise DataError(f"not a directory: {directory}")
    directory = Path(directory)
    names = [n for n in os.listdir(directory) if n.lower().endswith(IMAGE_EXTENSIONS)]
    return [directory / n for n in sorted(names)]
