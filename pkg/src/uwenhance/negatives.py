"""Candidate negatives for contrastive training.

Each training input gets a set of alternative restorations from classical
underwater-enhancement baselines (plus optional precomputed outputs from
learned models). The raw input doubles as the easy negative. Every
generated image is quantized to 8 bits before use so that a warm cache
read is bit-identical to a fresh computation.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, DataError
from .imageops import as_image_tensor, load_image, quantize_to_uint8, save_image

DEFAULT_METHODS = ("udcp", "ibla", "dcp", "he", "precomputed:funie", "precomputed:usuir")

DCP_DEFAULTS = {"patch_size": 15, "omega": 0.95, "t0": 0.1, "light_fraction": 0.001}
IBLA_DEFAULTS = {
    "blur_sigmas": (1.0, 2.0, 4.0, 8.0),
    "smooth_size": 7,
    "omega": 0.95,
    "t0": 0.1,
    "light_fraction": 0.001,
    "attenuation_ratios": (1.0, 0.6, 0.75),
}


@dataclass
class GeneratorSpec:
    """One negative source: a method name, its parameters, and where its
    outputs are cached. ``precomputed`` entries read from params['dir']."""

    method: str
    params: dict = field(default_factory=dict)
    cache_dir: str | Path | None = None


@dataclass
class NegativeSet:
    easy: torch.Tensor
    non_easy: list
    provenance: list

    def __post_init__(self):
        if len(self.non_easy) != len(self.provenance):
            raise DataError("negative set provenance does not match image count")
        if len(set(self.provenance)) != len(self.provenance):
            raise DataError(f"duplicate negative provenance: {self.provenance}")


def parse_method(label: str) -> GeneratorSpec:
    """Turn a config label like 'dcp' or 'precomputed:funie' into a spec."""
    if label.startswith("precomputed:"):
        name = label.split(":", 1)[1]
        if not name:
            raise ConfigError("negatives.methods", "precomputed label needs a name")
        return GeneratorSpec(method="precomputed", params={"name": name})
    if label not in GENERATORS:
        known = sorted(GENERATORS) + ["precomputed:<name>"]
        raise ConfigError("negatives.methods", f"unknown method {label!r}, expected one of {known}")
    return GeneratorSpec(method=label)


def _to_array(image) -> np.ndarray:
    return as_image_tensor(image).detach().cpu().numpy().astype(np.float64)


def _quantized_tensor(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(quantize_to_uint8(array).astype(np.float32) / 255.0)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def histogram_equalize(image, params: dict | None = None) -> torch.Tensor:
    """Per-channel cumulative-histogram remap over 256 levels.

    A value lands on the cumulative frequency of its own bin, so an
    already-flat histogram is (to quantization) unchanged and a constant
    image stays constant.
    """
    del params
    arr = _to_array(image)
    out = np.empty_like(arr)
    for c in range(3):
        levels = np.rint(np.clip(arr[:, :, c], 0.0, 1.0) * 255.0).astype(np.int64)
        hist = np.bincount(levels.ravel(), minlength=256)
        cdf = np.cumsum(hist) / levels.size
        out[:, :, c] = cdf[levels]
    return _quantized_tensor(out)


def _min_filter(channel: np.ndarray, size: int) -> np.ndarray:
    return ndimage.minimum_filter(channel, size=size, mode="nearest")


def _dark_channel(arr: np.ndarray, patch_size: int, channels) -> np.ndarray:
    return _min_filter(arr[:, :, channels].min(axis=2), patch_size)


def _atmospheric_light(arr: np.ndarray, dark: np.ndarray, fraction: float) -> np.ndarray:
    count = max(1, int(round(dark.size * fraction)))
    flat = dark.reshape(-1)
    idx = np.argpartition(flat, -count)[-count:]
    pixels = arr.reshape(-1, 3)[idx]
    return pixels.mean(axis=0)


def _restore(arr: np.ndarray, light: np.ndarray, transmission: np.ndarray,
             t0: float) -> np.ndarray:
    t = np.maximum(transmission, t0)[:, :, None]
    return np.clip((arr - light[None, None, :]) / t + light[None, None, :], 0.0, 1.0)


def _haze_removal(image, params: dict | None, channels) -> torch.Tensor:
    p = {**DCP_DEFAULTS, **(params or {})}
    arr = _to_array(image)
    dark = _dark_channel(arr, p["patch_size"], channels)
    light = _atmospheric_light(arr, dark, p["light_fraction"])
    if float(light.max()) <= 0.0:
        warnings.warn("all-black input: haze removal returned the input unchanged")
        return _quantized_tensor(arr)
    normalized = arr / np.maximum(light[None, None, :], 1e-8)
    transmission = 1.0 - p["omega"] * _dark_channel(normalized, p["patch_size"], channels)
    return _quantized_tensor(_restore(arr, light, transmission, p["t0"]))


def dark_channel_prior(image, params: dict | None = None) -> torch.Tensor:
    """Haze removal from the patch-minimum over all three channels."""
    return _haze_removal(image, params, [0, 1, 2])


def underwater_dcp(image, params: dict | None = None) -> torch.Tensor:
    """Underwater variant: the red channel is too attenuated to trust, so
    the dark channel uses green and blue only."""
    return _haze_removal(image, params, [1, 2])


def ibla_restore(image, params: dict | None = None) -> torch.Tensor:
    """Restoration driven by image blurriness and background light.

    Blurrier regions are treated as farther away; background light is
    sampled from the blurriest pixels and per-channel transmission decays
    with estimated depth, red fastest.
    """
    p = {**IBLA_DEFAULTS, **(params or {})}
    arr = _to_array(image)
    gray = arr.mean(axis=2)
    blur = np.zeros_like(gray)
    for sigma in p["blur_sigmas"]:
        blur += np.abs(gray - ndimage.gaussian_filter(gray, sigma=sigma, mode="nearest"))
    blur /= len(p["blur_sigmas"])
    peak = float(blur.max())
    if peak > 0:
        blur = blur / peak
    depth = ndimage.maximum_filter(blur, size=p["smooth_size"], mode="nearest")
    depth = ndimage.gaussian_filter(depth, sigma=p["smooth_size"] / 3.0, mode="nearest")
    light = _atmospheric_light(arr, depth, p["light_fraction"])
    base = np.clip(1.0 - p["omega"] * depth, p["t0"], 1.0)
    out = np.empty_like(arr)
    for c, ratio in enumerate(p["attenuation_ratios"]):
        t = np.maximum(base**ratio, p["t0"])
        out[:, :, c] = np.clip((arr[:, :, c] - light[c]) / t + light[c], 0.0, 1.0)
    return _quantized_tensor(out)


GENERATORS = {
    "he": histogram_equalize,
    "dcp": dark_channel_prior,
    "udcp": underwater_dcp,
    "ibla": ibla_restore,
}

_METHOD_DEFAULTS = {
    "he": {},
    "dcp": DCP_DEFAULTS,
    "udcp": DCP_DEFAULTS,
    "ibla": IBLA_DEFAULTS,
}


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

def _params_hash(method: str, params: dict) -> str:
    effective = {**_METHOD_DEFAULTS.get(method, {}), **(params or {})}
    canonical = json.dumps(effective, sort_keys=True, default=lambda v: list(v))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def cache_path(spec: GeneratorSpec, image_id: str) -> Path | None:
    if spec.cache_dir is None:
        return None
    return Path(spec.cache_dir) / spec.method / _params_hash(spec.method, spec.params) / f"{image_id}.png"


def _precomputed_lookup(spec: GeneratorSpec, image_id: str) -> torch.Tensor:
    name = spec.params.get("name")
    if not name:
        raise ConfigError("negatives.methods", "precomputed spec missing a name")
    directory = spec.params.get("dir")
    if directory is None:
        if spec.cache_dir is None:
            raise ConfigError(
                "negatives.cache_dir",
                f"precomputed negatives {name!r} need a directory (params.dir or cache_dir)")
        directory = Path(spec.cache_dir) / "precomputed" / name
    candidates = [Path(directory) / f"{image_id}{ext}" for ext in (".png", ".jpg", ".jpeg", ".bmp")]
    for path in candidates:
        if path.exists():
            return torch.from_numpy(
                quantize_to_uint8(load_image(path).numpy()).astype(np.float32) / 255.0)
    raise DataError(f"no precomputed negative {name!r} for image {image_id!r} under {directory}")


def generate_negative(image, spec: GeneratorSpec, image_id: str) -> tuple:
    """Produce (image, provenance) for one spec, via the cache when set."""
    if spec.method == "precomputed":
        return _precomputed_lookup(spec, image_id), f"precomputed:{spec.params['name']}"
    if spec.method not in GENERATORS:
        raise ConfigError("negatives.methods", f"unknown method {spec.method!r}")
    path = cache_path(spec, image_id)
    if path is not None and path.exists():
        return load_image(path), spec.method
    result = GENERATORS[spec.method](image, spec.params)
    if path is not None:
        save_image(result, path)
    return result, spec.method


def build_negative_set(image, specs, image_id: str) -> NegativeSet:
    """Assemble the full negative set for one training input.

    The easy negative is the 8-bit round trip of the input itself, so its
    pixel currency matches the cached generator outputs.
    """
    if not specs:
        raise ConfigError("negatives.methods", "no negative generators configured")
    tensor = as_image_tensor(image)
    easy = _quantized_tensor(tensor.detach().cpu().numpy())
    non_easy, provenance = [], []
    for spec in specs:
        out, label = generate_negative(tensor, spec, image_id)
        non_easy.append(out)
        provenance.append(label)
    return NegativeSet(easy=easy, non_easy=non_easy, provenance=provenance)
