"""Evaluation metrics: PSNR, SSIM, UCIQE, UIQM, and rank correlations.

Full-reference metrics take two aligned [0,1] RGB images. The two
no-reference underwater measures follow their original publications
(UCIQE: Yang & Sowmya 2015; UIQM: Panetta, Gao & Agaian 2016); only the
top-level coefficients are standardized, so the component conventions
used here are documented inline.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal, stats

from .errors import DataError, ShapeMismatchError, ZeroVarianceError
from .imageops import as_image_tensor, list_image_files, load_image

PSNR_CAP_DB = 100.0

UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
UIQM_COEFFS = (0.0282, 0.2953, 3.5753)

_LUMA = np.array([0.299, 0.587, 0.114])


def _to_array(image) -> np.ndarray:
    return as_image_tensor(image).detach().cpu().numpy().astype(np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """10*log10(1/MSE) on [0,1] images, capped at 100 dB."""
    x, y = _to_array(a), _to_array(b)
    _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a, b, window_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Windowed SSIM on the Rec.601 luminance plane.

    Valid-mode windowing only: images smaller than the window are an
    error rather than a silently padded result.
    """
    x, y = _to_array(a), _to_array(b)
    _check_pair(x, y)
    lx, ly = x @ _LUMA, y @ _LUMA
    if min(lx.shape) < window_size:
        raise ShapeMismatchError(
            f"image {lx.shape} smaller than the {window_size}x{window_size} SSIM window")
    win = _gaussian_window(window_size, sigma)
    c1, c2 = k1**2, k2**2

    def smooth(img):
        return signal.convolve2d(img, win, mode="valid")

    mu_x, mu_y = smooth(lx), smooth(ly)
    var_x = smooth(lx * lx) - mu_x**2
    var_y = smooth(ly * ly) - mu_y**2
    cov = smooth(lx * ly) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def _rgb_to_lab(arr: np.ndarray) -> np.ndarray:
    """sRGB [0,1] to CIELAB, white point taken from the RGB->XYZ matrix
    row sums so that achromatic pixels land on a = b = 0 exactly."""
    srgb = np.clip(arr, 0.0, 1.0)
    linear = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    matrix = np.array([
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ])
    xyz = linear @ matrix.T
    xyz = xyz / matrix.sum(axis=1)
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def uciqe(image) -> float:
    """0.4680*sigma_chroma + 0.2745*luminance_contrast + 0.2576*mean_saturation.

    Luminance contrast is the spread between the top and bottom 1% of L;
    saturation is chroma/L with zero-luminance pixels counted as zero.
    """
    lab = _rgb_to_lab(_to_array(image))
    l_chan = lab[..., 0]
    chroma = np.hypot(lab[..., 1], lab[..., 2])
    sigma_chroma = float(chroma.std())
    sorted_l = np.sort(l_chan, axis=None)
    top = max(1, int(round(0.01 * sorted_l.size)))
    contrast = float(sorted_l[-top:].mean() - sorted_l[:top].mean())
    saturation = np.where(l_chan > 0, chroma / np.where(l_chan > 0, l_chan, 1.0), 0.0)
    c1, c2, c3 = UCIQE_COEFFS
    return c1 * sigma_chroma + c2 * contrast + c3 * float(saturation.mean())


def _trimmed(values: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    flat = np.sort(values, axis=None)
    cut = int(fraction * flat.size)
    return flat[cut : flat.size - cut]


def _block_reduce(channel: np.ndarray, blocksize: int):
    """Yield (min, max) per block, ragged edge blocks included."""
    nx = math.ceil(channel.shape[0] / blocksize)
    ny = math.ceil(channel.shape[1] / blocksize)
    for i in range(nx):
        for j in range(ny):
            block = channel[i * blocksize : (i + 1) * blocksize,
                            j * blocksize : (j + 1) * blocksize]
            yield float(block.min()), float(block.max())


def _eme(channel: np.ndarray, blocksize: int = 8) -> float:
    """Enhancement measure: mean log max/min ratio over blocks. Zero
    extrema are lifted to one level (8-bit convention) so empty blocks
    contribute nothing instead of diverging."""
    nx = math.ceil(channel.shape[0] / blocksize)
    ny = math.ceil(channel.shape[1] / blocksize)
    w = 2.0 / (nx * ny)
    total = 0.0
    for bmin, bmax in _block_reduce(channel, blocksize):
        bmin = bmin if bmin > 0 else 1.0
        bmax = bmax if bmax > 0 else 1.0
        total += w * math.log(bmax / bmin)
    return total


def _plip_sub(a, b, gamma=1026.0):
    return gamma * (a - b) / (gamma - b)


def _plip_sum(a, b, gamma=1026.0):
    return a + b - a * b / gamma


def _log_amee(channel: np.ndarray, blocksize: int = 8, gamma: float = 1026.0) -> float:
    """Parameterized logarithmic contrast measure over blocks (PLIP ops)."""
    nx = math.ceil(channel.shape[0] / blocksize)
    ny = math.ceil(channel.shape[1] / blocksize)
    w = 1.0 / (nx * ny)
    s = 0.0
    for bmin, bmax in _block_reduce(channel, blocksize):
        top = _plip_sub(bmax, bmin, gamma)
        bottom = _plip_sum(bmax, bmin, gamma)
        m = 0.0 if bottom == 0.0 else top / bottom
        if m > 0.0:
            s += m * math.log(m)
    return gamma - gamma * (1.0 - s / gamma) ** w


def _uicm(arr: np.ndarray) -> float:
    """Colorfulness from 10%-trimmed RG/YB opponent statistics."""
    rg = arr[..., 0] - arr[..., 1]
    yb = (arr[..., 0] + arr[..., 1]) / 2.0 - arr[..., 2]
    rg_t, yb_t = _trimmed(rg), _trimmed(yb)
    mu = math.sqrt(rg_t.mean() ** 2 + yb_t.mean() ** 2)
    sigma = math.sqrt(rg_t.var() + yb_t.var())
    return -0.0268 * mu + 0.1586 * sigma


def _uism(arr: np.ndarray) -> float:
    """Sharpness: per-channel Sobel-weighted EME with Rec.601 weights.

    Edge maps are quantized to whole 8-bit levels so near-zero block
    minima cannot blow up the log ratio.
    """
    total = 0.0
    for weight, c in zip(_LUMA, range(3)):
        channel = arr[..., c]
        grad = np.hypot(ndimage.sobel(channel / 255.0, axis=0, mode="reflect"),
                        ndimage.sobel(channel / 255.0, axis=1, mode="reflect"))
        edge = np.clip(np.rint(channel * grad), 0.0, 255.0)
        total += weight * _eme(edge)
    return total


def _uiconm(arr: np.ndarray) -> float:
    """Contrast: logAMEE of the gray plane."""
    return _log_amee(arr @ _LUMA / 255.0)


def uiqm(image) -> float:
    """0.0282*UICM + 0.2953*UISM + 3.5753*UIConM on 8-bit-scaled intensities."""
    arr = _to_array(image) * 255.0
    c1, c2, c3 = UIQM_COEFFS
    return c1 * _uicm(arr) + c2 * _uism(arr) + c3 * _uiconm(arr)


def _validate_correlation_input(x, y):
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.ndim != 1 or ys.ndim != 1 or xs.size != ys.size:
        raise ShapeMismatchError(f"correlation inputs differ: {xs.shape} vs {ys.shape}")
    if xs.size < 3:
        raise DataError(f"need at least 3 points for a correlation, got {xs.size}")
    if xs.std() == 0 or ys.std() == 0:
        raise ZeroVarianceError("correlation undefined for a constant sequence")
    return xs, ys


def plcc(x, y) -> float:
    xs, ys = _validate_correlation_input(x, y)
    return float(stats.pearsonr(xs, ys).statistic)


def srocc(x, y) -> float:
    xs, ys = _validate_correlation_input(x, y)
    return float(stats.spearmanr(xs, ys).statistic)


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def columns(self) -> list:
        cols = ["image"]
        for name in ("psnr", "ssim", "uciqe", "uiqm", "clip_score"):
            if any(name in row for row in self.rows):
                cols.append(name)
        return cols

    def to_csv(self, path):
        path = Path(path)
        cols = self.columns()
        fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=cols)
                writer.writeheader()
                for row in self.rows:
                    writer.writerow({k: row.get(k, "") for k in cols})
                writer.writerow({"image": "mean", **{k: self.aggregates.get(k, "")
                                                     for k in cols if k != "image"}})
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def to_json(self, path):
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump({"rows": self.rows, "aggregates": self.aggregates}, fh, indent=2)
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _aggregate(rows: list) -> dict:
    agg = {}
    for name in ("psnr", "ssim", "uciqe", "uiqm", "clip_score"):
        values = [row[name] for row in rows if name in row]
        if values:
            agg[name] = float(np.mean(values))
    return agg


def evaluate_dataset(images_dir, references_dir=None, perception=None) -> MetricReport:
    """Score every image in a directory, matching references by stem.

    With a references directory, any mismatch in either direction is an
    error that names the offending files; silent skips would corrupt the
    dataset means.
    """
    image_paths = {p.stem: p for p in list_image_files(images_dir)}
    if not image_paths:
        raise DataError(f"no images under {images_dir}")
    ref_paths = {}
    if references_dir is not None:
        ref_paths = {p.stem: p for p in list_image_files(references_dir)}
        missing = sorted(set(image_paths) - set(ref_paths))
        extra = sorted(set(ref_paths) - set(image_paths))
        if missing or extra:
            raise DataError(
                f"reference mismatch: images without a reference {missing}, "
                f"references without an image {extra}")

    rows = []
    for image_id in sorted(image_paths):
        image = load_image(image_paths[image_id])
        row = {"image": image_id}
        if ref_paths:
            reference = load_image(ref_paths[image_id])
            row["psnr"] = psnr(image, reference)
            row["ssim"] = ssim(image, reference)
        row["uciqe"] = uciqe(image)
        row["uiqm"] = uiqm(image)
        if perception is not None:
            from .perception import perception_score

            row["clip_score"] = 100.0 * perception_score(image, perception).s_out
        rows.append(row)
    return MetricReport(rows=rows, aggregates=_aggregate(rows))
