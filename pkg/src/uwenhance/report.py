"""Static figures from training logs and image directories.

Batch-oriented output only: loss curves from the line-delimited training
log and side-by-side comparison grids. Files are written atomically like
every other artifact.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

from .errors import DataError
from .imageops import list_image_files, load_image

LOSS_KEYS = ("l1", "l_clip", "l_cr", "l_total")


def read_training_log(path) -> list:
    """Parse a line-delimited training log into per-epoch mean losses."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no training log at {path}")
    sums, counts = {}, {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"bad log line {path}:{lineno}: {exc}")
            epoch = row.get("epoch", 0)
            bucket = sums.setdefault(epoch, {key: 0.0 for key in LOSS_KEYS})
            for key in LOSS_KEYS:
                bucket[key] += float(row.get(key, 0.0))
            counts[epoch] = counts.get(epoch, 0) + 1
    if not sums:
        raise DataError(f"training log {path} is empty")
    epochs = sorted(sums)
    return [{"epoch": e, **{k: sums[e][k] / counts[e] for k in LOSS_KEYS}} for e in epochs]


def _atomic_figure(fig, path: Path):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)


def plot_loss_curves(log_path, out_path):
    """Per-epoch mean of each loss component, one line per component."""
    rows = read_training_log(log_path)
    epochs = [row["epoch"] for row in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    for key in LOSS_KEYS:
        ax.plot(epochs, [row[key] for row in rows], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _atomic_figure(fig, Path(out_path))


def image_grid(directories, out_path, labels=None, max_rows: int = 8):
    """Side-by-side comparison grid: one row per image id, one column per
    directory; ids are matched by filename stem across all columns."""
    directories = [Path(d) for d in directories]
    if not directories:
        raise DataError("no directories to compare")
    labels = labels or [d.name for d in directories]
    if len(labels) != len(directories):
        raise DataError(f"{len(labels)} labels for {len(directories)} directories")
    columns = [{p.stem: p for p in list_image_files(d)} for d in directories]
    common = sorted(set.intersection(*(set(c) for c in columns)))
    if not common:
        raise DataError("no image ids shared across all directories")
    common = common[:max_rows]

    fig, axes = plt.subplots(len(common), len(directories),
                             figsize=(3 * len(directories), 3 * len(common)),
                             squeeze=False)
    for r, image_id in enumerate(common):
        for c, col in enumerate(columns):
            ax = axes[r][c]
            ax.imshow(load_image(col[image_id]).numpy())
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(labels[c])
            if c == 0:
                ax.set_ylabel(image_id, rotation=0, ha="right", va="center")
    fig.tight_layout()
    _atomic_figure(fig, Path(out_path))
