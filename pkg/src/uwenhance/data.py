"""Dataset ingestion and the persisted manifest.

Three layouts are understood: ``paired`` (input/ + reference/ with
matching stems), ``mos`` (images plus a mos.csv score table), and
``noref`` (a bare image directory). Ingestion validates everything up
front and freezes a seeded train/test split into the manifest so later
runs compare like with like.
"""

from __future__ import annotations

import csv
import json
import os
import random
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .imageops import list_image_files

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
KINDS = ("paired", "mos", "noref")


@dataclass
class ManifestEntry:
    id: str
    input_path: str
    reference_path: str | None = None
    mos_raw: float | None = None
    mos: float | None = None


@dataclass
class DatasetManifest:
    kind: str
    root: str
    entries: list
    split: dict
    seed: int = 0
    mos_scale: float | None = None

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest has duplicate ids")
        train, test = set(self.split["train_ids"]), set(self.split["test_ids"])
        if train & test:
            raise DataError(f"split overlaps: {sorted(train & test)}")
        if train | test != set(ids):
            raise DataError("split does not cover the dataset")

    def resolve(self, rel_path: str) -> Path:
        return Path(self.root) / rel_path

    def subset(self, which: str) -> list:
        if which == "all":
            return list(self.entries)
        if which not in ("train", "test"):
            raise DataError(f"unknown subset {which!r} (use train/test/all)")
        wanted = set(self.split[f"{which}_ids"])
        return [e for e in self.entries if e.id in wanted]


def _stem_map(paths, what: str) -> dict:
    out = {}
    for p in paths:
        if p.stem in out:
            raise DataError(f"duplicate {what} id {p.stem!r}: {out[p.stem].name} and {p.name}")
        out[p.stem] = p
    return out


def _read_mos_table(path: Path) -> dict:
    if not path.exists():
        raise DataError(f"missing score table {path}")
    scores = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"image", "mos"} <= set(reader.fieldnames):
                raise DataError(f"score table {path} needs 'image' and 'mos' columns")
            for line, row in enumerate(reader, start=2):
                image_id = Path(row["image"]).stem
                if image_id in scores:
                    raise DataError(f"duplicate score for {image_id!r} in {path}")
                try:
                    scores[image_id] = float(row["mos"])
                except ValueError:
                    raise DataError(f"bad mos value {row['mos']!r} at {path}:{line}")
    except OSError as exc:
        raise DataError(f"unreadable score table {path}: {exc}")
    if not scores:
        raise DataError(f"score table {path} is empty")
    return scores


def ingest_dataset(root, kind: str, seed: int = 0, train_fraction: float = 0.9,
                   train_count: int | None = None,
                   mos_scale: float | None = None) -> DatasetManifest:
    """Scan a dataset directory into a validated manifest.

    The split shuffles ids with ``seed`` and takes ``train_count`` (or
    ``round(n * train_fraction)``) for training. MOS values are divided
    by the declared ``mos_scale``; when the table is already in [0,1]
    the scale may be omitted.
    """
    root = Path(root)
    if kind not in KINDS:
        raise DataError(f"unknown dataset kind {kind!r}, expected one of {KINDS}")
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")

    entries = []
    if kind == "paired":
        inputs = _stem_map(list_image_files(root / "input"), "input")
        references = _stem_map(list_image_files(root / "reference"), "reference")
        missing_ref = sorted(set(inputs) - set(references))
        missing_in = sorted(set(references) - set(inputs))
        if missing_ref or missing_in:
            raise DataError(
                f"unpaired files: inputs without reference {missing_ref}, "
                f"references without input {missing_in}")
        for image_id in sorted(inputs):
            entries.append(ManifestEntry(
                id=image_id,
                input_path=str(inputs[image_id].relative_to(root)),
                reference_path=str(references[image_id].relative_to(root))))
    elif kind == "mos":
        image_dir = root / "images" if (root / "images").is_dir() else root
        images = _stem_map(list_image_files(image_dir), "image")
        scores = _read_mos_table(root / "mos.csv")
        unscored = sorted(set(images) - set(scores))
        unmatched = sorted(set(scores) - set(images))
        if unscored or unmatched:
            raise DataError(
                f"score table mismatch: images without a score {unscored}, "
                f"scores without an image {unmatched}")
        if mos_scale is None:
            peak = max(scores.values())
            if peak > 1.0 or min(scores.values()) < 0.0:
                raise DataError(
                    f"raw scores reach {peak}; declare the scale (mos_scale) to normalize")
            mos_scale = 1.0
        for image_id in sorted(images):
            raw = scores[image_id]
            norm = raw / mos_scale
            if not 0.0 <= norm <= 1.0:
                raise DataError(
                    f"normalized mos for {image_id!r} is {norm} (raw {raw} / scale {mos_scale})")
            entries.append(ManifestEntry(
                id=image_id, input_path=str(images[image_id].relative_to(root)),
                mos_raw=raw, mos=norm))
    else:
        for path in list_image_files(root):
            entries.append(ManifestEntry(id=path.stem, input_path=str(path.relative_to(root))))
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate image stems in no-reference dataset")

    if not entries:
        raise DataError(f"no usable images under {root}")

    ids = [e.id for e in entries]
    shuffled = list(ids)
    random.Random(seed).shuffle(shuffled)
    n_train = train_count if train_count is not None else int(round(len(ids) * train_fraction))
    if not 0 <= n_train <= len(ids):
        raise DataError(f"train split of {n_train} impossible with {len(ids)} entries")
    split = {"train_ids": sorted(shuffled[:n_train]), "test_ids": sorted(shuffled[n_train:])}
    return DatasetManifest(kind=kind, root=str(root), entries=entries, split=split,
                           seed=seed, mos_scale=mos_scale)


def save_manifest(manifest: DatasetManifest, path=None) -> Path:
    """Write the manifest beside the dataset root (or to ``path``)."""
    if path is None:
        path = Path(manifest.root) / MANIFEST_NAME
    path = Path(path)
    doc = {
        "version": MANIFEST_VERSION,
        "kind": manifest.kind,
        "root": manifest.root,
        "seed": manifest.seed,
        "mos_scale": manifest.mos_scale,
        "split": manifest.split,
        "entries": [
            {key: value for key, value in vars(entry).items() if value is not None}
            for entry in manifest.entries
        ],
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable manifest {path}: {exc}")
    if doc.get("version") != MANIFEST_VERSION:
        raise DataError(f"manifest version {doc.get('version')!r} not supported")
    entries = [ManifestEntry(**raw) for raw in doc["entries"]]
    return DatasetManifest(kind=doc["kind"], root=doc["root"], entries=entries,
                           split=doc["split"], seed=doc["seed"], mos_scale=doc["mos_scale"])
