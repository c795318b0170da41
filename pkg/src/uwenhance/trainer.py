"""Enhancement-network training loop.

Per batch: enhance the degraded crops, score them with the frozen
perception model, classify each cached negative as hard or very-hard
against the current scores, assemble L1 + hinge + contrastive losses and
step the enhancer. Everything except the enhancer weights stays frozen.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from . import losses, perception
from .backbones import create_feature_extractor
from .enhancer import EnhancerHandle, create_enhancer, enhance, save_enhancer
from .errors import ConfigError, DataError, NonFiniteLossError
from .imageops import as_image_tensor, crop, flip_horizontal, flip_vertical, resize_image
from .losses import CrConfig, LossReport, LossWeights

__all__ = ["TrainPair", "UieTrainConfig", "TrainingRunRecord", "train_enhancer", "enhance"]


@dataclass
class TrainPair:
    image_id: str
    degraded: torch.Tensor
    reference: torch.Tensor


@dataclass
class UieTrainConfig:
    """Enhancement training schedule; defaults follow the published recipe
    (Adam at 0.001 with cosine annealing to zero, batch 16, 800 epochs,
    256x256 crops with random horizontal flips)."""

    epochs: int = 800
    batch_size: int = 16
    learning_rate: float = 0.001
    schedule: str = "cosine"
    crop: int = 256
    flip_horizontal: bool = True
    flip_vertical: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)
    cr: CrConfig = field(default_factory=CrConfig)
    seed: int = 0
    architecture: str = "reference_cnn"
    arch_kwargs: dict = field(default_factory=dict)
    extractor: dict = field(default_factory=lambda: {"kind": "stub", "seed": 0})
    checkpoint_interval: int = 50

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("uie.epochs", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("uie.batch_size", "must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("uie.learning_rate", "must be > 0")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError("uie.schedule", f"unknown schedule {self.schedule!r}")
        if self.crop < 1:
            raise ConfigError("uie.crop", "must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError("uie.checkpoint_interval", "must be >= 1")
        self.loss_weights.validate()
        self.cr.validate()
        return self


@dataclass
class TrainingRunRecord:
    seed: int
    config: dict
    epoch_aggregates: list = field(default_factory=list)
    checkpoint_paths: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "epoch_aggregates": self.epoch_aggregates,
            "checkpoint_paths": self.checkpoint_paths,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def _coerce_pairs(train_pairs) -> list:
    pairs = []
    for i, item in enumerate(train_pairs):
        if isinstance(item, TrainPair):
            pair = item
        elif len(item) == 3:
            pair = TrainPair(item[0], as_image_tensor(item[1]), as_image_tensor(item[2]))
        else:
            pair = TrainPair(f"pair{i:04d}", as_image_tensor(item[0]), as_image_tensor(item[1]))
        pairs.append(TrainPair(pair.image_id, as_image_tensor(pair.degraded),
                               as_image_tensor(pair.reference)))
    if not pairs:
        raise DataError("no training pairs")
    return pairs


def _fit_to_crop(image: torch.Tensor, size: int) -> torch.Tensor:
    """Upscale (aspect preserved) only when the source is smaller than the
    crop window; larger sources are cropped directly."""
    h, w = image.shape[0], image.shape[1]
    if h >= size and w >= size:
        return image
    scale = size / min(h, w)
    return resize_image(image, max(size, round(h * scale)), max(size, round(w * scale)))


def _sample_window(pair, negative_images, cfg: UieTrainConfig, gen: torch.Generator):
    """One aligned crop + flip for the input, reference, and negatives."""
    group = [pair.degraded, pair.reference] + list(negative_images)
    base = group[0]
    group = [img if img.shape == base.shape else resize_image(img, base.shape[0], base.shape[1])
             for img in group]
    group = [_fit_to_crop(img, cfg.crop) for img in group]
    h, w = group[0].shape[0], group[0].shape[1]
    top = int(torch.randint(0, h - cfg.crop + 1, (1,), generator=gen))
    left = int(torch.randint(0, w - cfg.crop + 1, (1,), generator=gen))
    do_h = cfg.flip_horizontal and bool(torch.randint(0, 2, (1,), generator=gen))
    do_v = cfg.flip_vertical and bool(torch.randint(0, 2, (1,), generator=gen))
    out = []
    for img in group:
        view = crop(img, top, left, cfg.crop)
        if do_h:
            view = flip_horizontal(view)
        if do_v:
            view = flip_vertical(view)
        out.append(view)
    return out[0], out[1], out[2:]


def _score_constant_images(images, state) -> list:
    with torch.no_grad():
        return [float(perception.score_images(img.unsqueeze(0), state)[0]) for img in images]


def train_enhancer(train_pairs, negatives, perception_state, config: UieTrainConfig,
                   out_dir=None, log_path=None):
    """Run the full training procedure; returns (handle, record).

    ``negatives`` maps image-id -> NegativeSet and is validated up front
    whenever the contrastive weight is active: a missing or short set
    must fail before any training time is spent. Negative and reference
    scores are computed on the full images and cached; they cannot change
    during the run because prompts and backbone are frozen.
    """
    config.validate()
    pairs = _coerce_pairs(train_pairs)
    lw = config.loss_weights
    use_clip = lw.lambda1 > 0
    use_cr = lw.lambda2 > 0

    if use_cr:
        negatives = negatives or {}
        for pair in pairs:
            nset = negatives.get(pair.image_id)
            if nset is None:
                raise DataError(f"no negative set for training image {pair.image_id!r}")
            if len(nset.non_easy) != config.cr.z:
                raise DataError(
                    f"negative set for {pair.image_id!r} has {len(nset.non_easy)} images, "
                    f"config expects z={config.cr.z}")

    torch.manual_seed(config.seed)
    handle = create_enhancer(config.architecture, **config.arch_kwargs)
    extractor = create_feature_extractor(config.extractor) if use_cr else None
    optimizer = torch.optim.Adam(handle.module.parameters(), lr=config.learning_rate)
    scheduler = None
    if config.schedule == "cosine" and config.epochs > 0:
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=config.epochs, eta_min=0.0)
    gen = torch.Generator().manual_seed(config.seed + 1)

    ref_scores = {}
    neg_scores = {}
    if use_clip:
        for pair in pairs:
            ref_scores[pair.image_id] = _score_constant_images([pair.reference], perception_state)[0]
    if use_cr:
        for pair in pairs:
            neg_scores[pair.image_id] = _score_constant_images(
                negatives[pair.image_id].non_easy, perception_state)

    record = TrainingRunRecord(seed=config.seed, config=_config_snapshot(config))
    log_fh = open(log_path, "w") if log_path is not None else None
    last_good = None
    started = time.monotonic()

    try:
        for epoch in range(config.epochs):
            epoch_weights = {}
            if use_cr and config.cr.frozen_per_epoch:
                with torch.no_grad():
                    for pair in pairs:
                        score = float(perception.score_images(
                            enhance(pair.degraded, handle).unsqueeze(0), perception_state)[0])
                        epoch_weights[pair.image_id] = losses.classify_negatives(
                            score, neg_scores[pair.image_id], config.cr.gamma,
                            flip=config.cr.flip_hard_comparison)

            order = torch.randperm(len(pairs), generator=gen).tolist()
            epoch_sums = {"l1": 0.0, "l_clip": 0.0, "l_cr": 0.0, "l_total": 0.0}
            batch_count = 0
            for start in range(0, len(order), config.batch_size):
                batch_pairs = [pairs[i] for i in order[start : start + config.batch_size]]
                inputs, refs, negs = [], [], []
                for pair in batch_pairs:
                    neg_imgs = negatives[pair.image_id].non_easy if use_cr else []
                    i_crop, y_crop, n_crops = _sample_window(pair, neg_imgs, config, gen)
                    inputs.append(i_crop)
                    refs.append(y_crop)
                    negs.append(n_crops)
                input_batch = torch.stack(inputs)
                ref_batch = torch.stack(refs)

                enhanced = handle.forward_train(input_batch)
                l1 = losses.pixel_l1(enhanced, ref_batch)

                l_clip = torch.zeros(())
                weights_list, labels_list = [], []
                anchor_scores = None
                if use_clip or use_cr:
                    anchor_scores = perception.score_images(enhanced, perception_state)
                if use_clip:
                    targets = torch.tensor([ref_scores[p.image_id] for p in batch_pairs],
                                           dtype=anchor_scores.dtype)
                    l_clip = losses.clip_perception_loss(anchor_scores, targets, lw.alpha).mean()

                l_cr = torch.zeros(())
                if use_cr:
                    for k, pair in enumerate(batch_pairs):
                        if config.cr.frozen_per_epoch:
                            weights_list.append(epoch_weights[pair.image_id])
                        else:
                            weights_list.append(losses.classify_negatives(
                                anchor_scores[k], neg_scores[pair.image_id],
                                config.cr.gamma, flip=config.cr.flip_hard_comparison))
                        labels_list.append(weights_list[-1].labels)
                    weight_matrix = torch.stack([w.as_tensor() for w in weights_list])
                    neg_batches = [torch.stack([negs[k][q] for k in range(len(batch_pairs))])
                                   for q in range(config.cr.z)]
                    l_cr = losses.contrastive_regularization_batch(
                        enhanced, ref_batch, input_batch, neg_batches,
                        weight_matrix, config.cr, extractor).mean()

                total = losses.total_loss(l1, l_clip, l_cr, lw)
                if not torch.isfinite(total):
                    raise NonFiniteLossError(
                        f"loss became non-finite at epoch {epoch}",
                        last_good_checkpoint=last_good)
                optimizer.zero_grad()
                total.backward()
                optimizer.step()

                report = LossReport(
                    l1=float(l1.detach()), l_clip=float(l_clip.detach()),
                    l_cr=float(l_cr.detach()), l_total=float(total.detach()),
                    weights=weights_list,
                    classifications=labels_list,
                    image_ids=[p.image_id for p in batch_pairs])
                for key in epoch_sums:
                    epoch_sums[key] += getattr(report, key)
                batch_count += 1
                if log_fh is not None:
                    row = {"epoch": epoch, "batch": batch_count - 1,
                           "lr": optimizer.param_groups[0]["lr"], **report.to_json_dict()}
                    log_fh.write(json.dumps(row) + "\n")

            if scheduler is not None:
                scheduler.step()
            record.epoch_aggregates.append({
                "epoch": epoch,
                **{key: value / max(batch_count, 1) for key, value in epoch_sums.items()},
                "lr": optimizer.param_groups[0]["lr"],
            })

            if out_dir is not None and (
                    (epoch + 1) % config.checkpoint_interval == 0 or epoch + 1 == config.epochs):
                path = Path(out_dir) / f"enhancer_epoch{epoch + 1:04d}.ckpt"
                save_enhancer(handle, path, config_snapshot=record.config)
                record.checkpoint_paths.append(str(path))
                last_good = str(path)
    finally:
        if log_fh is not None:
            log_fh.close()

    record.wall_clock_seconds = time.monotonic() - started
    if out_dir is not None:
        final = Path(out_dir) / "enhancer_final.ckpt"
        save_enhancer(handle, final, config_snapshot=record.config)
        record.checkpoint_paths.append(str(final))
        with open(Path(out_dir) / "run_record.json", "w") as fh:
            json.dump(record.to_json_dict(), fh, indent=2)
            fh.write("\n")
    return handle, record


def _config_snapshot(config: UieTrainConfig) -> dict:
    return asdict(config)
