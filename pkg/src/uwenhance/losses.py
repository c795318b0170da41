"""Training loss components for the enhancement network.

Three ingredients feed the total objective: pixel-level L1 against the
reference, a hinge on the perception score that pushes the enhanced
image toward an alpha-discounted reference quality, and a contrastive
ratio over multi-layer extractor features in which negatives are
re-weighted by learning difficulty (the curriculum).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch

from .errors import ConfigError, DegenerateBatchError, ShapeMismatchError

HARD = "hard"
VERY_HARD = "very_hard"

DEFAULT_GAMMA = 0.25
DEFAULT_Z = 6
DEFAULT_LAYER_IDS = (1, 3, 5, 9, 13)
DEFAULT_XI = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
DEFAULT_LAMBDA1 = 0.025
DEFAULT_LAMBDA2 = 0.1
DEFAULT_ALPHA = 0.975


@dataclass
class CurriculumWeights:
    """Per-negative weights for one sample: 1+gamma for hard negatives,
    1-gamma for very-hard ones; the easy negative always weighs z."""

    gamma: float
    z: int
    per_negative: list
    easy_weight: float
    labels: list = field(default_factory=list)

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.per_negative, dtype=dtype)


@dataclass
class CrConfig:
    """Contrastive-regularizer settings.

    ``epsilon`` > 0 enables a denominator stabilizer instead of the
    degenerate-batch error. ``flip_hard_comparison`` swaps the hard /
    very-hard assignment direction (ablation only). ``frozen_per_epoch``
    classifies negatives once per epoch instead of per batch.
    """

    layer_ids: list = field(default_factory=lambda: list(DEFAULT_LAYER_IDS))
    xi: list = field(default_factory=lambda: list(DEFAULT_XI))
    gamma: float = DEFAULT_GAMMA
    z: int = DEFAULT_Z
    epsilon: float = 0.0
    flip_hard_comparison: bool = False
    frozen_per_epoch: bool = False

    def validate(self):
        if len(self.xi) != len(self.layer_ids):
            raise ConfigError("cr.xi", f"{len(self.xi)} weights for {len(self.layer_ids)} layers")
        if any(x <= 0 for x in self.xi):
            raise ConfigError("cr.xi", "layer weights must be positive")
        if self.z < 1:
            raise ConfigError("cr.z", "need at least one non-easy negative")
        if self.epsilon < 0:
            raise ConfigError("cr.epsilon", "must be >= 0")
        return self


@dataclass
class LossWeights:
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    alpha: float = DEFAULT_ALPHA

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("loss.alpha", f"{self.alpha} outside [0, 1]")
        if self.lambda1 < 0:
            raise ConfigError("loss.lambda1", "must be >= 0")
        if self.lambda2 < 0:
            raise ConfigError("loss.lambda2", "must be >= 0")
        return self


@dataclass
class LossReport:
    """Per-batch loss values and the curriculum assignments, for logging."""

    l1: float
    l_clip: float
    l_cr: float
    l_total: float
    weights: list = field(default_factory=list)
    classifications: list = field(default_factory=list)
    image_ids: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        d = {
            "l1": self.l1,
            "l_clip": self.l_clip,
            "l_cr": self.l_cr,
            "l_total": self.l_total,
            "image_ids": list(self.image_ids),
            "classifications": self.classifications,
            "weights": [asdict(w) for w in self.weights],
        }
        return d


def _score_value(score):
    """Accept a PerceptionScore, tensor, or float; return the s_out value."""
    s = getattr(score, "s_out", score)
    if isinstance(s, torch.Tensor):
        return s
    return float(s)


def pixel_l1(enhanced: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    if enhanced.shape != reference.shape:
        raise ShapeMismatchError(
            f"pixel_l1 shapes differ: {tuple(enhanced.shape)} vs {tuple(reference.shape)}"
        )
    return (enhanced - reference).abs().mean()


def clip_perception_loss(score_enhanced, score_reference, alpha: float = DEFAULT_ALPHA):
    """Hinge pushing the enhanced score above the alpha-discounted reference.

    max(0, (1 - S_enhanced) - alpha * (1 - S_reference)); zero once the
    enhanced image meets the target quality.
    """
    s_e = _score_value(score_enhanced)
    s_r = _score_value(score_reference)
    if not isinstance(s_e, torch.Tensor):
        s_e = torch.tensor(s_e)
    margin = (1.0 - s_e) - alpha * (1.0 - s_r)
    return torch.clamp(margin, min=0.0)


def classify_negatives(score_enhanced, negative_scores, gamma: float = DEFAULT_GAMMA,
                       flip: bool = False) -> CurriculumWeights:
    """Assign curriculum weights by comparing perception scores.

    A negative the anchor has already surpassed (strictly) is hard and
    weighs 1+gamma; otherwise, ties included, it is very-hard and weighs
    1-gamma. ``flip`` swaps the direction for ablation runs.
    """
    if len(negative_scores) == 0:
        raise ConfigError("negatives", "empty negative score list")
    s_anchor = _score_value(score_enhanced)
    if isinstance(s_anchor, torch.Tensor):
        s_anchor = float(s_anchor.detach())
    weights, labels = [], []
    for s in negative_scores:
        beats = s_anchor > float(_score_value(s))
        if flip:
            beats = not beats
        if beats:
            weights.append(1.0 + gamma)
            labels.append(HARD)
        else:
            weights.append(1.0 - gamma)
            labels.append(VERY_HARD)
    z = len(negative_scores)
    return CurriculumWeights(gamma=gamma, z=z, per_negative=weights,
                             easy_weight=float(z), labels=labels)


def _per_sample_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().mean(dim=(1, 2, 3))


def contrastive_regularization_batch(anchor, positive, easy_negative, non_easy_negatives,
                                     weight_matrix: torch.Tensor, cfg: CrConfig,
                                     extractor) -> torch.Tensor:
    """Vectorized contrastive ratio, one value per sample.

    All image arguments are (B,H,W,3); ``non_easy_negatives`` is a list of
    z such batches and ``weight_matrix`` is (B,z). Feature distances are
    mean L1 over all feature elements, keeping magnitudes resolution
    independent.
    """
    cfg.validate()
    z = cfg.z
    if len(non_easy_negatives) != z:
        raise ShapeMismatchError(f"{len(non_easy_negatives)} non-easy negatives, expected z={z}")
    batch = anchor.shape[0]
    if weight_matrix.shape != (batch, z):
        raise ShapeMismatchError(f"weight matrix {tuple(weight_matrix.shape)}, expected {(batch, z)}")
    stacked = torch.cat([anchor, positive, easy_negative] + list(non_easy_negatives), dim=0)
    pyramids = extractor.extract(stacked, cfg.layer_ids)
    weight_matrix = weight_matrix.to(anchor.dtype)
    total = torch.zeros(batch, dtype=anchor.dtype)
    for xi, feats in zip(cfg.xi, pyramids):
        f_anchor = feats[0:batch]
        f_pos = feats[batch : 2 * batch]
        f_easy = feats[2 * batch : 3 * batch]
        numer = _per_sample_l1(f_pos, f_anchor)
        denom = float(z) * _per_sample_l1(f_easy, f_anchor)
        for q in range(z):
            f_neg = feats[(3 + q) * batch : (4 + q) * batch]
            denom = denom + weight_matrix[:, q] * _per_sample_l1(f_neg, f_anchor)
        if cfg.epsilon > 0:
            denom = denom + cfg.epsilon
        elif bool((denom == 0).any()):
            raise DegenerateBatchError(
                "contrastive denominator is zero: anchor features identical to every negative"
            )
        total = total + xi * numer / denom
    return total


def contrastive_regularization(anchor, positive, easy_negative, non_easy_negatives,
                               weights: CurriculumWeights, cfg: CrConfig,
                               extractor) -> torch.Tensor:
    """Single-sample contrastive regularizer (images are HxWx3)."""
    w = weights.as_tensor(dtype=anchor.dtype).unsqueeze(0)
    per_sample = contrastive_regularization_batch(
        anchor.unsqueeze(0), positive.unsqueeze(0), easy_negative.unsqueeze(0),
        [n.unsqueeze(0) for n in non_easy_negatives], w, cfg, extractor)
    return per_sample.squeeze(0)


def total_loss(l1, l_clip, l_cr, w: LossWeights):
    """Weighted sum of the three components."""
    return l1 + w.lambda1 * l_clip + w.lambda2 * l_cr
