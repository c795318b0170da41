"""Loss components against hand-computed values and basic properties."""

import pytest
import torch

from uwenhance.backbones import create_feature_extractor
from uwenhance.errors import ConfigError, DegenerateBatchError, ShapeMismatchError
from uwenhance.imageops import hwc_to_bchw
from uwenhance.losses import (HARD, VERY_HARD, CrConfig, CurriculumWeights, LossWeights,
                              classify_negatives, clip_perception_loss,
                              contrastive_regularization, contrastive_regularization_batch,
                              pixel_l1, total_loss)


class IdentityExtractor:
    """Feature 'pyramid' that just returns the pixels, so feature distances
    are hand-computable."""

    def extract(self, images, layer_ids):
        return [hwc_to_bchw(images) for _ in layer_ids]


def test_pixel_l1_hand_value():
    enhanced = torch.zeros(2, 2, 3)
    reference = torch.full((2, 2, 3), 0.25)
    assert float(pixel_l1(enhanced, reference)) == pytest.approx(0.25, abs=1e-8)


def test_pixel_l1_shape_check():
    with pytest.raises(ShapeMismatchError):
        pixel_l1(torch.zeros(2, 2, 3), torch.zeros(3, 2, 3))


def test_clip_loss_hand_value():
    # (1 - 0.5) - 0.975 * (1 - 0.9) = 0.4025
    val = clip_perception_loss(0.5, 0.9, alpha=0.975)
    assert float(val) == pytest.approx(0.4025, abs=1e-7)


def test_clip_loss_hinge_clamps_to_zero():
    s_e = torch.tensor(0.9, requires_grad=True)
    loss = clip_perception_loss(s_e, 0.5)
    assert float(loss.detach()) == 0.0
    loss.backward()
    assert float(s_e.grad) == 0.0


def test_clip_loss_batched():
    s_e = torch.tensor([0.5, 0.9])
    s_r = torch.tensor([0.9, 0.5])
    out = clip_perception_loss(s_e, s_r, alpha=0.975)
    assert out.shape == (2,)
    assert float(out[0]) == pytest.approx(0.4025, abs=1e-6)
    assert float(out[1]) == 0.0


def test_classify_negatives_hand_values():
    w = classify_negatives(0.5, [0.4, 0.5, 0.6], gamma=0.25)
    assert w.per_negative == [1.25, 0.75, 0.75]
    assert w.labels == [HARD, VERY_HARD, VERY_HARD]
    assert w.easy_weight == 3.0
    assert w.z == 3


def test_classify_negatives_tie_is_very_hard():
    w = classify_negatives(0.5, [0.5], gamma=0.25)
    assert w.labels == [VERY_HARD]
    assert w.per_negative == [0.75]


def test_classify_negatives_flip_swaps_direction():
    w = classify_negatives(0.5, [0.4, 0.6], gamma=0.25, flip=True)
    assert w.per_negative == [0.75, 1.25]


def test_classify_negatives_detaches_tensor_scores():
    anchor = torch.tensor(0.6, requires_grad=True)
    w = classify_negatives(anchor, [0.4])
    assert w.as_tensor().grad_fn is None
    with pytest.raises(ConfigError):
        classify_negatives(0.5, [])


def test_contrastive_hand_value():
    # scalar features: anchor 0, positive 1, easy 3, one negative 2 at
    # weight 1.25 -> 1 / (1.25*2 + 1*3) = 1/5.5
    cfg = CrConfig(layer_ids=[1], xi=[1.0], z=1)
    weights = CurriculumWeights(gamma=0.25, z=1, per_negative=[1.25],
                                easy_weight=1.0, labels=[HARD])
    make = lambda v: torch.full((2, 2, 3), float(v))
    val = contrastive_regularization(make(0), make(1), make(3), [make(2)],
                                     weights, cfg, IdentityExtractor())
    assert float(val) == pytest.approx(1 / 5.5, abs=1e-6)


def test_contrastive_batch_matches_single():
    gen = torch.Generator().manual_seed(5)
    cfg = CrConfig(z=2)
    ext = create_feature_extractor({"kind": "stub", "seed": 0})
    anchor = torch.rand(3, 16, 16, 3, generator=gen)
    pos = torch.rand(3, 16, 16, 3, generator=gen)
    easy = torch.rand(3, 16, 16, 3, generator=gen)
    negs = [torch.rand(3, 16, 16, 3, generator=gen) for _ in range(2)]
    W = torch.tensor([[1.25, 0.75], [0.75, 0.75], [1.25, 1.25]])
    batch = contrastive_regularization_batch(anchor, pos, easy, negs, W, cfg, ext)
    assert batch.shape == (3,)
    for k in range(3):
        weights = CurriculumWeights(gamma=0.25, z=2, per_negative=W[k].tolist(),
                                    easy_weight=2.0)
        single = contrastive_regularization(anchor[k], pos[k], easy[k],
                                            [n[k] for n in negs], weights, cfg, ext)
        assert float(single) == pytest.approx(float(batch[k]), rel=1e-5)


def test_contrastive_degenerate_batch():
    cfg = CrConfig(layer_ids=[1], xi=[1.0], z=1)
    weights = CurriculumWeights(gamma=0.25, z=1, per_negative=[0.75], easy_weight=1.0)
    same = torch.full((2, 2, 3), 0.5)
    with pytest.raises(DegenerateBatchError):
        contrastive_regularization(same, same, same.clone(), [same.clone()],
                                   weights, cfg, IdentityExtractor())
    cfg_eps = CrConfig(layer_ids=[1], xi=[1.0], z=1, epsilon=1e-8)
    val = contrastive_regularization(same, same, same.clone(), [same.clone()],
                                     weights, cfg_eps, IdentityExtractor())
    assert torch.isfinite(val)


def test_contrastive_shape_validation():
    cfg = CrConfig(z=2)
    ext = create_feature_extractor({"kind": "stub", "seed": 0})
    imgs = torch.rand(2, 8, 8, 3)
    with pytest.raises(ShapeMismatchError):
        contrastive_regularization_batch(imgs, imgs, imgs, [imgs], torch.ones(2, 2), cfg, ext)
    with pytest.raises(ShapeMismatchError):
        contrastive_regularization_batch(imgs, imgs, imgs, [imgs, imgs], torch.ones(2, 3), cfg, ext)


def test_moving_anchor_toward_positive_does_not_increase_cr():
    # affine extractor so the numerator shrinks linearly along the path
    gen = torch.Generator().manual_seed(6)
    cfg = CrConfig(z=2)
    ext = create_feature_extractor({"kind": "stub", "seed": 0, "activation": "none"})
    anchor = torch.rand(1, 16, 16, 3, generator=gen)
    pos = torch.rand(1, 16, 16, 3, generator=gen)
    easy = torch.rand(1, 16, 16, 3, generator=gen)
    negs = [torch.rand(1, 16, 16, 3, generator=gen) for _ in range(2)]
    W = torch.tensor([[1.25, 0.75]])
    values = []
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        mixed = anchor + t * (pos - anchor)
        values.append(float(contrastive_regularization_batch(
            mixed, pos, easy, negs, W, cfg, ext)))
    for earlier, later in zip(values, values[1:]):
        assert later <= earlier + 1e-7
    assert values[-1] == pytest.approx(0.0, abs=1e-7)


def test_total_loss_hand_value():
    w = LossWeights(lambda1=0.025, lambda2=0.1)
    val = total_loss(torch.tensor(0.1), torch.tensor(0.4), torch.tensor(0.2), w)
    assert float(val) == pytest.approx(0.13, abs=1e-7)


def test_total_loss_default_weights_match_recipe():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.alpha) == (0.025, 0.1, 0.975)


def test_config_validation():
    with pytest.raises(ConfigError):
        CrConfig(layer_ids=[1, 3], xi=[1.0]).validate()
    with pytest.raises(ConfigError):
        CrConfig(z=0).validate()
    with pytest.raises(ConfigError):
        CrConfig(epsilon=-1.0).validate()
    with pytest.raises(ConfigError):
        LossWeights(alpha=1.5).validate()
    with pytest.raises(ConfigError):
        LossWeights(lambda1=-0.1).validate()
