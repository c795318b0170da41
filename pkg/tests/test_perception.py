"""Prompt-pair quality scoring and prompt training."""

import json

import pytest
import torch

from helpers import make_blur_ladder, make_pattern, stub_state
from uwenhance.backbones import create_clip_backbone, encode_text
from uwenhance.errors import CheckpointMissingError, ConfigError, DataError
from uwenhance.perception import (MosSample, PerceptionModelState, PromptPair,
                                  QaTrainConfig, evaluate_perception_model,
                                  init_prompt_pair, load_perception_model, perception_score,
                                  prompt_loss, save_perception_model, score_images,
                                  similarity_scores, train_perception_model,
                                  _score_from_embedding)


def test_score_lies_in_unit_interval():
    state = stub_state(seed=0)
    score = perception_score(torch.rand(16, 16, 3), state)
    assert 0.0 < score.s_out < 1.0
    assert -1.0 <= score.s_p <= 1.0
    assert -1.0 <= score.s_n <= 1.0


def test_swapping_prompts_mirrors_score():
    state = stub_state(seed=0)
    img = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(1))
    swapped = PerceptionModelState(
        prompts=PromptPair(state.prompts.negative_tokens.clone(),
                           state.prompts.positive_tokens.clone()),
        backbone=state.backbone, backbone_descriptor=state.backbone_descriptor,
        temperature=state.temperature)
    s = perception_score(img, state).s_out
    assert perception_score(img, swapped).s_out == pytest.approx(1.0 - s, abs=1e-6)


def test_orthogonal_embedding_scores_zero_similarity():
    state = stub_state(seed=0, dtype="float64")
    text_p = encode_text(state.prompts.positive_tokens, state.backbone)
    # Gram-Schmidt a random vector against the positive prompt embedding
    raw = torch.randn(text_p.shape[0], dtype=torch.float64,
                      generator=torch.Generator().manual_seed(2))
    emb = raw - (raw @ text_p) / (text_p @ text_p) * text_p
    _, s_p, _ = _score_from_embedding(emb, state)
    assert abs(float(s_p)) < 1e-6


def test_score_images_batch_and_gradients():
    state = stub_state(seed=0)
    imgs = torch.rand(4, 16, 16, 3, requires_grad=True)
    scores = score_images(imgs, state)
    assert scores.shape == (4,)
    scores.sum().backward()
    assert imgs.grad is not None
    assert float(imgs.grad.abs().sum()) > 0.0


def test_similarity_scores_are_cosines():
    state = stub_state(seed=0)
    s_p, s_n = similarity_scores(torch.rand(8, 8, 3), state)
    assert -1.0 <= s_p <= 1.0
    assert -1.0 <= s_n <= 1.0


def test_prompt_loss_zero_when_labels_match_predictions():
    state = stub_state(seed=0)
    imgs = [torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(i)) for i in range(3)]
    scored = [MosSample(img, perception_score(img, state).s_out) for img in imgs]
    assert float(prompt_loss(scored, state)) == pytest.approx(0.0, abs=1e-10)
    shifted = [MosSample(s.image, s.s_mos + 0.1) for s in scored]
    assert float(prompt_loss(shifted, state)) == pytest.approx(0.01, abs=1e-6)


def test_temperature_must_be_positive():
    state = stub_state(seed=0, temperature=1.0)
    state.temperature = 0.0
    with pytest.raises(ConfigError):
        perception_score(torch.rand(8, 8, 3), state)


def test_init_prompt_pair_requires_equal_lengths():
    bk = create_clip_backbone({"kind": "stub", "seed": 0})
    pair = init_prompt_pair(bk)
    assert pair.positive_tokens.shape == pair.negative_tokens.shape
    with pytest.raises(ConfigError):
        init_prompt_pair(bk, "clear underwater photo", "turbid water")


def test_prompt_pair_validation():
    with pytest.raises(ConfigError):
        PromptPair(torch.zeros(2, 8), torch.zeros(3, 8))
    with pytest.raises(ConfigError):
        PromptPair(torch.full((2, 8), float("nan")), torch.zeros(2, 8))


def test_training_reduces_loss_and_freezes_backbone():
    ladder = make_blur_ladder()
    cfg = QaTrainConfig(backbone={"kind": "stub", "seed": 0}, iterations=300,
                        batch_size=6, learning_rate=0.02, temperature=0.05, seed=0)
    state = train_perception_model(ladder, cfg)
    proj_after = state.backbone.image_proj.clone()
    fresh = create_clip_backbone({"kind": "stub", "seed": 0})
    assert torch.equal(proj_after, fresh.image_proj)
    assert state.iteration == 300
    assert not state.prompts.positive_tokens.requires_grad

    baseline = stub_state(seed=0, temperature=0.05)
    with torch.no_grad():
        assert float(prompt_loss(ladder, state)) < float(prompt_loss(ladder, baseline))


def test_training_is_deterministic():
    ladder = make_blur_ladder()
    cfg = QaTrainConfig(backbone={"kind": "stub", "seed": 0}, iterations=100,
                        batch_size=4, learning_rate=0.02, temperature=0.05, seed=3)
    a = train_perception_model(ladder, cfg)
    b = train_perception_model(ladder, cfg)
    assert torch.equal(a.prompts.positive_tokens, b.prompts.positive_tokens)
    assert torch.equal(a.prompts.negative_tokens, b.prompts.negative_tokens)


def test_training_writes_log(tmp_path):
    ladder = make_blur_ladder()
    log = tmp_path / "qa.jsonl"
    cfg = QaTrainConfig(backbone={"kind": "stub", "seed": 0}, iterations=50,
                        batch_size=6, learning_rate=0.02, temperature=0.05,
                        log_interval=10)
    train_perception_model(ladder, cfg, log_path=log)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["iteration"] for r in rows] == [10, 20, 30, 40, 50]
    assert all("prompt_loss" in r for r in rows)


def test_trained_model_orders_clean_above_degraded():
    base = make_pattern(48, seed=9)
    noisy = (base + 0.4 * torch.randn(48, 48, 3,
             generator=torch.Generator().manual_seed(10))).clamp(0, 1)
    data = [MosSample(base, 0.9), MosSample(noisy, 0.1)]
    cfg = QaTrainConfig(backbone={"kind": "stub", "seed": 0}, iterations=500,
                        batch_size=2, learning_rate=0.02, temperature=0.05)
    state = train_perception_model(data, cfg)
    assert perception_score(base, state).s_out > perception_score(noisy, state).s_out


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        train_perception_model([], QaTrainConfig(iterations=1))


def test_qa_config_validation():
    with pytest.raises(ConfigError):
        QaTrainConfig(iterations=-1).validate()
    with pytest.raises(ConfigError):
        QaTrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        QaTrainConfig(learning_rate=0.0).validate()
    with pytest.raises(ConfigError):
        QaTrainConfig(temperature=-0.5).validate()


def test_evaluation_correlates_on_fit_labels():
    state = stub_state(seed=0)
    imgs = [torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(20 + i))
            for i in range(5)]
    fitted = [MosSample(img, perception_score(img, state).s_out) for img in imgs]
    linear, rank = evaluate_perception_model(state, fitted)
    assert linear == pytest.approx(1.0, abs=1e-6)
    assert rank == pytest.approx(1.0, abs=1e-6)


def test_save_load_round_trip(tmp_path):
    ladder = make_blur_ladder()
    cfg = QaTrainConfig(backbone={"kind": "stub", "seed": 0}, iterations=20,
                        batch_size=6, temperature=0.05)
    state = train_perception_model(ladder, cfg)
    state.mos_scale = 100.0
    path = tmp_path / "perception.ckpt"
    save_perception_model(state, path)
    loaded = load_perception_model(path)
    img = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(4))
    assert perception_score(img, loaded).s_out == perception_score(img, state).s_out
    assert loaded.temperature == state.temperature
    assert loaded.mos_scale == 100.0
    assert loaded.iteration == 20
    with pytest.raises(CheckpointMissingError):
        load_perception_model(tmp_path / "missing.ckpt")
