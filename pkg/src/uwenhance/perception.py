"""Perception quality model: a learnable prompt pair over a frozen backbone.

Only the two prompt token matrices train. An image's quality score is the
softmax over its cosine similarities to the positive and negative prompt
embeddings, regressed against normalized opinion scores. The same scoring
path later drives the enhancement losses, so everything here stays
differentiable with respect to both prompts and image pixels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from . import backbones
from .backbones import create_clip_backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NonFiniteLossError
from .imageops import as_image_tensor

POSITIVE_INIT = "Clear Underwater photo."
NEGATIVE_INIT = "Turbid Underwater photo."


@dataclass
class PromptPair:
    """Learnable token matrices for the clear / turbid prompt pair."""

    positive_tokens: torch.Tensor
    negative_tokens: torch.Tensor

    def __post_init__(self):
        p, n = self.positive_tokens, self.negative_tokens
        if p.ndim != 2 or n.ndim != 2 or p.shape != n.shape:
            raise ConfigError("prompts", f"token matrices must match, got {tuple(p.shape)} and {tuple(n.shape)}")
        if not (torch.isfinite(p).all() and torch.isfinite(n).all()):
            raise ConfigError("prompts", "token matrices contain non-finite values")

    def parameters(self):
        return [self.positive_tokens, self.negative_tokens]

    def clone(self) -> "PromptPair":
        return PromptPair(self.positive_tokens.detach().clone(),
                          self.negative_tokens.detach().clone())


@dataclass
class PerceptionScore:
    s_out: float
    s_p: float
    s_n: float


@dataclass
class MosSample:
    image: torch.Tensor
    s_mos: float


@dataclass
class PerceptionModelState:
    prompts: PromptPair
    backbone: object
    backbone_descriptor: dict
    iteration: int = 0
    temperature: float = 1.0
    mos_scale: float | None = None


def init_prompt_pair(backbone, positive_text: str = POSITIVE_INIT,
                     negative_text: str = NEGATIVE_INIT) -> PromptPair:
    pos = backbones.embed_tokens(backbones.tokenize(positive_text, backbone), backbone)
    neg = backbones.embed_tokens(backbones.tokenize(negative_text, backbone), backbone)
    if pos.shape[0] != neg.shape[0]:
        raise ConfigError(
            "prompts",
            f"init texts tokenize to different lengths ({pos.shape[0]} vs {neg.shape[0]})")
    return PromptPair(pos.detach().clone(), neg.detach().clone())


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.cosine_similarity(a, b, dim=-1)


def _score_from_embedding(image_emb: torch.Tensor, state: PerceptionModelState):
    """Softmax-normalized score from a precomputed image embedding.

    ``image_emb`` is (D,) or (B,D); returns (s_out, s_p, s_n) tensors of
    matching batch shape.
    """
    text_p = backbones.encode_text(state.prompts.positive_tokens, state.backbone)
    text_n = backbones.encode_text(state.prompts.negative_tokens, state.backbone)
    s_p = _cosine(image_emb, text_p.expand_as(image_emb) if image_emb.ndim > 1 else text_p)
    s_n = _cosine(image_emb, text_n.expand_as(image_emb) if image_emb.ndim > 1 else text_n)
    tau = state.temperature
    if tau <= 0:
        raise ConfigError("qa.temperature", "must be > 0")
    pair = torch.stack([s_p / tau, s_n / tau], dim=-1)
    s_out = torch.softmax(pair, dim=-1)[..., 0]
    return s_out, s_p, s_n


def similarity_scores(image, state: PerceptionModelState):
    """Cosine similarities of one image to the two prompt embeddings."""
    emb = backbones.encode_image(as_image_tensor(image), state.backbone)
    _, s_p, s_n = _score_from_embedding(emb, state)
    return float(s_p), float(s_n)


def perception_score(image, state: PerceptionModelState) -> PerceptionScore:
    emb = backbones.encode_image(as_image_tensor(image), state.backbone)
    s_out, s_p, s_n = _score_from_embedding(emb, state)
    return PerceptionScore(s_out=float(s_out), s_p=float(s_p), s_n=float(s_n))


def score_images(images: torch.Tensor, state: PerceptionModelState) -> torch.Tensor:
    """Differentiable batched scoring, (B,H,W,3) -> (B,)."""
    emb = backbones.encode_image(images, state.backbone)
    if emb.ndim == 1:
        emb = emb.unsqueeze(0)
    s_out, _, _ = _score_from_embedding(emb, state)
    return s_out


def prompt_loss(batch, state: PerceptionModelState) -> torch.Tensor:
    """Mean squared gap between softmax scores and opinion scores."""
    if len(batch) == 0:
        raise DataError("empty opinion-score batch")
    embs = torch.stack([backbones.encode_image(as_image_tensor(s.image), state.backbone)
                        for s in batch])
    targets = torch.tensor([s.s_mos for s in batch], dtype=embs.dtype)
    return _prompt_loss_from_embeddings(embs, targets, state)


def _prompt_loss_from_embeddings(embs: torch.Tensor, targets: torch.Tensor,
                                 state: PerceptionModelState) -> torch.Tensor:
    s_out, _, _ = _score_from_embedding(embs, state)
    return ((targets - s_out) ** 2).mean()


@dataclass
class QaTrainConfig:
    """Prompt-learning schedule. SGD at 0.002 over 100k iterations of
    batch 64 matches the published recipe; shrink for smoke tests."""

    backbone: dict = field(default_factory=lambda: {"kind": "stub", "seed": 0})
    iterations: int = 100_000
    batch_size: int = 64
    learning_rate: float = 0.002
    temperature: float = 1.0
    seed: int = 0
    log_interval: int = 1000
    positive_prompt: str = POSITIVE_INIT
    negative_prompt: str = NEGATIVE_INIT

    def validate(self):
        if self.iterations < 0:
            raise ConfigError("qa.iterations", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("qa.batch_size", "must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("qa.learning_rate", "must be > 0")
        if self.temperature <= 0:
            raise ConfigError("qa.temperature", "must be > 0")
        return self


def train_perception_model(dataset, config: QaTrainConfig,
                           log_path=None) -> PerceptionModelState:
    """Fit the prompt pair to an opinion-scored dataset.

    The backbone is frozen and the images never change, so their
    embeddings are computed once up front; each SGD step touches only the
    two token matrices. Batches are drawn from a seeded shuffle, topping
    up with replacement when the dataset is smaller than the batch.
    """
    config.validate()
    if len(dataset) == 0:
        raise DataError("empty opinion-score dataset")
    backbone = create_clip_backbone(config.backbone)
    prompts = init_prompt_pair(backbone, config.positive_prompt, config.negative_prompt)
    state = PerceptionModelState(prompts=prompts, backbone=backbone,
                                 backbone_descriptor=dict(config.backbone),
                                 temperature=config.temperature)

    with torch.no_grad():
        embs = torch.stack([backbones.encode_image(as_image_tensor(s.image), backbone)
                            for s in dataset])
    targets = torch.tensor([s.s_mos for s in dataset], dtype=embs.dtype)

    for t in prompts.parameters():
        t.requires_grad_(True)
    opt = torch.optim.SGD(prompts.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed)
    n = embs.shape[0]
    order = torch.randperm(n, generator=gen)
    cursor = 0
    log_rows = []

    for it in range(config.iterations):
        idx = []
        while len(idx) < config.batch_size:
            if cursor >= n:
                order = torch.randperm(n, generator=gen)
                cursor = 0
            take = min(config.batch_size - len(idx), n - cursor)
            idx.extend(order[cursor : cursor + take].tolist())
            cursor += take
        batch_idx = torch.tensor(idx)
        loss = _prompt_loss_from_embeddings(embs[batch_idx], targets[batch_idx], state)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(f"prompt loss became non-finite at iteration {it}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        state.iteration = it + 1
        if log_path is not None and (it + 1) % config.log_interval == 0:
            log_rows.append({"iteration": it + 1, "prompt_loss": float(loss.detach())})

    for t in prompts.parameters():
        t.requires_grad_(False)
    if log_path is not None:
        with open(log_path, "w") as fh:
            for row in log_rows:
                fh.write(json.dumps(row) + "\n")
    return state


def evaluate_perception_model(state: PerceptionModelState, test):
    """Linear and rank correlation of predicted scores against opinions."""
    from .metrics import plcc, srocc

    preds, truths = [], []
    with torch.no_grad():
        for sample in test:
            preds.append(perception_score(sample.image, state).s_out)
            truths.append(sample.s_mos)
    return plcc(preds, truths), srocc(preds, truths)


def save_perception_model(state: PerceptionModelState, path):
    payload = {
        "kind": "perception",
        "positive_tokens": state.prompts.positive_tokens.detach(),
        "negative_tokens": state.prompts.negative_tokens.detach(),
        "backbone_descriptor": json.dumps(state.backbone_descriptor),
        "iteration": state.iteration,
        "temperature": state.temperature,
        "mos_scale": math.nan if state.mos_scale is None else float(state.mos_scale),
    }
    save_checkpoint(payload, path)


def load_perception_model(path) -> PerceptionModelState:
    payload = load_checkpoint(path)
    if payload.get("kind") != "perception":
        raise DataError(f"not a perception checkpoint: {path}")
    descriptor = json.loads(payload["backbone_descriptor"])
    backbone = create_clip_backbone(descriptor)
    prompts = PromptPair(payload["positive_tokens"], payload["negative_tokens"])
    mos_scale = float(payload["mos_scale"])
    return PerceptionModelState(
        prompts=prompts, backbone=backbone, backbone_descriptor=descriptor,
        iteration=int(payload["iteration"]), temperature=float(payload["temperature"]),
        mos_scale=None if math.isnan(mos_scale) else mos_scale)
