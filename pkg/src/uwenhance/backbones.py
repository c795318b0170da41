"""Frozen encoder backbones behind a uniform interface.

Three roles: an image encoder and a text encoder sharing one embedding
space (CLIP-style, D=512 by default), and a multi-layer convolutional
feature extractor (VGG-style) for the contrastive regularizer.

Every backbone comes in two kinds:

* ``stub`` -- fixed-seed random projections / convolution stacks. No
  downloaded weights, deterministic, differentiable with respect to
  inputs, so the whole loss machinery is testable offline.
* ``real`` -- pretrained CLIP (via ``transformers``) and VGG-19 (via
  ``torchvision``), loaded lazily; raises ``CheckpointMissingError``
  when the weights or the optional dependency are unavailable.

Weights are frozen in all cases: gradients flow to inputs and prompt
tokens only, never to backbone parameters.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointMissingError, ConfigError, ShapeMismatchError
from .imageops import hwc_to_bchw

DEFAULT_EMBED_DIM = 512
# Conv layers of the extractor are counted 1..16 in VGG-19 block layout
# (2,2,4,4,4); features are taken after the ReLU of the requested conv.
VGG_BLOCK_LAYOUT = (2, 2, 4, 4, 4)
MAX_FEATURE_DEPTH = sum(VGG_BLOCK_LAYOUT)


@dataclass
class FeaturePyramid:
    """Features from the requested extractor layers, shallow to deep."""

    features: list
    layer_ids: list

    def __post_init__(self):
        if len(self.features) != len(self.layer_ids):
            raise ShapeMismatchError(
                f"{len(self.features)} feature maps for {len(self.layer_ids)} layer ids"
            )

    def __len__(self):
        return len(self.features)


def _seeded_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def _stable_token_id(token: str, vocab_size: int = 1 << 20) -> int:
    digest = hashlib.md5(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") % vocab_size


def _check_image_batch(images: torch.Tensor):
    if images.shape[-1] != 3:
        raise ShapeMismatchError(
            f"backbones take 3-channel HWC images, got shape {tuple(images.shape)}"
        )


class StubClipBackbone(nn.Module):
    """Weight-free stand-in for a CLIP image/text encoder pair.

    Image path: average-pool to ``image_size`` then a fixed random affine
    projection. Text path: mean token embedding then a fixed random affine
    projection. All weights are buffers drawn from ``seed``, so the module
    has no trainable parameters and is frozen by construction.
    """

    kind = "stub"

    def __init__(self, dim=DEFAULT_EMBED_DIM, token_dim=DEFAULT_EMBED_DIM,
                 image_size=32, seed=0, dtype=torch.float32):
        super().__init__()
        self.dim = dim
        self.token_dim = token_dim
        self.image_size = image_size
        self.seed = seed
        self.weights_ref = f"stub:seed={seed}"
        self.frozen = True
        gen = _seeded_generator(seed)
        in_features = 3 * image_size * image_size
        self.register_buffer(
            "image_proj",
            torch.randn(dim, in_features, generator=gen, dtype=dtype) / in_features**0.5,
        )
        self.register_buffer(
            "image_bias", torch.randn(dim, generator=gen, dtype=dtype) / dim**0.5
        )
        self.register_buffer(
            "text_proj",
            torch.randn(dim, token_dim, generator=gen, dtype=dtype) / token_dim**0.5,
        )
        self.register_buffer(
            "text_bias", torch.randn(dim, generator=gen, dtype=dtype) / dim**0.5
        )

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        _check_image_batch(images)
        squeeze = images.ndim == 3
        x = hwc_to_bchw(images).to(self.image_proj.dtype)
        x = F.adaptive_avg_pool2d(x, self.image_size)
        emb = x.flatten(1) @ self.image_proj.T + self.image_bias
        return emb.squeeze(0) if squeeze else emb

    def tokenize(self, text: str) -> torch.Tensor:
        words = re.findall(r"[a-z0-9]+", text.lower())
        if not words:
            raise ConfigError("prompt", f"no tokens in prompt text {text!r}")
        return torch.tensor([_stable_token_id(w) for w in words], dtype=torch.long)

    def embed_tokens(self, token_ids: torch.Tensor) -> torch.Tensor:
        rows = []
        for token_id in token_ids.tolist():
            gen = _seeded_generator((self.seed + 1) * 1_000_003 + token_id)
            rows.append(torch.randn(self.token_dim, generator=gen) / self.token_dim**0.5)
        return torch.stack(rows).to(self.text_proj.dtype)

    def encode_text(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 2:
            raise ShapeMismatchError(f"expected NxD token matrix, got {tuple(tokens.shape)}")
        if tokens.shape[1] != self.token_dim:
            raise ShapeMismatchError(
                f"token width {tokens.shape[1]} does not match backbone width {self.token_dim}"
            )
        pooled = tokens.to(self.text_proj.dtype).mean(dim=0)
        return pooled @ self.text_proj.T + self.text_bias

    def describe(self) -> dict:
        return {
            "kind": "stub",
            "dim": self.dim,
            "token_dim": self.token_dim,
            "image_size": self.image_size,
            "seed": self.seed,
            "preprocess": "raw [0,1] pixels, average-pooled",
        }


class RealClipBackbone(nn.Module):
    """Pretrained CLIP behind the same interface (ViT-B/32 class, D=512).

    Preprocessing (224x224 bicubic resize + CLIP channel normalization)
    happens inside ``encode_image`` and stays differentiable. Learned
    prompts bypass the token-id path: embeddings run through the text
    transformer and are pooled at the final token, which is the EOT
    position for unpadded prompts.
    """

    kind = "real"

    def __init__(self, weights_ref="openai/clip-vit-base-patch32"):
        super().__init__()
        self.weights_ref = weights_ref
        self.frozen = True
        try:
            from transformers import CLIPModel, CLIPTokenizer
        except ImportError as exc:
            raise CheckpointMissingError(
                f"real CLIP backbone needs the 'transformers' package: {exc}"
            )
        try:
            self.model = CLIPModel.from_pretrained(weights_ref)
            self.tokenizer = CLIPTokenizer.from_pretrained(weights_ref)
        except Exception as exc:
            raise CheckpointMissingError(
                f"could not load CLIP weights from {weights_ref!r}: {exc}"
            )
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.dim = self.model.config.projection_dim
        self.token_dim = self.model.config.text_config.hidden_size
        mean = torch.tensor([0.48145466, 0.4578275, 0.40821073]).view(1, 3, 1, 1)
        std = torch.tensor([0.26862954, 0.26130258, 0.27577711]).view(1, 3, 1, 1)
        self.register_buffer("pixel_mean", mean)
        self.register_buffer("pixel_std", std)

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        _check_image_batch(images)
        squeeze = images.ndim == 3
        x = hwc_to_bchw(images).float()
        x = F.interpolate(x, size=(224, 224), mode="bicubic", align_corners=False)
        x = (x - self.pixel_mean) / self.pixel_std
        emb = self.model.get_image_features(pixel_values=x)
        return emb.squeeze(0) if squeeze else emb

    def tokenize(self, text: str) -> torch.Tensor:
        ids = self.tokenizer(text, return_tensors="pt").input_ids[0]
        return ids

    def embed_tokens(self, token_ids: torch.Tensor) -> torch.Tensor:
        table = self.model.text_model.embeddings.token_embedding
        return table(token_ids).detach()

    def encode_text(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 2:
            raise ShapeMismatchError(f"expected NxD token matrix, got {tuple(tokens.shape)}")
        if tokens.shape[1] != self.token_dim:
            raise ShapeMismatchError(
                f"token width {tokens.shape[1]} does not match backbone width {self.token_dim}"
            )
        text_model = self.model.text_model
        x = tokens.unsqueeze(0)
        seq_len = x.shape[1]
        positions = text_model.embeddings.position_embedding.weight[:seq_len]
        hidden = x + positions.unsqueeze(0)
        mask = torch.full((seq_len, seq_len), float("-inf"), dtype=hidden.dtype)
        mask = torch.triu(mask, diagonal=1).unsqueeze(0).unsqueeze(0)
        out = text_model.encoder(inputs_embeds=hidden, causal_attention_mask=mask)
        hidden = text_model.final_layer_norm(out.last_hidden_state)
        pooled = hidden[:, -1, :]
        return (pooled @ self.model.text_projection.weight.T).squeeze(0)

    def describe(self) -> dict:
        return {
            "kind": "real",
            "weights_ref": self.weights_ref,
            "dim": self.dim,
            "token_dim": self.token_dim,
            "preprocess": "clip 224 bicubic + channel normalization",
        }


class StubFeatureExtractor(nn.Module):
    """Fixed random convolution stack mirroring the VGG-19 block layout.

    Reflect padding keeps constant images constant through every layer
    (replicate once a side shrinks to 1 px, where reflect is undefined);
    ceil-mode average pooling between blocks keeps spatial size
    non-increasing without ever reaching zero. ``activation='none'``
    yields a purely affine extractor, useful for directional tests.
    """

    kind = "stub"

    def __init__(self, seed=0, widths=(8, 16, 24, 32, 32), activation="relu",
                 dtype=torch.float32):
        super().__init__()
        if activation not in ("relu", "none"):
            raise ConfigError("activation", f"unknown activation {activation!r}")
        self.seed = seed
        self.activation = activation
        self.widths = tuple(widths)
        self.weights_ref = f"stub:seed={seed}"
        self.frozen = True
        self.max_depth = MAX_FEATURE_DEPTH
        gen = _seeded_generator(seed + 7919)
        weights = []
        in_ch = 3
        for block, count in enumerate(VGG_BLOCK_LAYOUT):
            out_ch = widths[block]
            for _ in range(count):
                w = torch.randn(out_ch, in_ch, 3, 3, generator=gen, dtype=dtype)
                w = w / (9 * in_ch) ** 0.5
                b = torch.randn(out_ch, generator=gen, dtype=dtype) * 0.01
                weights.append((w, b))
                in_ch = out_ch
        for i, (w, b) in enumerate(weights):
            self.register_buffer(f"conv_w{i}", w)
            self.register_buffer(f"conv_b{i}", b)
        # pool before the first conv of blocks 2..5 (after convs 2, 4, 8, 12)
        starts = []
        total = 0
        for count in VGG_BLOCK_LAYOUT[:-1]:
            total += count
            starts.append(total)
        self._pool_before = set(starts)

    def extract(self, images: torch.Tensor, layer_ids) -> list:
        _check_image_batch(images)
        layer_ids = list(layer_ids)
        for lid in layer_ids:
            if not 1 <= lid <= self.max_depth:
                raise ConfigError("layer_ids", f"layer {lid} outside 1..{self.max_depth}")
        x = hwc_to_bchw(images).to(getattr(self, "conv_w0").dtype)
        wanted = {lid: None for lid in layer_ids}
        depth = max(layer_ids, default=0)
        for i in range(depth):
            if i in self._pool_before:
                x = F.avg_pool2d(x, 2, ceil_mode=True)
            pad_mode = "reflect" if min(x.shape[-2:]) > 1 else "replicate"
            x = F.conv2d(F.pad(x, (1, 1, 1, 1), mode=pad_mode),
                         getattr(self, f"conv_w{i}"), getattr(self, f"conv_b{i}"))
            if self.activation == "relu":
                x = F.relu(x)
            if (i + 1) in wanted:
                wanted[i + 1] = x
        return [wanted[lid] for lid in layer_ids]

    def describe(self) -> dict:
        return {
            "kind": "stub",
            "seed": self.seed,
            "widths": list(self.widths),
            "activation": self.activation,
            "preprocess": "raw [0,1] pixels",
        }


class VggFeatureExtractor(nn.Module):
    """Pretrained VGG-19 features, conv layers counted 1..16.

    ``extract`` returns the post-ReLU output of each requested conv; for
    layer ids [1, 3, 5, 9, 13] this is relu1_1 .. relu5_1. Inputs get
    ImageNet channel normalization inside the module.
    """

    kind = "real"

    def __init__(self, weights_ref=None):
        super().__init__()
        self.weights_ref = weights_ref or "torchvision:vgg19"
        self.frozen = True
        self.max_depth = MAX_FEATURE_DEPTH
        try:
            from torchvision.models import vgg19
        except ImportError as exc:
            raise CheckpointMissingError(
                f"real VGG backbone needs the 'torchvision' package: {exc}"
            )
        try:
            if weights_ref:
                model = vgg19(weights=None)
                state = torch.load(weights_ref, map_location="cpu", weights_only=True)
                model.load_state_dict(state)
            else:
                from torchvision.models import VGG19_Weights

                model = vgg19(weights=VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise CheckpointMissingError(f"could not load VGG-19 weights: {exc}")
        self.features = model.features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        conv_positions = [i for i, m in enumerate(self.features) if isinstance(m, nn.Conv2d)]
        # post-ReLU module index for the k-th conv layer
        self._relu_index = {k + 1: pos + 1 for k, pos in enumerate(conv_positions)}
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        self.register_buffer("pixel_mean", mean)
        self.register_buffer("pixel_std", std)

    def extract(self, images: torch.Tensor, layer_ids) -> list:
        _check_image_batch(images)
        layer_ids = list(layer_ids)
        for lid in layer_ids:
            if lid not in self._relu_index:
                raise ConfigError("layer_ids", f"layer {lid} outside 1..{self.max_depth}")
        x = hwc_to_bchw(images).float()
        x = (x - self.pixel_mean) / self.pixel_std
        wanted = {self._relu_index[lid]: lid for lid in layer_ids}
        out = {}
        stop = max(wanted, default=-1)
        for i, module in enumerate(self.features):
            if i > stop:
                break
            x = module(x)
            if i in wanted:
                out[wanted[i]] = x
        return [out[lid] for lid in layer_ids]

    def describe(self) -> dict:
        return {"kind": "real", "weights_ref": self.weights_ref,
                "preprocess": "imagenet channel normalization"}


# ---------------------------------------------------------------------------
# module-level operations and factories
# ---------------------------------------------------------------------------

def encode_image(image, handle) -> torch.Tensor:
    """Embed an image (or batch) with a frozen image encoder."""
    return handle.encode_image(image)


def tokenize(text: str, handle) -> list:
    return handle.tokenize(text)


def embed_tokens(token_ids, handle) -> torch.Tensor:
    return handle.embed_tokens(token_ids)


def encode_text(tokens: torch.Tensor, handle) -> torch.Tensor:
    """Pool a token matrix into one text embedding (keeps gradients)."""
    return handle.encode_text(tokens)


def encode_prompts(prompts, handle):
    """Embed both halves of a learnable prompt pair.

    Differentiable with respect to the token matrices: this is the
    prompt-learning path.
    """
    return (handle.encode_text(prompts.positive_tokens),
            handle.encode_text(prompts.negative_tokens))


def extract_features(image, layer_ids, handle) -> FeaturePyramid:
    """Multi-layer features for the contrastive regularizer."""
    ids = sorted(layer_ids)
    return FeaturePyramid(features=handle.extract(image, ids), layer_ids=ids)


def _descriptor_dtype(descriptor: dict) -> torch.dtype:
    name = descriptor.get("dtype", "float32")
    try:
        dtype = getattr(torch, name)
    except AttributeError:
        dtype = None
    if not isinstance(dtype, torch.dtype):
        raise ConfigError("backbone.dtype", f"unknown dtype {name!r}")
    return dtype


def create_clip_backbone(descriptor: dict):
    kind = descriptor.get("kind", "stub")
    if kind == "stub":
        return StubClipBackbone(
            dim=descriptor.get("dim", DEFAULT_EMBED_DIM),
            token_dim=descriptor.get("token_dim", DEFAULT_EMBED_DIM),
            image_size=descriptor.get("image_size", 32),
            seed=descriptor.get("seed", 0),
            dtype=_descriptor_dtype(descriptor),
        )
    if kind == "real":
        return RealClipBackbone(descriptor.get("weights_ref", "openai/clip-vit-base-patch32"))
    raise ConfigError("backbone.kind", f"unknown kind {kind!r}")


def create_feature_extractor(descriptor: dict):
    kind = descriptor.get("kind", "stub")
    if kind == "stub":
        return StubFeatureExtractor(
            seed=descriptor.get("seed", 0),
            widths=tuple(descriptor.get("widths", (8, 16, 24, 32, 32))),
            activation=descriptor.get("activation", "relu"),
            dtype=_descriptor_dtype(descriptor),
        )
    if kind == "real":
        return VggFeatureExtractor(descriptor.get("weights_ref"))
    raise ConfigError("extractor.kind", f"unknown kind {kind!r}")
