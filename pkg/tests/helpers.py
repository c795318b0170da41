"""Shared synthetic fixtures for the test suite.

Everything is seeded and generated on the fly; no binary assets except
the golden files produced by the first validated runs.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from uwenhance.perception import MosSample, PerceptionModelState, PromptPair, init_prompt_pair
from uwenhance.backbones import create_clip_backbone
from uwenhance.trainer import TrainPair

# normalized opinion ladder for the 6-level blur fixture; monotone,
# centered on 0.5 and well inside the reachable softmax-score range
LADDER_MOS = (0.65, 0.59, 0.53, 0.47, 0.41, 0.35)
LADDER_KERNELS = (0, 3, 5, 7, 9, 13)


def box_blur(image: torch.Tensor, k: int) -> torch.Tensor:
    """k x k box blur of an HWC image (reflect padding); k=0 is identity."""
    if k <= 1:
        return image.clone()
    x = image.permute(2, 0, 1).unsqueeze(0)
    kernel = torch.ones(3, 1, k, k, dtype=image.dtype) / (k * k)
    x = F.conv2d(F.pad(x, (k // 2,) * 4, mode="reflect"), kernel, groups=3)
    return x.squeeze(0).permute(1, 2, 0)


def make_pattern(size: int = 64, seed: int = 0) -> torch.Tensor:
    """Mid-frequency test pattern: random sinusoid mixture per channel.

    Wavelengths stay above 6 px so content survives 2x pooling but is
    still strongly attenuated by the blur kernels used in fixtures.
    """
    gen = torch.Generator().manual_seed(seed)
    ys, xs = torch.meshgrid(torch.arange(size, dtype=torch.float32),
                            torch.arange(size, dtype=torch.float32), indexing="ij")
    channels = []
    for _ in range(3):
        acc = torch.zeros(size, size)
        for _ in range(4):
            fx = float(torch.empty(1).uniform_(0.5, 2.5, generator=gen)) * 2 * math.pi / 16
            fy = float(torch.empty(1).uniform_(0.5, 2.5, generator=gen)) * 2 * math.pi / 16
            phase = float(torch.empty(1).uniform_(0, 2 * math.pi, generator=gen))
            amp = float(torch.empty(1).uniform_(0.5, 1.0, generator=gen))
            acc = acc + amp * torch.sin(fx * xs + fy * ys + phase)
        lo, hi = float(acc.min()), float(acc.max())
        channels.append(0.15 + 0.7 * (acc - lo) / (hi - lo))
    return torch.stack(channels, dim=-1)


def degrade(image: torch.Tensor, seed: int = 0) -> torch.Tensor:
    """Underwater-style degradation: channel cast (red suppressed most)
    plus a mild box blur."""
    gen = torch.Generator().manual_seed(seed)
    cast = torch.tensor([
        float(torch.empty(1).uniform_(0.50, 0.62, generator=gen)),
        float(torch.empty(1).uniform_(0.72, 0.85, generator=gen)),
        float(torch.empty(1).uniform_(0.92, 1.00, generator=gen)),
    ])
    offset = float(torch.empty(1).uniform_(0.02, 0.06, generator=gen))
    degraded = box_blur(image * cast + offset, 3)
    return degraded.clamp(0.0, 1.0)


def make_toy_pairs(n: int = 16, size: int = 64, seed: int = 100) -> list:
    pairs = []
    for i in range(n):
        clean = make_pattern(size, seed=seed + i)
        pairs.append(TrainPair(f"toy{i:02d}", degrade(clean, seed=seed + 1000 + i), clean))
    return pairs


def make_blur_ladder(size: int = 64, seed: int = 7) -> list:
    """One base pattern at six blur levels with a monotone opinion score."""
    base = make_pattern(size, seed=seed)
    return [MosSample(image=box_blur(base, k), s_mos=mos)
            for k, mos in zip(LADDER_KERNELS, LADDER_MOS)]


def stub_state(seed: int = 0, temperature: float = 1.0, dtype: str = "float32",
               image_size: int = 32) -> PerceptionModelState:
    """Perception model over the stub backbone with freshly initialized
    (untrained) prompts."""
    descriptor = {"kind": "stub", "seed": seed, "dtype": dtype, "image_size": image_size}
    backbone = create_clip_backbone(descriptor)
    prompts = init_prompt_pair(backbone)
    return PerceptionModelState(prompts=prompts, backbone=backbone,
                                backbone_descriptor=descriptor, temperature=temperature)
