"""VSR backbone contract and the two shipped backbones.

A backbone maps a list of K frames (C, h, w) to K frames (C, s*h, s*w). It
sees latents as an ordinary clip; no grouping metadata crosses the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .archive import load_archive, save_archive
from .codec import NEG_SLOPE, LatentSequence, ResidualBlock, conv3, to_channels_last
from .cube import ParameterError, ShapeError, plan_groups


@dataclass(frozen=True)
class BackboneSpec:
    name: str = "toy"
    scale: int = 4
    archive: str | None = None
    supports_sequence: bool = False

    def __post_init__(self):
        if self.scale < 1:
            raise ParameterError(f"scale must be >= 1, got {self.scale}")


def bicubic(x: torch.Tensor, scale: int) -> torch.Tensor:
    if scale == 1:
        return x
    return F.interpolate(x, scale_factor=scale, mode="bicubic", align_corners=False)


class BicubicBackbone(nn.Module):
    """Parameter-free stub: bicubic interpolation (identity at scale 1)."""

    def __init__(self, scale: int = 4):
        super().__init__()
        self.scale = scale

    def forward(self, x):
        return bicubic(x, self.scale)


class ToyBackbone(nn.Module):
    """Residual trunk plus a sub-pixel upsampler, added to a bicubic skip path."""

    def __init__(self, scale: int = 4, width: int = 64, blocks: int = 8, channels: int = 3):
        super().__init__()
        self.scale = scale
        self.arch = {"scale": scale, "width": width, "blocks": blocks, "channels": channels}
        self.head = conv3(channels, width)
        self.body = nn.Sequential(*[ResidualBlock(width) for _ in range(blocks)])
        self.fuse = conv3(width, width)
        self.upsample = conv3(width, channels * scale * scale)
        self.shuffle = nn.PixelShuffle(scale)
        nn.init.zeros_(self.upsample.weight)
        nn.init.zeros_(self.upsample.bias)

    def forward(self, x):
        feat = F.leaky_relu(self.head(x), NEG_SLOPE)
        feat = F.leaky_relu(self.fuse(self.body(feat)), NEG_SLOPE) + feat
        return self.shuffle(self.upsample(feat)) + bicubic(x, self.scale)

    def save(self, path, extra: dict | None = None) -> Path:
        tensors = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        return save_archive(path, "backbone/toy", self.arch, tensors, extra)

    @classmethod
    def load(cls, path, scale: int | None = None) -> "ToyBackbone":
        header, tensors = load_archive(path, "backbone/toy")
        arch = header["arch"]
        if scale is not None and arch["scale"] != scale:
            raise ParameterError(f"archive scale {arch['scale']} != requested {scale}")
        model = cls(**arch)
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return model.eval()


REGISTRY: dict[str, Callable[[BackboneSpec], nn.Module]] = {
    "bicubic": lambda spec: BicubicBackbone(spec.scale),
    "toy": lambda spec: ToyBackbone.load(spec.archive, spec.scale) if spec.archive else ToyBackbone(spec.scale),
}


def register_backbone(name: str, factory: Callable[[BackboneSpec], nn.Module]) -> None:
    REGISTRY[name] = factory


def build_backbone(spec: BackboneSpec) -> nn.Module:
    try:
        factory = REGISTRY[spec.name]
    except KeyError:
        raise ParameterError(f"unknown backbone {spec.name!r}; known: {sorted(REGISTRY)}") from None
    model = factory(spec)
    if getattr(model, "scale", spec.scale) != spec.scale:
        raise ParameterError(f"backbone scale {model.scale} != configured {spec.scale}")
    return model.eval()


@torch.no_grad()
def super_resolve(latents: LatentSequence | list[np.ndarray], model: nn.Module,
                  scale: int | None = None, chunk: int = 8) -> list[np.ndarray]:
    """Run a backbone over K frames, ``chunk`` at a time; returns K upscaled frames."""
    frames = latents.frames if isinstance(latents, LatentSequence) else list(latents)
    if not frames:
        return []
    if scale is not None and getattr(model, "scale", scale) != scale:
        raise ParameterError(f"backbone scale {model.scale} != pipeline scale {scale}")
    x = torch.from_numpy(np.stack(frames).astype(np.float32))
    if x.ndim != 4:
        raise ShapeError(f"expected frames (C, h, w), got {tuple(x.shape[1:])}")
    out = torch.cat([model(to_channels_last(x[i:i + chunk])) for i in range(0, len(x), chunk)])
    return [o.contiguous().numpy() for o in out]


def backbone_invocation_count(n_frames: int, group_size: int = 9, overlap: int = 3,
                              channels: int = 3) -> int:
    """Frames the backbone processes when an ``n_frames`` clip is grouped (vs ``n_frames`` without)."""
    return plan_groups(channels * n_frames, group_size, overlap, channels).group_count
