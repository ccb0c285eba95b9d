"""End-to-end inference: compress -> backbone -> decompress, and the reference paths it is compared with."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import cube as vc
from .backbone import bicubic, super_resolve
from .codec import Codec, LatentSequence, compress_sequence, decompress_sequence, to_channels_last
from .cube import VideoSequence
from .flow import HornSchunckParams


@dataclass
class Pipeline:
    codec: Codec
    backbone: nn.Module
    scale: int = 4
    flow_method: str = "horn-schunck-pyramid"
    flow_params: HornSchunckParams = HornSchunckParams()
    chunk: int = 8

    def __post_init__(self):
        to_channels_last(self.codec.eval())
        to_channels_last(self.backbone.eval())

    def compress(self, lr: VideoSequence) -> LatentSequence:
        return compress_sequence(lr, self.codec, self.flow_method, self.flow_params)

    def run(self, lr: VideoSequence) -> tuple[VideoSequence, LatentSequence]:
        latents = self.compress(lr)
        sr_latents = super_resolve(latents, self.backbone, self.scale, self.chunk)
        sr = decompress_sequence(sr_latents, latents.plan, lr, self.codec, self.scale, self.chunk)
        return sr, latents

    def run_uncompressed(self, lr: VideoSequence) -> VideoSequence:
        """The backbone applied to every LR frame, with no grouping."""
        frames = [f.transpose(2, 0, 1) for f in lr.frames]
        out = super_resolve(frames, self.backbone, self.scale, self.chunk)
        return VideoSequence([o.transpose(1, 2, 0) for o in out], frame_rate=lr.frame_rate)


def group_mean_baseline(lr: VideoSequence, group_size: int = 9, overlap: int = 3) -> VideoSequence:
    """Replace every group by its mean frame repeated, then merge with frame averaging."""
    cube = vc.stack(lr)
    plan = vc.plan_groups(cube.channels.shape[0], group_size, overlap)
    c = vc.COLOR_CHANNELS
    groups = []
    for g in vc.extract_groups(cube, plan):
        frames = g.data.reshape(-1, c, *g.data.shape[1:])
        groups.append(np.tile(frames.mean(axis=0), (frames.shape[0], 1, 1)))
    return vc.unstack(vc.merge_groups(groups, plan), frame_rate=lr.frame_rate)


@torch.no_grad()
def bicubic_upsample(lr: VideoSequence, scale: int = 4) -> VideoSequence:
    x = torch.from_numpy(lr.as_array().transpose(0, 3, 1, 2))
    out = bicubic(x, scale).numpy().transpose(0, 2, 3, 1)
    return VideoSequence(list(np.clip(out, 0.0, 1.0)), frame_rate=lr.frame_rate)


def clip01(seq: VideoSequence) -> VideoSequence:
    return VideoSequence([np.clip(f, 0.0, 1.0) for f in seq.frames], frame_rate=seq.frame_rate)
