"""Group codec: cleaning network, flow-guided group encoder, group decoder and
colour correction, plus the sequence-level compress/decompress pipeline."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import cube as vc
from .archive import load_archive, save_archive
from .cube import COLOR_CHANNELS, GroupingPlan, ShapeError, VideoSequence
from .flow import HornSchunckParams, flow_channels, groups_flows

COLOR_EPS = 1e-6
NEG_SLOPE = 0.1


@dataclass(frozen=True)
class CodecConfig:
    group_size: int = 9
    overlap: int = 3
    latent_channels: int = 3
    clean_width: int = 16
    clean_blocks: int = 3
    clean_iterations: int = 3
    enc_width: int = 32
    enc_blocks: int = 4
    dec_width: int = 16
    dec_blocks: int = 0
    reduction: int = 4

    def __post_init__(self):
        if self.group_size % COLOR_CHANNELS or self.overlap % COLOR_CHANNELS:
            raise vc.ParameterError("group_size and overlap must be whole frames (multiples of 3)")
        if not 0 <= self.overlap < self.group_size:
            raise vc.ParameterError("need 0 <= overlap < group_size")

    @property
    def frames_per_group(self) -> int:
        return self.group_size // COLOR_CHANNELS

    @property
    def flow_channels(self) -> int:
        return flow_channels(self.group_size)

    def arch(self) -> dict:
        return asdict(self)


def conv3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, 1, 1)


class ResidualBlock(nn.Module):
    """conv3x3 -> leaky ReLU -> conv3x3, plus identity."""

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = conv3(width, width)
        self.conv2 = conv3(width, width)

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(x), NEG_SLOPE, inplace=True))


def channel_attention(features, w1, b1, w2, b2):
    """Squeeze-and-excitation gating of (B, C, H, W) or (C, H, W) features.

    scale = sigmoid(w2 @ lrelu(w1 @ mean_hw(features) + b1) + b2); returns
    features * scale.
    """
    squeeze = features.mean(dim=(-2, -1))
    hidden = F.leaky_relu(squeeze @ w1.T + b1, NEG_SLOPE)
    scale = torch.sigmoid(hidden @ w2.T + b2)
    return features * scale[..., None, None]


class ChannelAttention(nn.Module):
    def __init__(self, width: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, width // reduction)
        self.squeeze = nn.Linear(width, hidden)
        self.excite = nn.Linear(hidden, width)

    def forward(self, x):
        return channel_attention(x, self.squeeze.weight, self.squeeze.bias,
                                 self.excite.weight, self.excite.bias)


class CleaningNet(nn.Module):
    """Residual denoiser applied a fixed number of times to each frame."""

    def __init__(self, width: int = 16, blocks: int = 5):
        super().__init__()
        self.head = conv3(COLOR_CHANNELS, width)
        self.body = nn.Sequential(*[ResidualBlock(width) for _ in range(blocks)])
        self.tail = conv3(width, COLOR_CHANNELS)
        # zero residual at start: the untrained cleaner is the identity
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, x):
        return x + self.tail(self.body(F.leaky_relu(self.head(x), NEG_SLOPE, inplace=True)))

    def clean(self, x, iterations: int = 3):
        if x.shape[-3] != COLOR_CHANNELS:
            raise ShapeError(f"cleaning expects {COLOR_CHANNELS} channels, got {x.shape[-3]}")
        for _ in range(iterations):
            x = self(x)
        return x


class _Coder(nn.Module):
    """Shared layout of encoder and decoder: 3x3 in, residual blocks, 1x1 channel mix, attention, 3x3 out."""

    def __init__(self, cin: int, cout: int, width: int, blocks: int, reduction: int):
        super().__init__()
        self.cin = cin
        self.head = conv3(cin, width)
        self.body = nn.Sequential(*[ResidualBlock(width) for _ in range(blocks)])
        self.mix = nn.Conv2d(width, width, 1)
        self.attention = ChannelAttention(width, reduction)
        self.tail = conv3(width, cout)

    def forward(self, x):
        if x.shape[-3] != self.cin:
            raise ShapeError(f"expected {self.cin} input channels, got {x.shape[-3]}")
        x = F.leaky_relu(self.head(x), NEG_SLOPE, inplace=True)
        x = self.body(x)
        x = F.leaky_relu(self.mix(x), NEG_SLOPE, inplace=True)
        return self.tail(self.attention(x))


class GroupEncoder(_Coder):
    """(S + flow channels, H, W) -> (C_latent, H, W)."""

    def __init__(self, cfg: CodecConfig):
        super().__init__(cfg.group_size + cfg.flow_channels, cfg.latent_channels,
                         cfg.enc_width, cfg.enc_blocks, cfg.reduction)

    def forward(self, group, flows):
        return super().forward(torch.cat([group, flows], dim=-3))


class GroupDecoder(_Coder):
    """(C_latent, H, W) -> (S, H, W) at any spatial size."""

    def __init__(self, cfg: CodecConfig):
        super().__init__(cfg.latent_channels, cfg.group_size, cfg.dec_width, cfg.dec_blocks, cfg.reduction)


class Codec(nn.Module):
    def __init__(self, cfg: CodecConfig = CodecConfig()):
        super().__init__()
        self.cfg = cfg
        self.cleaning = CleaningNet(cfg.clean_width, cfg.clean_blocks)
        self.encoder = GroupEncoder(cfg)
        self.decoder = GroupDecoder(cfg)

    def save(self, path, extra: dict | None = None) -> Path:
        tensors = {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}
        return save_archive(path, "codec", self.cfg.arch(), tensors, extra)

    @classmethod
    def load(cls, path, cfg: CodecConfig | None = None) -> "Codec":
        header, tensors = load_archive(path, "codec", cfg.arch() if cfg else None)
        model = cls(cfg or CodecConfig(**header["arch"]))
        model.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return model.eval()


def color_correct(sr: np.ndarray, ref: np.ndarray, eps: float = COLOR_EPS) -> np.ndarray:
    """Match per-channel mean and std of an (H, W, C) frame to ``ref`` (any spatial size).

    The std in the denominator is floored at ``eps``, so a constant channel
    maps to the reference mean.
    """
    sr = np.asarray(sr, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if sr.shape[-1] != ref.shape[-1]:
        raise ShapeError(f"channel mismatch {sr.shape} vs {ref.shape}")
    mu_s, sd_s = sr.mean(axis=(0, 1)), sr.std(axis=(0, 1))
    mu_r, sd_r = ref.mean(axis=(0, 1)), ref.std(axis=(0, 1))
    return (sr - mu_s) / np.maximum(sd_s, eps) * sd_r + mu_r


def _match_stats(flat: torch.Tensor, ref: torch.Tensor, dim: int, eps: float) -> torch.Tensor:
    # two-pass mean/std; torch.std is several times slower on CPU
    def stats(x):
        mu = x.mean(dim, keepdim=True)
        d = x - mu
        return mu, (d * d).mean(dim, keepdim=True).sqrt()

    mu_s, sd_s = stats(flat)
    mu_r, sd_r = stats(ref)
    gain = sd_r / sd_s.clamp_min(eps)
    return torch.addcmul(mu_r - mu_s * gain, flat, gain)


def color_correct_torch(sr: torch.Tensor, ref: torch.Tensor, eps: float = COLOR_EPS) -> torch.Tensor:
    """Channel-first variant of :func:`color_correct` over the last two axes."""
    flat = sr.reshape(*sr.shape[:-2], -1)
    return _match_stats(flat, ref.reshape(*ref.shape[:-2], -1), -1, eps).view_as(sr)


# -- differentiable grouping on (B, C*N, H, W) tensors, used by training ----------

def pad_index(plan: GroupingPlan) -> torch.Tensor:
    c = plan.frame_channels
    idx = list(range(plan.total_channels))
    idx += [plan.total_channels - c + j % c for j in range(plan.pad_channels)]
    return torch.tensor(idx)


def extract_groups_torch(cube: torch.Tensor, plan: GroupingPlan) -> torch.Tensor:
    """(B, T, H, W) -> (B, K, S, H, W)."""
    padded = cube.index_select(1, pad_index(plan))
    return torch.stack([padded[:, lo:hi] for lo, hi in plan.group_ranges], dim=1)


def merge_groups_torch(groups: torch.Tensor, plan: GroupingPlan) -> torch.Tensor:
    """(B, K, S, H, W) -> (B, T, H, W), averaging overlapped channels."""
    b, k, s, h, w = groups.shape
    total = torch.zeros(b, plan.padded_channels, h, w, dtype=groups.dtype, device=groups.device)
    for i, (lo, hi) in enumerate(plan.group_ranges):
        total[:, lo:hi] += groups[:, i]
    counts = torch.tensor(plan.encode_counts, dtype=groups.dtype).view(1, -1, 1, 1)
    return (total / counts)[:, : plan.total_channels]


# -- sequence-level API -----------------------------------------------------------

@dataclass
class LatentSequence:
    frames: list[np.ndarray]  # K arrays (C_latent, H, W)
    plan: GroupingPlan
    lr_reference: VideoSequence
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) != self.plan.group_count:
            raise ShapeError(f"{len(self.frames)} latents for a plan of {self.plan.group_count} groups")


def to_channels_last(x: torch.Tensor | nn.Module):
    """NHWC memory layout; markedly faster for small-width convolutions on CPU."""
    return x.to(memory_format=torch.channels_last)


PIXEL_BUDGET = 16384  # per forward call; larger batches of small-width features spill out of cache


def _batches(x: torch.Tensor, chunk: int):
    step = max(1, min(chunk, PIXEL_BUDGET // (x.shape[-2] * x.shape[-1])))
    return [to_channels_last(x[i:i + step]) for i in range(0, len(x), step)]


def _frames_tensor(seq: VideoSequence) -> torch.Tensor:
    return torch.from_numpy(seq.as_array().transpose(0, 3, 1, 2).astype(np.float32))


@torch.no_grad()
def clean_frames(seq: VideoSequence, codec: Codec, iterations: int | None = None,
                 chunk: int = 32) -> torch.Tensor:
    x = _frames_tensor(seq)
    it = codec.cfg.clean_iterations if iterations is None else iterations
    return torch.cat([codec.cleaning.clean(b, it) for b in _batches(x, chunk)])


@torch.no_grad()
def compress_sequence(lr: VideoSequence, codec: Codec, flow_method: str = "horn-schunck-pyramid",
                      flow_params: HornSchunckParams = HornSchunckParams(), chunk: int = 32) -> LatentSequence:
    """Clean every frame, stack, group, and encode each group (with its flows) into one latent frame."""
    cfg = codec.cfg
    if lr.shape[-1] != COLOR_CHANNELS:
        raise ShapeError(f"expected RGB frames, got {lr.shape}")
    cleaned = clean_frames(lr, codec, chunk=chunk)
    n, c, h, w = cleaned.shape
    cube = vc.FrameCube(cleaned.contiguous().reshape(n * c, h, w).numpy(), n)
    plan = vc.plan_groups(n * c, cfg.group_size, cfg.overlap)
    groups = [g.data for g in vc.extract_groups(cube, plan)]
    flows = groups_flows(groups, flow_method, flow_params)
    g = torch.from_numpy(np.stack(groups))
    f = torch.from_numpy(np.stack(flows).astype(np.float32))
    latents = torch.cat([codec.encoder(*b.split([g.shape[1], f.shape[1]], dim=1))
                         for b in _batches(torch.cat([g, f], dim=1), chunk)])
    return LatentSequence([z.numpy() for z in latents], plan, lr)


@torch.no_grad()
def decompress_sequence(sr_latents, plan: GroupingPlan, lr: VideoSequence, codec: Codec,
                        scale: int = 1, chunk: int = 8) -> VideoSequence:
    """Decode K latents, merge with frame averaging, unstack, and colour-correct against the LR frames."""
    if len(sr_latents) != plan.group_count:
        raise ShapeError(f"{len(sr_latents)} latents for a plan of {plan.group_count} groups")
    h, w = lr.shape[:2]
    for z in sr_latents:
        if z.shape[1:] != (scale * h, scale * w):
            raise ShapeError(f"latent {z.shape} is not {scale}x the LR size {(h, w)}")
    c = COLOR_CHANNELS
    hs, ws = scale * h, scale * w
    # decoded groups are accumulated straight into (frames, H, W, C), the output layout
    acc = torch.zeros(plan.padded_channels // c, hs, ws, c)
    ranges = iter(plan.group_ranges)
    z = torch.from_numpy(np.stack(sr_latents).astype(np.float32))
    for batch in _batches(z, chunk):
        for g in codec.decoder(batch):
            lo, hi = next(ranges)
            acc[lo // c:hi // c] += g.permute(1, 2, 0).reshape(hs, ws, -1, c).permute(2, 0, 1, 3)
    n = plan.total_channels // c
    counts = torch.tensor(plan.encode_counts[:plan.total_channels:c], dtype=acc.dtype)
    sr = acc[:n].div_(counts.view(-1, 1, 1, 1)).view(n, hs * ws, c)
    ref = torch.from_numpy(lr.as_array().astype(np.float32)).view(n, h * w, c)
    out = _match_stats(sr, ref, 1, COLOR_EPS).view(n, hs, ws, c).numpy()
    return VideoSequence(list(out), frame_rate=lr.frame_rate)
