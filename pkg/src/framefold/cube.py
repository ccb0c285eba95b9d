"""Frame stacking and overlapped channel grouping.

A clip of N frames (H, W, C) is stacked into a channel-first cube of C*N
channels. The cube is sliced into K windows of ``group_size`` channels, each
window sharing ``overlap`` channels with its predecessor. Merging divides every
channel by the number of windows that contained it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

COLOR_CHANNELS = 3


class ShapeError(ValueError):
    """Raised when array shapes do not satisfy an operation's contract."""


class ParameterError(ValueError):
    """Raised for invalid numeric parameters."""


@dataclass
class VideoSequence:
    """Ordered frames of identical shape (H, W, C), float values in [0, 1]."""

    frames: list[np.ndarray]
    frame_rate: float = 25.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ShapeError("a video sequence needs at least one frame")
        shape = self.frames[0].shape
        if len(shape) != 3:
            raise ShapeError(f"frames must be (H, W, C), got {shape}")
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ShapeError(f"frame {i} has shape {f.shape}, expected {shape}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames[0].shape

    def as_array(self) -> np.ndarray:
        """Return the frames as one (N, H, W, C) array."""
        return np.stack(self.frames, axis=0)

    @classmethod
    def from_array(cls, arr: np.ndarray, frame_rate: float = 25.0, meta: dict | None = None):
        return cls([np.asarray(f) for f in arr], frame_rate=frame_rate, meta=dict(meta or {}))


@dataclass
class FrameCube:
    channels: np.ndarray  # (C*N, H, W)
    source_frames: int
    frame_channels: int = COLOR_CHANNELS


@dataclass(frozen=True)
class GroupingPlan:
    group_size: int
    overlap: int
    group_count: int
    group_ranges: tuple[tuple[int, int], ...]
    pad_channels: int
    encode_counts: tuple[int, ...]
    total_channels: int
    frame_channels: int = COLOR_CHANNELS

    @property
    def stride(self) -> int:
        return self.group_size - self.overlap

    @property
    def padded_channels(self) -> int:
        return self.total_channels + self.pad_channels


@dataclass
class ChannelGroup:
    data: np.ndarray  # (S, H, W)
    plan_index: int
    frame_indices: tuple[int, ...]


def stack(seq: VideoSequence) -> FrameCube:
    """Concatenate frames along the channel axis: frame t -> channels tC..tC+C-1."""
    arr = seq.as_array()  # (N, H, W, C)
    n, h, w, c = arr.shape
    channels = np.ascontiguousarray(arr.transpose(0, 3, 1, 2).reshape(n * c, h, w))
    return FrameCube(channels=channels, source_frames=n, frame_channels=c)


def unstack(cube: FrameCube | np.ndarray, frame_channels: int = COLOR_CHANNELS,
            frame_rate: float = 25.0) -> VideoSequence:
    """Inverse of :func:`stack`."""
    if isinstance(cube, FrameCube):
        frame_channels = cube.frame_channels
        channels = cube.channels
    else:
        channels = cube
    total, h, w = channels.shape
    if total % frame_channels:
        raise ShapeError(f"{total} channels is not a multiple of {frame_channels}")
    n = total // frame_channels
    arr = channels.reshape(n, frame_channels, h, w).transpose(0, 2, 3, 1)
    return VideoSequence([np.ascontiguousarray(f) for f in arr], frame_rate=frame_rate)


def group_count(total_channels: int, group_size: int, overlap: int) -> int:
    """Number of windows needed to cover ``total_channels`` channels."""
    if total_channels <= group_size:
        return 1
    return math.ceil((total_channels - group_size) / (group_size - overlap)) + 1


def plan_groups(total_channels: int, group_size: int = 9, overlap: int = 3,
                frame_channels: int = COLOR_CHANNELS) -> GroupingPlan:
    """Plan overlapped windows over a stacked cube.

    Windows start at multiples of ``group_size - overlap``. When the last window
    would run past the end, the cube is padded by repeating its final frame
    block; the number of appended channels is recorded in ``pad_channels``.

    Frame alignment (group_size and overlap multiples of ``frame_channels``) is
    not required here, only by operations that interpret whole frames.
    """
    if not 0 <= overlap < group_size:
        raise ParameterError(f"need 0 <= overlap < group_size, got S={group_size}, O={overlap}")
    if total_channels < frame_channels:
        raise ShapeError(f"need at least {frame_channels} channels, got {total_channels}")
    k = group_count(total_channels, group_size, overlap)
    stride = group_size - overlap
    ranges = tuple((i * stride, i * stride + group_size) for i in range(k))
    padded = ranges[-1][1]
    counts = np.zeros(padded, dtype=int)
    for lo, hi in ranges:
        counts[lo:hi] += 1
    return GroupingPlan(
        group_size=group_size,
        overlap=overlap,
        group_count=k,
        group_ranges=ranges,
        pad_channels=padded - total_channels,
        encode_counts=tuple(int(c) for c in counts),
        total_channels=total_channels,
        frame_channels=frame_channels,
    )


def pad_cube(channels: np.ndarray, plan: GroupingPlan) -> np.ndarray:
    """Append ``plan.pad_channels`` channels copied cyclically from the last frame block."""
    if plan.pad_channels == 0:
        return channels
    c = plan.frame_channels
    last = channels[-c:]
    idx = np.arange(plan.pad_channels) % c
    return np.concatenate([channels, last[idx]], axis=0)


def _frames_spanned(lo: int, hi: int, c: int, n_frames: int) -> tuple[int, ...]:
    # padded channels map back onto the final source frame
    return tuple(sorted({min(ch // c, n_frames - 1) for ch in range(lo, hi)}))


def extract_groups(cube: FrameCube, plan: GroupingPlan) -> list[ChannelGroup]:
    total = cube.channels.shape[0]
    if total != plan.total_channels:
        raise ShapeError(f"plan was made for {plan.total_channels} channels, cube has {total}")
    padded = pad_cube(cube.channels, plan)
    return [
        ChannelGroup(
            data=padded[lo:hi],
            plan_index=k,
            frame_indices=_frames_spanned(lo, hi, cube.frame_channels, cube.source_frames),
        )
        for k, (lo, hi) in enumerate(plan.group_ranges)
    ]


def merge_groups(groups: Sequence[ChannelGroup | np.ndarray], plan: GroupingPlan) -> FrameCube:
    """Reassemble a cube, averaging every channel over the groups that encoded it.

    The spatial size may differ from the cube the plan was built for (merging
    also runs after super-resolution). Averages are accumulated as running
    means so that identical copies reproduce their value bit for bit.
    """
    if len(groups) != plan.group_count:
        raise ShapeError(f"expected {plan.group_count} groups, got {len(groups)}")
    arrays = [g.data if isinstance(g, ChannelGroup) else np.asarray(g) for g in groups]
    spatial = arrays[0].shape[1:]
    for a in arrays:
        if a.shape != (plan.group_size, *spatial):
            raise ShapeError(f"group shape {a.shape} != {(plan.group_size, *spatial)}")
    dtype = np.result_type(*arrays)
    out = np.zeros((plan.padded_channels, *spatial), dtype=dtype)
    seen = np.zeros(plan.padded_channels, dtype=int)
    for (lo, hi), a in zip(plan.group_ranges, arrays):
        seen[lo:hi] += 1
        n = seen[lo:hi].astype(dtype).reshape(-1, *([1] * len(spatial)))
        out[lo:hi] += (a - out[lo:hi]) / n
    n_frames = plan.total_channels // plan.frame_channels
    return FrameCube(channels=out[: plan.total_channels], source_frames=n_frames,
                     frame_channels=plan.frame_channels)
