"""Synthesis of compressed low-resolution clips: blur, decimate, H.264 (or a DCT proxy)."""

from __future__ import annotations

import logging
import math
import shutil
import subprocess
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from .cube import ParameterError, VideoSequence

log = logging.getLogger(__name__)

ALLOWED_CRF = (0, 15, 25, 35)
COMPRESSORS = ("external-encoder", "dct-proxy")
BLOCK = 8


@dataclass(frozen=True)
class DegradeConfig:
    blur_sigma: float = 1.5
    scale: int = 4
    crf: int = 0
    compressor: str = "dct-proxy"

    def __post_init__(self):
        if self.scale < 1:
            raise ParameterError(f"scale must be >= 1, got {self.scale}")
        if not self.blur_sigma > 0:
            raise ParameterError(f"blur_sigma must be > 0, got {self.blur_sigma}")
        if self.crf not in ALLOWED_CRF:
            raise ParameterError(f"crf must be one of {ALLOWED_CRF}, got {self.crf}")
        if self.compressor not in COMPRESSORS:
            raise ParameterError(f"compressor must be one of {COMPRESSORS}, got {self.compressor!r}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gaussian_blur(frame: np.ndarray, sigma: float = 1.5) -> np.ndarray:
    """Separable Gaussian blur over the two spatial axes with reflect padding."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    k = gaussian_kernel(sigma)
    out = correlate1d(np.asarray(frame, dtype=np.float64), k, axis=0, mode="reflect")
    return correlate1d(out, k, axis=1, mode="reflect")


def downsample(frame: np.ndarray, factor: int = 4) -> np.ndarray:
    """Keep every ``factor``-th pixel starting at (0, 0); trailing rows/cols that do not fill a cell are cropped."""
    if factor < 1:
        raise ParameterError(f"factor must be >= 1, got {factor}")
    h, w = frame.shape[:2]
    frame = frame[: h - h % factor, : w - w % factor]
    return frame[::factor, ::factor]


def crf_step(crf: int) -> float:
    """Quantizer step (8-bit units) of the DCT proxy for a CRF value."""
    return max(1.0, 2.0 ** ((crf - 12) / 6))


def dct_proxy_frame(frame: np.ndarray, crf: int) -> np.ndarray:
    """Quantize 8x8 orthonormal DCT blocks of each channel with a CRF-derived step."""
    step = crf_step(crf)
    h, w, c = frame.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    x = np.pad(np.asarray(frame, dtype=np.float64) * 255.0, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = x.shape[0] // BLOCK, x.shape[1] // BLOCK
    blocks = x.reshape(hb, BLOCK, wb, BLOCK, c).transpose(0, 2, 4, 1, 3)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / step) * step
    rec = idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 3, 1, 4, 2).reshape(hb * BLOCK, wb * BLOCK, c)[:h, :w]
    return np.clip(rec / 255.0, 0.0, 1.0)


def find_encoder() -> str | None:
    exe = shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        return None
    try:
        return imageio_ffmpeg.get_ffmpeg_exe()
    except RuntimeError:
        return None


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def h264_roundtrip(seq: VideoSequence, crf: int, exe: str, preset: str = "medium") -> VideoSequence:
    """Encode frames with libx264 at ``crf`` (yuv420p) and decode them back."""
    import tempfile
    from pathlib import Path

    arr = seq.as_array()
    n, h, w, _ = arr.shape
    # yuv420p needs even dimensions
    ph, pw = h % 2, w % 2
    raw = _to_uint8(np.pad(arr, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge"))
    H, W = h + ph, w + pw
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "clip.mp4"
        enc = [exe, "-hide_banner", "-loglevel", "error", "-y",
               "-f", "rawvideo", "-pix_fmt", "rgb24", "-s", f"{W}x{H}", "-r", str(seq.frame_rate),
               "-i", "-", "-c:v", "libx264", "-crf", str(crf), "-preset", preset,
               "-pix_fmt", "yuv420p", str(out)]
        subprocess.run(enc, input=raw.tobytes(), check=True, capture_output=True)
        dec = [exe, "-hide_banner", "-loglevel", "error", "-i", str(out),
               "-f", "rawvideo", "-pix_fmt", "rgb24", "-"]
        res = subprocess.run(dec, check=True, capture_output=True)
    frames = np.frombuffer(res.stdout, dtype=np.uint8).reshape(-1, H, W, 3)[:n, :h, :w]
    if frames.shape[0] != n:
        raise RuntimeError(f"decoder returned {frames.shape[0]} frames, expected {n}")
    return VideoSequence([f.astype(np.float64) / 255.0 for f in frames], frame_rate=seq.frame_rate)


def compress_crf(seq: VideoSequence, crf: int, compressor: str = "dct-proxy") -> VideoSequence:
    """Apply compression artifacts at the given CRF; crf=0 returns the input unchanged.

    In ``external-encoder`` mode a missing ffmpeg binary falls back to the DCT
    proxy and sets ``meta['fallback']``.
    """
    if crf not in ALLOWED_CRF:
        raise ParameterError(f"crf must be one of {ALLOWED_CRF}, got {crf}")
    meta = dict(seq.meta, crf=crf, compressor=compressor)
    if crf == 0:
        return VideoSequence(list(seq.frames), frame_rate=seq.frame_rate, meta=meta)
    if compressor == "external-encoder":
        exe = find_encoder()
        if exe is not None:
            out = h264_roundtrip(seq, crf, exe)
            out.meta = meta
            return out
        log.warning("ffmpeg not found; falling back to dct-proxy")
        meta.update(compressor="dct-proxy", fallback="ffmpeg-missing")
    elif compressor != "dct-proxy":
        raise ParameterError(f"unknown compressor {compressor!r}")
    return VideoSequence([dct_proxy_frame(f, crf) for f in seq.frames], frame_rate=seq.frame_rate, meta=meta)


def blur_downsample(hr: VideoSequence, sigma: float = 1.5, scale: int = 4) -> VideoSequence:
    frames = [downsample(gaussian_blur(f, sigma), scale) for f in hr.frames]
    h, w = hr.shape[:2]
    meta = dict(hr.meta)
    if h % scale or w % scale:
        meta["cropped_to"] = (h - h % scale, w - w % scale)
    return VideoSequence(frames, frame_rate=hr.frame_rate, meta=meta)


def make_lr(hr: VideoSequence, cfg: DegradeConfig = DegradeConfig()) -> VideoSequence:
    """Blur, decimate, then compress."""
    return compress_crf(blur_downsample(hr, cfg.blur_sigma, cfg.scale), cfg.crf, cfg.compressor)


def mix_dataset(clips: Iterable[str], fraction_compressed: float = 0.5,
                crf_set: Iterable[int] = (15, 25, 35), seed: int = 0) -> list[dict]:
    """Assign a CRF to every clip: a seeded ``fraction_compressed`` share gets a CRF drawn from ``crf_set``, the rest 0."""
    clips = list(clips)
    if not clips:
        raise ValueError("empty clip list")
    if not 0.0 <= fraction_compressed <= 1.0:
        raise ParameterError(f"fraction must be in [0, 1], got {fraction_compressed}")
    crfs = sorted(set(crf_set))
    for c in crfs:
        if c not in ALLOWED_CRF:
            raise ParameterError(f"crf {c} not allowed")
    rng = np.random.default_rng(seed)
    n_comp = int(round(fraction_compressed * len(clips)))
    compressed = set(rng.permutation(len(clips))[:n_comp].tolist())
    manifest = []
    for i, clip in enumerate(clips):
        crf = int(rng.choice(crfs)) if i in compressed else 0
        manifest.append({"clip_id": clip, "crf": crf, "seed": seed})
    return manifest
