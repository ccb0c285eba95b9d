"""Procedural clip corpus: moving crops of bundled photographs and moving textured patterns."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import cv2
import numpy as np

from .cube import VideoSequence
from .degrade import DegradeConfig, blur_downsample, compress_crf, mix_dataset

_PHOTOS = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field")


@lru_cache(maxsize=None)
def _photo(name: str) -> np.ndarray:
    import skimage.data

    img = getattr(skimage.data, name)().astype(np.float32) / 255.0
    # halve so a 64px crop holds more structure
    return cv2.resize(img, (img.shape[1] // 2, img.shape[0] // 2), interpolation=cv2.INTER_AREA)


def _pattern_canvas(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    img = np.zeros((size, size, 3), np.float32) + rng.uniform(0.2, 0.6, 3).astype(np.float32)
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.03, 0.15)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        img += 0.15 * wave[..., None] * rng.uniform(-1, 1, 3).astype(np.float32)
    for _ in range(int(rng.integers(3, 8))):
        x0, y0 = rng.integers(0, size, 2)
        w, h = rng.integers(size // 16, size // 4, 2)
        img[y0:y0 + h, x0:x0 + w] = rng.uniform(0, 1, 3)
    return np.clip(img, 0, 1)


def synthetic_clip(rng: np.random.Generator, frames: int = 7, size: int = 64,
                   max_speed: int = 4) -> VideoSequence:
    """One clip of ``frames`` frames (size x size): a crop window panning over a canvas, plus a moving disc."""
    vx, vy = rng.integers(-max_speed, max_speed + 1, 2)
    margin = max_speed * frames + 1
    if rng.random() < 0.7:
        canvas = _photo(_PHOTOS[int(rng.integers(len(_PHOTOS)))])
        ch, cw = canvas.shape[:2]
        y0 = int(rng.integers(margin, ch - size - margin))
        x0 = int(rng.integers(margin, cw - size - margin))
    else:
        canvas = _pattern_canvas(rng, size + 2 * margin)
        y0 = x0 = margin
    color = rng.uniform(0, 1, 3).astype(np.float32)
    radius = float(rng.uniform(size / 12, size / 6))
    cx, cy = rng.uniform(size / 4, 3 * size / 4, 2)
    dx, dy = rng.uniform(-max_speed, max_speed, 2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    out = []
    for t in range(frames):
        oy, ox = y0 + vy * t, x0 + vx * t
        frame = canvas[oy:oy + size, ox:ox + size].copy()
        r2 = (xx - (cx + dx * t)) ** 2 + (yy - (cy + dy * t)) ** 2
        alpha = np.clip(radius - np.sqrt(r2), 0, 1)[..., None]
        frame = frame * (1 - alpha) + color * alpha
        out.append(np.clip(frame, 0, 1).astype(np.float64))
    return VideoSequence(out)


@dataclass
class ClipSample:
    clip_id: str
    hr: VideoSequence
    lr_clean: VideoSequence  # blurred + decimated, uncompressed
    lr: VideoSequence  # lr_clean after compression at ``crf``
    crf: int


def make_corpus(n_clips: int, seed: int = 0, frames: int = 7, size: int = 64,
                degrade: DegradeConfig = DegradeConfig(), fraction_compressed: float = 0.5,
                crf_set=(15, 25, 35), prefix: str = "clip") -> list[ClipSample]:
    """Generate HR clips and their degraded LR counterparts with a seeded CRF mix."""
    rng = np.random.default_rng(seed)
    ids = [f"{prefix}{i:04d}" for i in range(n_clips)]
    manifest = mix_dataset(ids, fraction_compressed, crf_set, seed)
    samples = []
    for entry in manifest:
        hr = synthetic_clip(rng, frames, size)
        clean = blur_downsample(hr, degrade.blur_sigma, degrade.scale)
        lr = compress_crf(clean, entry["crf"], degrade.compressor)
        samples.append(ClipSample(entry["clip_id"], hr, clean, lr, entry["crf"]))
    return samples
