"""Y-channel PSNR and SSIM (BT.601 studio-range luma, peak 1.0)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .cube import ShapeError, VideoSequence

_Y_WEIGHTS = np.array([65.481, 128.553, 24.966]) / 255.0
_Y_OFFSET = 16.0 / 255.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rgb_to_y(frame: np.ndarray) -> np.ndarray:
    """Studio-range luma of an (H, W, 3) RGB frame in [0, 1]."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[-1] != 3:
        raise ShapeError(f"expected (H, W, 3) RGB frame, got {frame.shape}")
    return frame @ _Y_WEIGHTS + _Y_OFFSET


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    mse = float(np.mean((rgb_to_y(a) - rgb_to_y(b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    r = len(taps) // 2
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim_y(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of the luma."""
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    if min(np.shape(a)[:2]) < SSIM_WINDOW:
        raise ShapeError(f"frames must be at least {SSIM_WINDOW}px on each side")
    x, y = rgb_to_y(a), rgb_to_y(b)
    taps = _gaussian_taps()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x, mu_y = _filter_valid(x, taps), _filter_valid(y, taps)
    sxx = _filter_valid(x * x, taps) - mu_x**2
    syy = _filter_valid(y * y, taps) - mu_y**2
    sxy = _filter_valid(x * y, taps) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    clip: str
    psnr: list[float]
    ssim: list[float]
    mean_psnr: float
    mean_ssim: float
    inf_frames: int
    extra: dict = field(default_factory=dict)

    def rows(self):
        for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
            yield {"clip": self.clip, "frame": i, "psnr_y": p, "ssim_y": s}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def sequence_metrics(pred: VideoSequence, gt: VideoSequence, clip: str = "clip") -> MetricsReport:
    """Per-frame and mean Y-PSNR/SSIM. Frames with infinite PSNR are left out of the PSNR mean."""
    if len(pred) != len(gt):
        raise ShapeError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    psnrs = [psnr_y(p, g) for p, g in zip(pred.frames, gt.frames)]
    ssims = [ssim_y(p, g) for p, g in zip(pred.frames, gt.frames)]
    finite = [p for p in psnrs if math.isfinite(p)]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    return MetricsReport(clip=clip, psnr=psnrs, ssim=ssims, mean_psnr=mean_psnr,
                         mean_ssim=float(np.mean(ssims)), inf_frames=len(psnrs) - len(finite))


def write_reports(reports: list[MetricsReport], json_path, csv_path) -> None:
    with open(json_path, "w") as fh:
        json.dump([asdict(r) for r in reports], fh, indent=2)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["clip", "frame", "psnr_y", "ssim_y"])
        writer.writeheader()
        for r in reports:
            writer.writerows(r.rows())
