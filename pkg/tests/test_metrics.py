import math

import numpy as np
import pytest

from framefold.cube import ShapeError, VideoSequence
from framefold.metrics import psnr_y, rgb_to_y, sequence_metrics, ssim_y


def brute_luma(frame):
    h, w, _ = frame.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            r, g, b = frame[i, j]
            out[i, j] = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return out


def brute_psnr(a, b):
    ya, yb = brute_luma(a), brute_luma(b)
    total = 0.0
    for i in range(ya.shape[0]):
        for j in range(ya.shape[1]):
            total += (ya[i, j] - yb[i, j]) ** 2
    mse = total / ya.size
    return 10 * math.log10(1 / mse)


def brute_ssim(a, b):
    ya, yb = brute_luma(a), brute_luma(b)
    r = 5
    ax = np.arange(-r, r + 1)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 1.5**2))
    g /= g.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(r, ya.shape[0] - r):
        for j in range(r, ya.shape[1] - r):
            pa = ya[i - r:i + r + 1, j - r:j + r + 1]
            pb = yb[i - r:i + r + 1, j - r:j + r + 1]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_luma_endpoints():
    assert rgb_to_y(np.ones((1, 1, 3)))[0, 0] == 235 / 255
    assert rgb_to_y(np.zeros((1, 1, 3)))[0, 0] == 16 / 255
    assert rgb_to_y(np.full((1, 1, 3), 0.5))[0, 0] == pytest.approx(125.5 / 255, abs=1e-15)
    with pytest.raises(ShapeError):
        rgb_to_y(np.ones((2, 2, 4)))


def test_psnr_cases():
    rng = np.random.default_rng(0)
    a = rng.random((8, 8, 3)) * 0.5
    assert psnr_y(a, a) == math.inf
    # gray shift of d in RGB moves Y by 219 d / 255
    d = 0.1 * 255 / 219
    assert psnr_y(a, a + d) == pytest.approx(20.0, abs=1e-9)
    assert psnr_y(a, a + d) == psnr_y(a + d, a)
    with pytest.raises(ShapeError):
        psnr_y(a, a[:4])


def test_ssim_cases():
    rng = np.random.default_rng(1)
    a = rng.random((16, 16, 3))
    assert ssim_y(a, a) == pytest.approx(1.0, abs=1e-9)
    checker = (np.indices((16, 16)).sum(0) % 2).astype(float)
    pattern = np.repeat(checker[..., None], 3, axis=2)
    assert ssim_y(pattern, 1 - pattern) < 0.5
    assert ssim_y(a, pattern) == pytest.approx(ssim_y(pattern, a), abs=1e-12)
    with pytest.raises(ShapeError):
        ssim_y(a[:10], a[:10])


@pytest.mark.parametrize("seed", range(5))
def test_metrics_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
    assert abs(psnr_y(a, b) - brute_psnr(a, b)) < 1e-9
    assert abs(ssim_y(a, b) - brute_ssim(a, b)) < 1e-6


def test_sequence_metrics():
    rng = np.random.default_rng(3)
    seq = VideoSequence([rng.random((12, 12, 3)) for _ in range(3)])
    same = sequence_metrics(seq, seq)
    assert all(p == math.inf for p in same.psnr) and same.inf_frames == 3
    assert same.mean_ssim == pytest.approx(1.0)

    other = VideoSequence([f * 0.9 for f in seq.frames])
    rep = sequence_metrics(other, seq)
    assert rep.mean_psnr == pytest.approx(np.mean([psnr_y(p, g) for p, g in zip(other.frames, seq.frames)]))
    assert rep.mean_ssim == pytest.approx(np.mean([ssim_y(p, g) for p, g in zip(other.frames, seq.frames)]))

    single = sequence_metrics(VideoSequence(other.frames[:1]), VideoSequence(seq.frames[:1]))
    assert single.mean_psnr == single.psnr[0]
    with pytest.raises(ShapeError):
        sequence_metrics(VideoSequence(seq.frames[:2]), seq)
