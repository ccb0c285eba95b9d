import math

import numpy as np
import pytest

from framefold.cube import ParameterError, VideoSequence
from framefold.data import make_corpus, synthetic_clip
from framefold.degrade import (
    DegradeConfig, blur_downsample, compress_crf, crf_step, dct_proxy_frame, downsample,
    find_encoder, gaussian_blur, make_lr, mix_dataset,
)
from framefold.metrics import sequence_metrics


def test_blur_constant_and_impulse():
    const = np.full((20, 20, 3), 0.5)
    for sigma in (0.5, 1.5, 3.0):
        assert np.max(np.abs(gaussian_blur(const, sigma) - 0.5)) < 1e-12

    impulse = np.zeros((41, 41, 1))
    impulse[20, 20] = 1.0
    out = gaussian_blur(impulse, 1.5)
    radius = math.ceil(4 * 1.5)
    x = np.arange(-radius, radius + 1)
    taps = np.exp(-x**2 / (2 * 1.5**2))
    taps /= taps.sum()
    assert out[20, 20, 0] == pytest.approx(taps[radius] ** 2, rel=1e-12)
    assert out.sum() == pytest.approx(1.0, abs=1e-9)

    with pytest.raises(ParameterError):
        gaussian_blur(const, 0.0)


def test_downsample():
    rng = np.random.default_rng(0)
    f = rng.random((8, 8, 3))
    assert np.array_equal(downsample(f, 1), f)
    d = downsample(f, 4)
    assert d.shape == (2, 2, 3)
    assert np.array_equal(d[1, 0], f[4, 0]) and np.array_equal(d[1, 1], f[4, 4])
    assert downsample(rng.random((10, 9, 3)), 4).shape == (2, 2, 3)
    const = np.full((16, 16, 3), 0.3)
    assert np.allclose(downsample(gaussian_blur(const, 1.5), 4), 0.3, atol=1e-12)
    with pytest.raises(ParameterError):
        downsample(f, 0)


def test_crf_zero_identity_and_config_errors():
    rng = np.random.default_rng(1)
    seq = VideoSequence([rng.random((8, 8, 3)) for _ in range(2)])
    out = compress_crf(seq, 0)
    assert all(np.array_equal(a, b) for a, b in zip(seq.frames, out.frames))
    with pytest.raises(ParameterError):
        compress_crf(seq, 20)
    with pytest.raises(ParameterError):
        DegradeConfig(crf=10)
    with pytest.raises(ParameterError):
        DegradeConfig(scale=0)


@pytest.mark.parametrize("crf", [15, 25, 35])
def test_dct_proxy_constant_block(crf):
    step = crf_step(crf)
    # orthonormal 8x8 DC coefficient is 8 * value (8-bit units)
    exact = step * 37 / 8 / 255.0
    block = np.full((8, 8, 3), exact)
    assert np.allclose(dct_proxy_frame(block, crf), exact, atol=1e-12)
    other = np.full((8, 8, 3), 0.4321)
    err = np.abs(dct_proxy_frame(other, crf) - 0.4321) * 255.0 * 8
    assert np.all(err < step / 2 + 1e-9)


def test_crf_step_values():
    assert crf_step(12) == 1.0
    assert crf_step(5) == 1.0
    assert crf_step(24) == pytest.approx(4.0)


def test_make_lr_chain():
    hr = VideoSequence([np.full((32, 32, 3), 0.25)] * 2)
    lr = make_lr(hr, DegradeConfig(crf=0))
    assert lr.shape == (8, 8, 3) and np.allclose(lr.frames[0], 0.25)
    rng = np.random.default_rng(2)
    clip = synthetic_clip(rng, 3, 32)
    direct = compress_crf(blur_downsample(clip), 25)
    chained = make_lr(clip, DegradeConfig(crf=25))
    assert all(np.array_equal(a, b) for a, b in zip(direct.frames, chained.frames))


def test_degradation_is_deterministic():
    a = make_corpus(3, seed=5)
    b = make_corpus(3, seed=5)
    for x, y in zip(a, b):
        assert x.crf == y.crf
        assert all(np.array_equal(p, q) for p, q in zip(x.lr.frames, y.lr.frames))


def test_mix_dataset():
    clips = [f"c{i}" for i in range(10)]
    m1 = mix_dataset(clips, 0.5, seed=3)
    assert sum(e["crf"] > 0 for e in m1) == 5
    assert m1 == mix_dataset(clips, 0.5, seed=3)
    assert {e["crf"] for e in m1} <= {0, 15, 25, 35}
    assert all(e["crf"] == 0 for e in mix_dataset(clips, 0.0))
    assert all(e["crf"] == 25 for e in mix_dataset(clips, 1.0, {25}))
    with pytest.raises(ValueError):
        mix_dataset([], 0.5)


@pytest.mark.parametrize("compressor", ["dct-proxy", "external-encoder"])
def test_crf_monotonicity(compressor):
    if compressor == "external-encoder" and find_encoder() is None:
        pytest.skip("no ffmpeg binary")
    for sample in make_corpus(3, seed=11):
        psnrs = [sequence_metrics(compress_crf(sample.lr_clean, c, compressor), sample.lr_clean).mean_psnr
                 for c in (15, 25, 35)]
        assert psnrs[0] > psnrs[1] > psnrs[2]


def test_external_fallback_flag(monkeypatch):
    import framefold.degrade as dg

    monkeypatch.setattr(dg, "find_encoder", lambda: None)
    rng = np.random.default_rng(4)
    seq = VideoSequence([rng.random((8, 8, 3))])
    out = dg.compress_crf(seq, 25, "external-encoder")
    assert out.meta["fallback"] == "ffmpeg-missing"
    assert np.array_equal(out.frames[0], dct_proxy_frame(seq.frames[0], 25))
