import numpy as np
import pytest
import torch

from framefold.backbone import (
    BackboneSpec, BicubicBackbone, ToyBackbone, backbone_invocation_count, bicubic, build_backbone,
    register_backbone, super_resolve,
)
from framefold.cube import ParameterError, plan_groups


def keys_cubic(t, a=-0.75):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def bicubic_oracle(img, s):
    """Half-pixel-centred Keys cubic resampling with edge clamping, computed per output pixel."""
    h, w = img.shape
    out = np.zeros((h * s, w * s))
    for oy in range(h * s):
        sy = (oy + 0.5) / s - 0.5
        for ox in range(w * s):
            sx = (ox + 0.5) / s - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            acc = 0.0
            for j in range(y0 - 1, y0 + 3):
                for i in range(x0 - 1, x0 + 3):
                    wgt = keys_cubic(sy - j) * keys_cubic(sx - i)
                    acc += wgt * img[min(max(j, 0), h - 1), min(max(i, 0), w - 1)]
            out[oy, ox] = acc
    return out


def test_bicubic_matches_oracle():
    img = np.random.default_rng(0).random((5, 6))
    got = bicubic(torch.from_numpy(img)[None, None], 4)[0, 0].numpy()
    assert np.allclose(got, bicubic_oracle(img, 4), atol=1e-10)


def test_bicubic_scale_one_is_identity():
    x = torch.rand(2, 3, 8, 8)
    assert torch.equal(BicubicBackbone(1)(x), x)


def test_toy_backbone_at_init_equals_bicubic():
    torch.manual_seed(0)
    model = ToyBackbone(4, width=8, blocks=2).eval()
    x = torch.rand(3, 3, 8, 8)
    with torch.no_grad():
        assert torch.allclose(model(x), bicubic(x, 4), atol=1e-6)


def test_super_resolve_arity_and_chunking():
    frames = [np.random.default_rng(k).random((3, 6, 6)).astype(np.float32) for k in range(5)]
    model = BicubicBackbone(4)
    out = super_resolve(frames, model, 4, chunk=2)
    assert len(out) == 5 and out[0].shape == (3, 24, 24)
    whole = super_resolve(frames, model, 4, chunk=8)
    assert all(np.allclose(a, b) for a, b in zip(out, whole))
    assert super_resolve([], model) == []
    with pytest.raises(ParameterError):
        super_resolve(frames, model, scale=2)


def test_registry(tmp_path):
    assert isinstance(build_backbone(BackboneSpec("bicubic", 2)), BicubicBackbone)
    with pytest.raises(ParameterError):
        build_backbone(BackboneSpec("nope"))
    register_backbone("fixed2", lambda spec: BicubicBackbone(2))
    with pytest.raises(ParameterError):
        build_backbone(BackboneSpec("fixed2", 4))

    torch.manual_seed(0)
    model = ToyBackbone(4, width=8, blocks=1)
    model.save(tmp_path / "toy")
    loaded = build_backbone(BackboneSpec("toy", 4, archive=str(tmp_path / "toy")))
    for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(ParameterError):
        build_backbone(BackboneSpec("toy", 2, archive=str(tmp_path / "toy")))


@pytest.mark.parametrize("n", [1, 3, 4, 7, 10, 50, 100, 200])
def test_invocation_count(n):
    expected = 1 if n <= 3 else -(-(n - 3) // 2) + 1  # whole frames: S=3 frames, stride 2
    assert backbone_invocation_count(n) == expected == plan_groups(3 * n).group_count
