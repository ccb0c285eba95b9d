"""Optical flow conditioning: coarse-to-fine Horn-Schunck and backward warping.

Flows are (2, H, W) arrays of (dx, dy) defined on the reference grid: sampling
the target at ``p + flow(p)`` reproduces the reference at ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .cube import COLOR_CHANNELS, ChannelGroup, ParameterError, ShapeError

METHODS = ("zero", "horn-schunck-pyramid")

_LUMA = np.array([0.299, 0.587, 0.114])
_AVG = np.array([[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]])


@dataclass(frozen=True)
class HornSchunckParams:
    levels: int = 3
    iterations: int = 100
    smoothness: float = 0.1


@dataclass
class FlowField:
    displacement: np.ndarray  # (2, H, W)

    def __post_init__(self):
        if self.displacement.ndim != 3 or self.displacement.shape[0] != 2:
            raise ShapeError(f"flow must be (2, H, W), got {self.displacement.shape}")

    @property
    def dx(self) -> np.ndarray:
        return self.displacement[0]

    @property
    def dy(self) -> np.ndarray:
        return self.displacement[1]


def to_luma(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3 and frame.shape[-1] == 3:
        return frame @ _LUMA
    raise ShapeError(f"expected (H, W) or (H, W, 3), got {frame.shape}")


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample a batch (B, H, W) at float coordinates, clamping to the border."""
    b, h, w = img.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    bi = np.arange(b)[:, None, None]
    top = img[bi, y0, x0] * (1 - fx) + img[bi, y0, x1] * fx
    bot = img[bi, y1, x0] * (1 - fx) + img[bi, y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _warp_batch(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear(img, xx + u, yy + v)


def warp(frame: np.ndarray, flow: FlowField | np.ndarray) -> np.ndarray:
    """Bilinear backward warp: ``out(p) = frame(p + flow(p))`` with border clamping."""
    disp = flow.displacement if isinstance(flow, FlowField) else np.asarray(flow)
    frame = np.asarray(frame, dtype=np.float64)
    if disp.shape != (2, *frame.shape[:2]):
        raise ShapeError(f"flow {disp.shape} does not match frame {frame.shape}")
    planes = frame[None] if frame.ndim == 2 else np.moveaxis(frame, -1, 0)
    n = planes.shape[0]
    out = _warp_batch(planes, np.broadcast_to(disp[0], (n, *disp.shape[1:])),
                      np.broadcast_to(disp[1], (n, *disp.shape[1:])))
    return out[0] if frame.ndim == 2 else np.moveaxis(out, 0, -1)


MAX_BATCH = 128  # cv2.filter2D channel limit for the (H, W, B) layout


def _local_average(f: np.ndarray) -> np.ndarray:
    """Horn-Schunck neighbourhood mean of an (H, W, B) stack, edge-replicated."""
    return cv2.filter2D(f, -1, _AVG, borderType=cv2.BORDER_REPLICATE).reshape(f.shape)


def _resize(batch: np.ndarray, shape: tuple[int, int], interp: int) -> np.ndarray:
    return np.stack([cv2.resize(im, (shape[1], shape[0]), interpolation=interp) for im in batch])


def horn_schunck_pyramid(ref: np.ndarray, tgt: np.ndarray,
                         params: HornSchunckParams = HornSchunckParams()) -> np.ndarray:
    """Coarse-to-fine Horn-Schunck on batches of luma images (B, H, W) -> (B, 2, H, W)."""
    alpha2 = params.smoothness**2
    pyr = [(ref, tgt)]
    for _ in range(params.levels - 1):
        r, t = pyr[-1]
        h, w = r.shape[1:]
        if min(h, w) < 8:
            break
        size = ((h + 1) // 2, (w + 1) // 2)
        pyr.append((_resize(r, size, cv2.INTER_AREA), _resize(t, size, cv2.INTER_AREA)))

    u = v = None
    for r, t in reversed(pyr):
        h, w = r.shape[1:]
        if u is None:
            u = np.zeros_like(r)
            v = np.zeros_like(r)
        else:
            sy, sx = h / u.shape[1], w / u.shape[2]
            u = _resize(u, (h, w), cv2.INTER_LINEAR) * sx
            v = _resize(v, (h, w), cv2.INTER_LINEAR) * sy
        u0, v0 = u.copy(), v.copy()
        warped = _warp_batch(t, u0, v0)
        mean = 0.5 * (r + warped)
        iy, ix = np.gradient(mean, axis=(1, 2))
        it = warped - r
        # iterate in float32 (H, W, B) layout so one filter call smooths the whole batch
        ix, iy, it, u0, v0 = (np.ascontiguousarray(a.transpose(1, 2, 0), dtype=np.float32)
                              for a in (ix, iy, it, u0, v0))
        denom = alpha2 + ix**2 + iy**2
        ix_n, iy_n = ix / denom, iy / denom
        c0 = ix * u0 + iy * v0 - it
        ub, vb = u0.copy(), v0.copy()
        k, tmp = np.empty_like(ub), np.empty_like(ub)
        for _ in range(params.iterations):
            ua, va = _local_average(ub), _local_average(vb)
            np.multiply(ix, ua, out=k)
            np.multiply(iy, va, out=tmp)
            k += tmp
            k -= c0
            np.multiply(ix_n, k, out=ub)
            np.subtract(ua, ub, out=ub)
            np.multiply(iy_n, k, out=vb)
            np.subtract(va, vb, out=vb)
        u = ub.transpose(2, 0, 1).astype(np.float64)
        v = vb.transpose(2, 0, 1).astype(np.float64)
    return np.stack([u, v], axis=1)


def estimate_flows(refs: np.ndarray, tgts: np.ndarray, method: str = "horn-schunck-pyramid",
                   params: HornSchunckParams = HornSchunckParams()) -> np.ndarray:
    """Batched flow between luma images (B, H, W) -> (B, 2, H, W)."""
    if refs.shape != tgts.shape:
        raise ShapeError(f"reference {refs.shape} and target {tgts.shape} differ")
    if method == "zero":
        return np.zeros((refs.shape[0], 2, *refs.shape[1:]))
    if method == "horn-schunck-pyramid":
        refs, tgts = refs.astype(np.float64), tgts.astype(np.float64)
        return np.concatenate([horn_schunck_pyramid(refs[i:i + MAX_BATCH], tgts[i:i + MAX_BATCH], params)
                               for i in range(0, max(len(refs), 1), MAX_BATCH)])
    raise ParameterError(f"unknown flow method {method!r}; expected one of {METHODS}")


def estimate_flow(reference: np.ndarray, target: np.ndarray,
                  method: str = "horn-schunck-pyramid",
                  params: HornSchunckParams = HornSchunckParams()) -> FlowField:
    if np.shape(reference) != np.shape(target):
        raise ShapeError(f"reference {np.shape(reference)} and target {np.shape(target)} differ")
    r, t = to_luma(reference), to_luma(target)
    return FlowField(estimate_flows(r[None], t[None], method, params)[0])


def _group_luma(data: np.ndarray) -> np.ndarray:
    s = data.shape[0]
    if s % COLOR_CHANNELS:
        raise ShapeError(f"group of {s} channels does not hold whole frames")
    frames = data.reshape(s // COLOR_CHANNELS, COLOR_CHANNELS, *data.shape[1:])
    return np.einsum("fchw,c->fhw", frames, _LUMA)


def flow_channels(group_size: int) -> int:
    if group_size % COLOR_CHANNELS:
        raise ShapeError(f"group size {group_size} is not a multiple of {COLOR_CHANNELS}")
    return 2 * (group_size // COLOR_CHANNELS - 1)


def groups_flows(groups: list[np.ndarray], method: str = "horn-schunck-pyramid",
                 params: HornSchunckParams = HornSchunckParams()) -> list[np.ndarray]:
    """Conditioning flows for many (S, H, W) groups at once.

    Each group yields flows from its centre frame (index F // 2) to every other
    frame, concatenated in frame order: 2 * (F - 1) channels.
    """
    refs, tgts = [], []
    for data in groups:
        luma = _group_luma(np.asarray(data))
        c = luma.shape[0] // 2
        for j in range(luma.shape[0]):
            if j != c:
                refs.append(luma[c])
                tgts.append(luma[j])
    if not refs:
        return [np.zeros((0, *np.shape(g)[1:])) for g in groups]
    flows = estimate_flows(np.stack(refs), np.stack(tgts), method, params)
    per = len(refs) // len(groups)
    return [flows[i * per:(i + 1) * per].reshape(2 * per, *flows.shape[2:]) for i in range(len(groups))]


def group_flows(group: ChannelGroup | np.ndarray, method: str = "horn-schunck-pyramid",
                params: HornSchunckParams = HornSchunckParams()) -> np.ndarray:
    data = group.data if isinstance(group, ChannelGroup) else np.asarray(group)
    return groups_flows([data], method, params)[0]
