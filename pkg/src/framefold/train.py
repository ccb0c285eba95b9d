"""Two-stage training: codec pretraining for near-lossless round trips, then
backbone training through the frozen codec. Joint modes are kept for ablations.

Batches are drawn from ``default_rng([seed, step])`` so a resumed run
replays exactly the batches an uninterrupted run would have seen.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import cube as vc
from .archive import load_archive, save_archive
from .backbone import ToyBackbone
from .codec import (
    Codec, CodecConfig, color_correct_torch, extract_groups_torch, merge_groups_torch,
)
from .data import ClipSample
from .flow import HornSchunckParams, groups_flows
from .metrics import psnr_y

log = logging.getLogger(__name__)

STAGES = ("pretrain_codec", "train_backbone")
MODES = ("frozen", "joint", "pretrain_joint")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.99)
    total_steps: int = 5000
    batch_size: int = 8
    crop_size: int | None = None  # LR pixels; None trains on whole frames
    seed: int = 0
    flow_freeze_steps: int = 5000
    stage: str = "pretrain_codec"
    mode: str = "frozen"
    charbonnier_eps: float = 1e-3
    noise_prob: float = 0.3
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise vc.ParameterError(f"lr0 must be > 0, got {self.lr0}")
        if self.total_steps < 1:
            raise vc.ParameterError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.stage not in STAGES:
            raise vc.ParameterError(f"stage must be one of {STAGES}")
        if self.mode not in MODES:
            raise vc.ParameterError(f"mode must be one of {MODES}")
        self.betas = tuple(self.betas)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    archive: str | None = None

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for note in self.notes:
                fh.write(json.dumps({"note": note}) + "\n")
            for r in self.records:
                fh.write(json.dumps(r) + "\n")
            for e in self.evals:
                fh.write(json.dumps({"eval": e}) + "\n")


# -- primitives ----------------------------------------------------------------------

def charbonnier_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise vc.ShapeError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return torch.sqrt((pred - gt) ** 2 + eps * eps).mean()


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if not 0 <= step <= total_steps:
        raise vc.ParameterError(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return 0.0
    return lr0 * (1 + math.cos(math.pi * step / total_steps)) / 2


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_update(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor | None], state: AdamState,
                lr: float, betas=(0.9, 0.99), eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam step, applied to ``params`` in place."""
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    for i, g in enumerate(grads):
        if g is not None and not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter #{i} (shape {tuple(g.shape)}) "
                                f"at step {state.step + 1}")
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return state


# -- data ----------------------------------------------------------------------------

def _seq_tensor(seq) -> torch.Tensor:
    return torch.from_numpy(seq.as_array().transpose(0, 3, 1, 2).astype(np.float32))


@dataclass
class ClipTensors:
    lr: torch.Tensor  # (M, N, 3, h, w) degraded input
    lr_clean: torch.Tensor  # (M, N, 3, h, w)
    hr: torch.Tensor  # (M, N, 3, s*h, s*w)

    @classmethod
    def from_samples(cls, samples: Sequence[ClipSample]) -> "ClipTensors":
        if not samples:
            raise ValueError("empty dataset")
        return cls(torch.stack([_seq_tensor(s.lr) for s in samples]),
                   torch.stack([_seq_tensor(s.lr_clean) for s in samples]),
                   torch.stack([_seq_tensor(s.hr) for s in samples]))

    def __len__(self):
        return self.lr.shape[0]

    @property
    def scale(self) -> int:
        return self.hr.shape[-1] // self.lr.shape[-1]


def _batch(data: ClipTensors, cfg: TrainConfig, step: int):
    rng = np.random.default_rng([cfg.seed, step])
    idx = torch.from_numpy(rng.choice(len(data), size=min(cfg.batch_size, len(data)), replace=False))
    lr, clean, hr = data.lr[idx], data.lr_clean[idx], data.hr[idx]
    if cfg.crop_size and cfg.crop_size < lr.shape[-1]:
        c, s = cfg.crop_size, data.scale
        y, x = (int(v) for v in rng.integers(0, lr.shape[-1] - c + 1, 2))
        lr, clean = lr[..., y:y + c, x:x + c], clean[..., y:y + c, x:x + c]
        hr = hr[..., s * y:s * (y + c), s * x:s * (x + c)]
    return rng, idx, lr, clean, hr


def _augment_noise(x: torch.Tensor, rng: np.random.Generator, prob: float) -> torch.Tensor:
    """Stand-in for generic-distortion pretraining: Gaussian or salt-and-pepper noise on some clips."""
    if prob <= 0:
        return x
    x = x.clone()
    gen = torch.Generator().manual_seed(int(rng.integers(2**31)))
    for b in range(x.shape[0]):
        u = rng.random()
        if u < prob / 2:
            x[b] += torch.randn(x[b].shape, generator=gen) * float(rng.uniform(0.01, 0.05))
        elif u < prob:
            mask = torch.rand(x[b].shape[:-3] + x[b].shape[-2:], generator=gen)
            x[b] = torch.where((mask < 0.01)[:, None], 0.0, x[b])
            x[b] = torch.where((mask > 0.99)[:, None], 1.0, x[b])
    return x.clamp(0, 1)


# -- differentiable pipeline -----------------------------------------------------------

def codec_forward(codec: Codec, lr: torch.Tensor, backbone=None, scale: int = 1,
                  flow_method: str = "horn-schunck-pyramid",
                  flow_params: HornSchunckParams = HornSchunckParams()):
    """Batched, differentiable compress -> backbone -> decompress.

    lr: (B, N, 3, h, w). Returns the colour-corrected output (B, N, 3, s*h, s*w)
    and the latents (B, K, C_latent, h, w). Flows are computed on the detached
    cleaned frames; they carry no gradient.
    """
    cfg = codec.cfg
    b, n, c, h, w = lr.shape
    cleaned = codec.cleaning.clean(lr.reshape(b * n, c, h, w), cfg.clean_iterations)
    cube = cleaned.reshape(b, n * c, h, w)
    plan = vc.plan_groups(n * c, cfg.group_size, cfg.overlap)
    groups = extract_groups_torch(cube, plan)  # (B, K, S, h, w)
    k = plan.group_count
    flat = groups.reshape(b * k, cfg.group_size, h, w)
    flows = groups_flows(list(flat.detach().double().numpy()), flow_method, flow_params)
    flows = torch.from_numpy(np.stack(flows).astype(np.float32))
    latents = codec.encoder(flat, flows)
    sr_latents = latents if backbone is None else backbone(latents)
    decoded = codec.decoder(sr_latents)
    sh, sw = decoded.shape[-2:]
    merged = merge_groups_torch(decoded.reshape(b, k, cfg.group_size, sh, sw), plan)
    frames = merged.reshape(b, n, c, sh, sw)
    out = color_correct_torch(frames, lr)
    return out, latents.reshape(b, k, -1, h, w)


def decode_forward(codec: Codec, sr_latents: torch.Tensor, lr: torch.Tensor) -> torch.Tensor:
    """Decoder half only: (B, K, C_latent, H, W) latents -> colour-corrected (B, N, 3, H, W)."""
    cfg = codec.cfg
    b, n, c = lr.shape[:3]
    plan = vc.plan_groups(n * c, cfg.group_size, cfg.overlap)
    k, _, sh, sw = sr_latents.shape[1:]
    decoded = codec.decoder(sr_latents.reshape(b * k, -1, sh, sw))
    merged = merge_groups_torch(decoded.reshape(b, k, cfg.group_size, sh, sw), plan)
    return color_correct_torch(merged.reshape(b, n, c, sh, sw), lr)


@torch.no_grad()
def precompute_latents(codec: Codec, lr: torch.Tensor, flow_method: str = "horn-schunck-pyramid",
                       chunk: int = 16) -> torch.Tensor:
    return torch.cat([codec_forward(codec, lr[i:i + chunk], flow_method=flow_method)[1]
                      for i in range(0, len(lr), chunk)])


# -- evaluation ----------------------------------------------------------------------

def _mean_psnr(pred: torch.Tensor, gt: torch.Tensor) -> float:
    """Mean over clips of per-clip mean Y-PSNR; (M, N, 3, H, W) tensors, pred clipped to [0, 1]."""
    p = pred.clamp(0, 1).double().numpy().transpose(0, 1, 3, 4, 2)
    g = gt.double().numpy().transpose(0, 1, 3, 4, 2)
    vals = []
    for pc, gc in zip(p, g):
        frame_psnr = [psnr_y(a, b) for a, b in zip(pc, gc)]
        finite = [v for v in frame_psnr if math.isfinite(v)]
        vals.append(float(np.mean(finite)) if finite else math.inf)
    return float(np.mean(vals))


@torch.no_grad()
def eval_roundtrip(codec: Codec, data: ClipTensors, flow_method: str = "horn-schunck-pyramid") -> float:
    """Held-out Y-PSNR of the LR-scale round trip against the uncompressed LR clips."""
    codec.eval()
    out = torch.cat([codec_forward(codec, data.lr[i:i + 16], flow_method=flow_method)[0]
                     for i in range(0, len(data), 16)])
    return _mean_psnr(out, data.lr_clean)


@torch.no_grad()
def eval_sr(codec: Codec, backbone, data: ClipTensors, flow_method: str = "horn-schunck-pyramid") -> float:
    """Held-out Y-PSNR of the full super-resolution pipeline against HR."""
    codec.eval()
    backbone.eval()
    out = torch.cat([codec_forward(codec, data.lr[i:i + 8], backbone, data.scale, flow_method)[0]
                     for i in range(0, len(data), 8)])
    return _mean_psnr(out, data.hr)


# -- checkpoints ------------------------------------------------------------------------

def save_checkpoint(path, models: dict, state: AdamState, names: list[str], extra: dict) -> None:
    path = Path(path)
    for key, model in models.items():
        model.save(path / key, extra)
    tensors = {}
    for name, m, v in zip(names, state.m, state.v):
        tensors[f"m.{name}"] = m.numpy()
        tensors[f"v.{name}"] = v.numpy()
    save_archive(path / "optim", "optim/adam", {"params": names}, tensors, dict(extra, adam_step=state.step))


def load_optim(path, names: list[str]) -> AdamState:
    header, tensors = load_archive(Path(path) / "optim", "optim/adam", {"params": names})
    state = AdamState(step=header["extra"]["adam_step"])
    if tensors:
        state.m = [torch.from_numpy(tensors[f"m.{n}"].copy()) for n in names]
        state.v = [torch.from_numpy(tensors[f"v.{n}"].copy()) for n in names]
    return state


# -- loops ------------------------------------------------------------------------------

def _named_params(models: dict) -> tuple[list[str], list[torch.Tensor]]:
    names, params = [], []
    for key, model in models.items():
        for n, p in model.named_parameters():
            if p.requires_grad:
                names.append(f"{key}.{n}")
                params.append(p)
    return names, params


def _run_loop(cfg: TrainConfig, models: dict, loss_fn, eval_fn, checkpoint_dir, start_state: AdamState | None,
              start_step: int, log_: TrainLog, extra: dict) -> AdamState:
    names, params = _named_params(models)
    state = start_state or AdamState()
    t0 = time.perf_counter()
    for step in range(start_step, cfg.total_steps):
        for m in models.values():
            m.train()
        loss = loss_fn(step)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss.item()} at step {step + 1}")
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        lr = cosine_lr(step, cfg.total_steps, cfg.lr0)
        adam_update(params, grads, state, lr, cfg.betas)
        log_.records.append({"step": step + 1, "loss": float(loss.detach()), "lr": lr,
                             "wall": round(time.perf_counter() - t0, 4)})
        done = step + 1
        if eval_fn and cfg.eval_every and (done % cfg.eval_every == 0 or done == cfg.total_steps):
            log_.evals.append({"step": done, "psnr_y": eval_fn()})
        if checkpoint_dir and cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.total_steps:
            save_checkpoint(checkpoint_dir, models, state, names, dict(extra, step=done))
    if checkpoint_dir:
        save_checkpoint(checkpoint_dir, models, state, names, dict(extra, step=cfg.total_steps))
    return state


def _flow_note(cfg: TrainConfig, flow_method: str) -> str:
    return (f"flow_freeze_steps={cfg.flow_freeze_steps} has no effect: flow method "
            f"{flow_method!r} has no learnable parameters")


def _resume(checkpoint_dir, resume: bool, models: dict):
    if not (resume and checkpoint_dir and (Path(checkpoint_dir) / "optim" / "header.json").is_file()):
        return None, 0
    names, params = _named_params(models)
    for key, model in models.items():
        _, tensors = load_archive(Path(checkpoint_dir) / key)
        with torch.no_grad():
            model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
    state = load_optim(checkpoint_dir, names)
    return state, state.step


def pretrain_codec(train: Sequence[ClipSample] | ClipTensors, cfg: TrainConfig,
                   codec_cfg: CodecConfig = CodecConfig(), flow_method: str = "horn-schunck-pyramid",
                   held_out: Sequence[ClipSample] | ClipTensors | None = None,
                   checkpoint_dir=None, resume: bool = False) -> tuple[Codec, TrainLog]:
    """Stage 1: train cleaning + encoder + decoder so the LR round trip reproduces the uncompressed clip."""
    data = train if isinstance(train, ClipTensors) else ClipTensors.from_samples(train)
    test = None if held_out is None else (held_out if isinstance(held_out, ClipTensors)
                                          else ClipTensors.from_samples(held_out))
    torch.manual_seed(cfg.seed)
    codec = Codec(codec_cfg)
    models = {"codec": codec}
    state, start = _resume(checkpoint_dir, resume, models)
    log_ = TrainLog(notes=[_flow_note(cfg, flow_method)])
    if start:
        log_.notes.append(f"resumed at step {start}")

    def loss_fn(step):
        rng, _, lr, clean, _ = _batch(data, cfg, step)
        noisy = _augment_noise(lr, rng, cfg.noise_prob)
        out, _ = codec_forward(codec, noisy, flow_method=flow_method)
        return charbonnier_loss(out, clean, cfg.charbonnier_eps)

    eval_fn = (lambda: eval_roundtrip(codec, test, flow_method)) if test is not None else None
    if eval_fn and cfg.eval_every:
        log_.evals.append({"step": start, "psnr_y": eval_fn()})
    extra = {"stage": "pretrain_codec", "seed": cfg.seed}
    _run_loop(cfg, models, loss_fn, eval_fn, checkpoint_dir, state, start, log_, extra)
    if checkpoint_dir:
        log_.archive = str(Path(checkpoint_dir) / "codec")
    return codec.eval(), log_


def train_backbone(train: Sequence[ClipSample] | ClipTensors, codec: Codec | None, cfg: TrainConfig,
                   backbone: ToyBackbone | None = None, flow_method: str = "horn-schunck-pyramid",
                   held_out: Sequence[ClipSample] | ClipTensors | None = None,
                   codec_cfg: CodecConfig = CodecConfig(),
                   checkpoint_dir=None, resume: bool = False) -> tuple[ToyBackbone, Codec, TrainLog]:
    """Stage 2: train the backbone on latents, loss against HR after decoding and colour correction.

    ``cfg.mode`` selects what else is trained: ``frozen`` keeps the pretrained
    codec fixed (latents are computed once), ``joint`` trains a fresh codec
    together with the backbone, ``pretrain_joint`` fine-tunes the given codec.
    """
    data = train if isinstance(train, ClipTensors) else ClipTensors.from_samples(train)
    test = None if held_out is None else (held_out if isinstance(held_out, ClipTensors)
                                          else ClipTensors.from_samples(held_out))
    if cfg.mode in ("frozen", "pretrain_joint") and codec is None:
        raise TrainingError(f"mode {cfg.mode!r} needs a pretrained codec")
    torch.manual_seed(cfg.seed)
    if cfg.mode == "joint":
        codec = Codec(codec.cfg if codec is not None else codec_cfg)
    backbone = backbone or ToyBackbone(data.scale)
    log_ = TrainLog(notes=[_flow_note(cfg, flow_method), f"mode={cfg.mode}"])

    if cfg.mode == "frozen":
        for p in codec.parameters():
            p.requires_grad_(False)
        codec.eval()
        latents = precompute_latents(codec, data.lr, flow_method)
        models = {"backbone": backbone}
    else:
        for p in codec.parameters():
            p.requires_grad_(True)
        models = {"backbone": backbone, "codec": codec}
    state, start = _resume(checkpoint_dir, resume, models)
    if start:
        log_.notes.append(f"resumed at step {start}")

    def loss_fn(step):
        rng, idx, lr, _, hr = _batch(data, cfg, step)
        if cfg.mode == "frozen":
            if cfg.crop_size and cfg.crop_size < data.lr.shape[-1]:
                raise TrainingError("cropping is not supported with cached latents")
            z = latents[idx]
            b, k = z.shape[:2]
            sr = backbone(z.reshape(b * k, *z.shape[2:]))
            out = decode_forward(codec, sr.reshape(b, k, *sr.shape[1:]), lr)
        else:
            out, _ = codec_forward(codec, lr, backbone, data.scale, flow_method)
        return charbonnier_loss(out, hr, cfg.charbonnier_eps)

    eval_fn = (lambda: eval_sr(codec, backbone, test, flow_method)) if test is not None else None
    if eval_fn and cfg.eval_every:
        log_.evals.append({"step": start, "psnr_y": eval_fn()})
    extra = {"stage": "train_backbone", "mode": cfg.mode, "seed": cfg.seed}
    _run_loop(cfg, models, loss_fn, eval_fn, checkpoint_dir, state, start, log_, extra)
    for p in codec.parameters():
        p.requires_grad_(False)
    if checkpoint_dir:
        log_.archive = str(Path(checkpoint_dir) / "backbone")
        if cfg.mode == "frozen":
            codec.save(Path(checkpoint_dir) / "codec", {"stage": "pretrain_codec", "frozen": True})
    return backbone.eval(), codec.eval(), log_
