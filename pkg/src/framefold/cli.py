"""Command-line entry point: ``framefold <command> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 runtime failure.
Failures print a single JSON line ``{"error": ..., "code": ..., "message": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import cube as vc
from .archive import ArchiveError
from .backbone import REGISTRY, BackboneSpec, ToyBackbone, build_backbone
from .bench import BenchScenario, plot_latency, run_latency_grid, speedup_report, write_csv
from .codec import Codec, compress_sequence, decompress_sequence
from .config import ENV_PREFIX, ConfigError, PipelineConfig, load_config
from .data import ClipSample, synthetic_clip
from .degrade import blur_downsample, compress_crf, mix_dataset
from .io import ClipEntry, ClipManifest, DataError, dir_digest, load_manifest, read_frames, save_manifest, write_frames
from .metrics import sequence_metrics, write_reports
from .pipeline import Pipeline
from .train import TrainingError, pretrain_codec, train_backbone

log = logging.getLogger("framefold")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config, seed=getattr(args, "seed", None))
    steps = getattr(args, "steps", None)
    if steps is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"total_steps": steps})})
        cfg = PipelineConfig.model_validate(cfg.model_dump())
    return cfg


def _out(args) -> Path:
    if not args.out:
        raise CliError(EXIT_CONFIG, "--out is required")
    return Path(args.out)


def _manifest(args) -> ClipManifest:
    if not args.manifest:
        raise CliError(EXIT_CONFIG, "--manifest is required")
    return load_manifest(args.manifest)


def _samples(manifest: ClipManifest, cfg: PipelineConfig, roles) -> list[ClipSample]:
    """Training pairs from a degraded manifest; the uncompressed LR target is rebuilt from the HR source."""
    out = []
    for e in manifest.by_role(*roles):
        if e.source is None:
            raise DataError(f"clip {e.clip_id} has no HR source; run `degrade` first")
        hr = read_frames(e.source)
        clean = blur_downsample(hr, cfg.degrade.blur_sigma, cfg.degrade.scale)
        out.append(ClipSample(e.clip_id, hr, clean, read_frames(e.path), e.crf or 0))
    return out


def _codec(cfg: PipelineConfig, path=None) -> Codec:
    path = path or cfg.paths.codec_archive
    if not path:
        raise CliError(EXIT_CONFIG, "a stage-1 codec archive is required (--codec or paths.codec_archive)")
    if not (Path(path) / "header.json").is_file():
        raise DataError(f"stage-1 codec archive not found at {path}")
    return Codec.load(path, cfg.codec_config())


def _backbone(cfg: PipelineConfig, choice: str | None):
    spec = cfg.backbone_spec()
    if choice:
        if choice in REGISTRY:
            spec = BackboneSpec(choice, spec.scale)
        elif (Path(choice) / "header.json").is_file():
            spec = BackboneSpec("toy", spec.scale, choice)
        else:
            raise CliError(EXIT_CONFIG, f"--backbone {choice!r} is neither a registered name {sorted(REGISTRY)} "
                                        f"nor a backbone archive")
    return build_backbone(spec)


# -- commands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    """Write a seeded synthetic HR corpus and its manifest."""
    cfg = _config(args)
    out = _out(args)
    rng = np.random.default_rng(cfg.seed)
    entries = []
    for i in range(args.n_clips or cfg.corpus.n_clips):
        cid = f"{args.prefix}{i:04d}"
        seq = synthetic_clip(rng, cfg.corpus.frames, cfg.corpus.size)
        write_frames(seq, out / cid)
        entries.append(ClipEntry(clip_id=cid, path=cid, frame_count=len(seq), role=args.role, seed=cfg.seed,
                                 digest=dir_digest(out / cid)))
    path = save_manifest(ClipManifest(clips=entries), out / "manifest.json")
    print(path)
    return EXIT_OK


def cmd_degrade(args) -> int:
    cfg = _config(args)
    manifest, out = _manifest(args), _out(args)
    ids = [c.clip_id for c in manifest.clips]
    if args.crf is not None:
        plan = [{"clip_id": c, "crf": args.crf, "seed": cfg.seed} for c in ids]
    else:
        plan = mix_dataset(ids, cfg.degrade.fraction_compressed, cfg.degrade.crf_set, cfg.seed)
    entries = []
    for clip, p in zip(manifest.clips, plan):
        dc = cfg.degrade_config(p["crf"])
        lr = compress_crf(blur_downsample(read_frames(clip.path), dc.blur_sigma, dc.scale), dc.crf, dc.compressor)
        if lr.meta.get("fallback"):
            log.warning("clip %s: external encoder unavailable, used dct-proxy", clip.clip_id)
        write_frames(lr, out / clip.clip_id)
        entries.append(ClipEntry(clip_id=clip.clip_id, path=clip.clip_id, frame_count=len(lr), role=clip.role,
                                 crf=p["crf"], seed=p["seed"], source=str(Path(clip.path).resolve()),
                                 digest=dir_digest(out / clip.clip_id)))
    print(save_manifest(ClipManifest(clips=entries), out / "manifest.json"))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    manifest, out = _manifest(args), _out(args)
    train = _samples(manifest, cfg, ("train",))
    held = _samples(manifest, cfg, ("val", "test")) or None
    if not train:
        raise DataError("manifest has no clips with role 'train'")
    codec, tlog = pretrain_codec(train, cfg.train_config("pretrain_codec"), cfg.codec_config(), cfg.flow.method,
                                 held, checkpoint_dir=out, resume=args.resume)
    tlog.write_jsonl(out / "train_log.jsonl")
    print(json.dumps({"archive": tlog.archive, "final_loss": tlog.losses()[-1] if tlog.records else None,
                      "evals": tlog.evals[-1:]}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest, out = _manifest(args), _out(args)
    tcfg = cfg.train_config("train_backbone")
    codec = None if tcfg.mode == "joint" and not (args.codec or cfg.paths.codec_archive) else _codec(cfg, args.codec)
    train = _samples(manifest, cfg, ("train",))
    held = _samples(manifest, cfg, ("val", "test")) or None
    if not train:
        raise DataError("manifest has no clips with role 'train'")
    backbone = ToyBackbone(cfg.backbone.scale)
    backbone, codec, tlog = train_backbone(train, codec, tcfg, backbone, cfg.flow.method, held,
                                           cfg.codec_config(), checkpoint_dir=out, resume=args.resume)
    tlog.write_jsonl(out / "train_log.jsonl")
    print(json.dumps({"archive": tlog.archive, "final_loss": tlog.losses()[-1] if tlog.records else None,
                      "evals": tlog.evals[-1:]}))
    return EXIT_OK


def _dump_latents(latents, directory: Path) -> None:
    frames = []
    for z in latents.frames:
        img = z[:3] if z.shape[0] >= 3 else np.repeat(z[:1], 3, axis=0)
        frames.append(np.clip(img.transpose(1, 2, 0), 0, 1))
    write_frames(vc.VideoSequence(frames), directory)


def cmd_infer(args) -> int:
    cfg = _config(args)
    out = _out(args)
    if args.clip:
        clips = [(Path(args.clip).name, args.clip)]
    else:
        manifest = _manifest(args)
        entries = manifest.by_role("test") or manifest.clips
        clips = [(e.clip_id, e.path) for e in entries]
    torch.manual_seed(cfg.seed)
    pipe = Pipeline(_codec(cfg, args.codec), _backbone(cfg, args.backbone), cfg.backbone.scale, cfg.flow.method,
                    cfg.flow_params())
    for cid, path in clips:
        lr = read_frames(path)
        sr, latents = pipe.run(lr)
        write_frames(sr, out / cid)
        if args.dump_latents:
            _dump_latents(latents, out / cid / "latents")
        log.info("%s: %d frames -> %d latents -> %d SR frames", cid, len(lr), len(latents.frames), len(sr))
    print(json.dumps({"clips": len(clips), "out": str(out)}))
    return EXIT_OK


def _clip_dirs(root: Path) -> dict[str, Path]:
    if any(root.glob("*.png")):
        return {root.name: root}
    return {p.name: p for p in sorted(root.iterdir()) if p.is_dir() and any(p.glob("*.png"))}


def cmd_eval(args) -> int:
    pred_root, gt_root = Path(args.pred), Path(args.gt)
    for p in (pred_root, gt_root):
        if not p.is_dir():
            raise DataError(f"directory not found: {p}")
    pred, gt = _clip_dirs(pred_root), _clip_dirs(gt_root)
    if len(pred) == 1 and len(gt) == 1:
        pairs = [(next(iter(pred)), next(iter(pred.values())), next(iter(gt.values())))]
    else:
        missing = sorted(set(gt) - set(pred))
        if missing:
            raise DataError(f"no predictions for clips {missing[:5]}")
        pairs = [(c, pred[c], gt[c]) for c in sorted(gt)]
    reports = [sequence_metrics(read_frames(p), read_frames(g), cid) for cid, p, g in pairs]
    summary = {"clips": len(reports), "mean_psnr_y": float(np.mean([r.mean_psnr for r in reports])),
               "mean_ssim_y": float(np.mean([r.mean_ssim for r in reports]))}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_reports(reports, out / "metrics.json", out / "metrics.csv")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_bench(args) -> int:
    out = _out(args)
    data = {}
    if args.config:
        try:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read scenario {args.config}: {exc}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    if args.backbone:
        data["backbone"] = {**data.get("backbone", {}), "name": args.backbone}
    try:
        scenario = BenchScenario(**data)
    except TypeError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    rows = run_latency_grid(scenario, progress=lambda r: log.info("%s", r))
    write_csv(rows, out)
    report = speedup_report(rows)
    out.with_suffix(".report.json").write_text(json.dumps(report, indent=2))
    if args.plot:
        plot_latency(rows, out.parent)
    print(json.dumps({"csv": str(out), "cells": len(rows), "all_non_decreasing": report["all_non_decreasing"]}))
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    cfg = _config(args)
    if not args.clip:
        raise CliError(EXIT_CONFIG, "--clip is required")
    lr = read_frames(args.clip)
    g = cfg.grouping
    if args.mode == "grouping":
        cube = vc.stack(lr)
        plan = vc.plan_groups(cube.channels.shape[0], g.group_size, g.overlap)
        rec = vc.unstack(vc.merge_groups(vc.extract_groups(cube, plan), plan))
    else:
        codec = _codec(cfg, args.codec)
        latents = compress_sequence(lr, codec, cfg.flow.method, cfg.flow_params())
        rec = decompress_sequence(latents.frames, latents.plan, lr, codec, scale=1)
        rec = vc.VideoSequence([np.clip(f, 0, 1) for f in rec.frames])
    report = sequence_metrics(rec, lr, Path(args.clip).name)
    result = {"mode": args.mode, "clip": report.clip, "mean_psnr_y": report.mean_psnr,
              "mean_ssim_y": report.mean_ssim, "inf_frames": report.inf_frames}
    text = json.dumps(result)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="framefold", description="Grouped frame compression for video SR.",
                                epilog=f"Any config field can be set via {ENV_PREFIX}<SECTION>__<KEY>=value.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, *flags):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="YAML/JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        for f in flags:
            f(sp)
        return sp

    manifest = lambda sp: sp.add_argument("--manifest")
    steps = lambda sp: sp.add_argument("--steps", type=int)
    resume = lambda sp: sp.add_argument("--resume", action="store_true")
    codec = lambda sp: sp.add_argument("--codec", help="stage-1 codec archive directory")
    backbone = lambda sp: sp.add_argument("--backbone", help="registered backbone name or toy archive directory")
    clip = lambda sp: sp.add_argument("--clip", help="frame directory")

    s = add("synth", cmd_synth, "write a synthetic HR corpus")
    s.add_argument("--n-clips", type=int)
    s.add_argument("--role", default="train")
    s.add_argument("--prefix", default="clip")
    s = add("degrade", cmd_degrade, "blur, downsample and compress HR clips", manifest)
    s.add_argument("--crf", type=int, help="compress every clip at this CRF instead of the seeded mix")
    add("pretrain", cmd_pretrain, "stage 1: train the codec", manifest, steps, resume)
    add("train", cmd_train, "stage 2: train the backbone on latents", manifest, steps, resume, codec)
    s = add("infer", cmd_infer, "super-resolve clips", manifest, codec, backbone, clip)
    s.add_argument("--dump-latents", action="store_true", help="also write the latent frames")
    s = add("eval", cmd_eval, "Y-PSNR/SSIM of predicted against ground-truth frames")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    add("bench", cmd_bench, "latency grid with and without grouping", backbone).add_argument(
        "--plot", action="store_true")
    s = add("roundtrip", cmd_roundtrip, "LR round trip through grouping or the full codec", codec, clip)
    s.add_argument("--mode", choices=("grouping", "full"), default="full")
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else _fail(EXIT_CONFIG, "usage", "invalid command line")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, {EXIT_CONFIG: "config", EXIT_DATA: "data"}.get(exc.code, "runtime"), exc)
    except (ConfigError, vc.ParameterError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (DataError, vc.ShapeError, ArchiveError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (TrainingError, RuntimeError, MemoryError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", exc)
    except Exception as exc:  # noqa: BLE001 - every failure must end in one parsable line
        log.debug("unhandled", exc_info=True)
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
