"""Wall-clock latency of the grouped pipeline versus the plain backbone, over a frames x resolution grid.

Protocol: one warm-up run per cell (excluded), then R timed runs with
``time.perf_counter`` around the full path (compress, backbone, decompress
when compression is on). All cells of one resolution are timed in rotation,
one run each per round, so host-speed drift affects every cell alike. Median
and IQR are reported; a cell whose IQR/median reaches ``UNSTABLE_RATIO`` is
flagged. Inputs are uniform noise so timing is content independent. Runs
never overlap and use one torch thread.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
import torch

from .backbone import BackboneSpec, backbone_invocation_count, build_backbone
from .codec import Codec, CodecConfig
from .cube import ParameterError, VideoSequence
from .pipeline import Pipeline

log = logging.getLogger(__name__)

UNSTABLE_RATIO = 0.2
CSV_COLUMNS = ("frames", "resolution", "compression", "median_ms", "iqr_ms", "invocations", "status")
PROTOCOL = ("1 warm-up run excluded; median and IQR of R timed runs (perf_counter) around "
            "compress->backbone->decompress; cells of a resolution timed in rotation; "
            "uniform-noise input; 1 torch thread; one run at a time")


@dataclass
class BenchScenario:
    frame_counts: list[int] = field(default_factory=lambda: [10, 50, 100, 200])
    resolutions: list[int] = field(default_factory=lambda: [64, 96, 128, 160, 192, 224])
    repetitions: int = 5
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    compression: list[bool] = field(default_factory=lambda: [True, False])
    codec_archive: str | None = None
    flow_method: str = "horn-schunck-pyramid"
    chunk: int = 8
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneSpec(**self.backbone)
        if not self.frame_counts or not self.resolutions or not self.compression:
            raise ParameterError("frame_counts, resolutions and compression must be non-empty")
        if min(self.frame_counts) < 1 or min(self.resolutions) < 1:
            raise ParameterError("frame counts and resolutions must be positive")
        if self.repetitions < 3:
            raise ParameterError(f"repetitions must be >= 3, got {self.repetitions}")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")


@dataclass
class BenchRow:
    frames: int
    resolution: int
    compression: bool
    median_ms: float
    iqr_ms: float
    invocations: int
    status: str  # ok | unstable | failed
    error: str = ""


def _noise_clip(n: int, size: int, rng: np.random.Generator) -> VideoSequence:
    return VideoSequence.from_array(rng.random((n, size, size, 3), dtype=np.float32))


def _time_interleaved(fns: dict, repetitions: int) -> tuple[dict, dict]:
    """Warm each function up once, then time them in rotation so slow drift hits every one alike.

    Returns (times_ms per key, error message per key that raised).
    """
    times, errors = {k: [] for k in fns}, {}

    def call(k):
        try:
            t0 = time.perf_counter()
            fns[k]()
            return (time.perf_counter() - t0) * 1e3
        except (MemoryError, RuntimeError) as exc:
            errors[k] = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            return None

    for k in fns:
        call(k)
    for _ in range(repetitions):
        for k in fns:
            if k not in errors:
                t = call(k)
                if t is not None:
                    times[k].append(t)
    return times, errors


def cell_stats(times_ms) -> tuple[float, float, str]:
    """Median, IQR and ok/unstable status of one cell's timed runs."""
    med = float(np.median(times_ms))
    q1, q3 = np.percentile(times_ms, [25, 75])
    iqr = float(q3 - q1)
    return med, iqr, "unstable" if iqr / med >= UNSTABLE_RATIO else "ok"


def run_latency_grid(scenario: BenchScenario, codec: Codec | None = None, backbone=None,
                     progress=None) -> list[BenchRow]:
    """Time every (frames, resolution, compression) cell; failures are recorded, not raised."""
    torch.manual_seed(scenario.seed)
    if codec is None:
        codec = Codec.load(scenario.codec_archive) if scenario.codec_archive else Codec(CodecConfig())
    if backbone is None:
        backbone = build_backbone(scenario.backbone)
    pipe = Pipeline(codec, backbone, scenario.backbone.scale, scenario.flow_method, chunk=scenario.chunk)
    cfg = codec.cfg
    prev_threads = torch.get_num_threads()
    torch.set_num_threads(scenario.threads)
    rows = []
    try:
        for res in scenario.resolutions:
            clips = {n: _noise_clip(n, res, np.random.default_rng([scenario.seed, n, res]))
                     for n in scenario.frame_counts}
            fns = {(n, on): partial(pipe.run if on else pipe.run_uncompressed, clips[n])
                   for n in scenario.frame_counts for on in scenario.compression}
            with torch.inference_mode():
                times, errors = _time_interleaved(fns, scenario.repetitions)
            for n, on in fns:
                inv = backbone_invocation_count(n, cfg.group_size, cfg.overlap) if on else n
                if (n, on) in errors:
                    log.warning("cell frames=%d res=%d compression=%s failed: %s", n, res, on, errors[n, on])
                    row = BenchRow(n, res, on, float("nan"), float("nan"), inv, "failed", errors[n, on])
                else:
                    med, iqr, status = cell_stats(times[n, on])
                    row = BenchRow(n, res, on, med, iqr, inv, status)
                rows.append(row)
                if progress:
                    progress(row)
    finally:
        torch.set_num_threads(prev_threads)
    return rows


def write_csv(rows: list[BenchRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.frames, r.resolution, "on" if r.compression else "off",
                        f"{r.median_ms:.3f}", f"{r.iqr_ms:.3f}", r.invocations, r.status])
    return path


def read_csv(path) -> list[BenchRow]:
    with open(path, newline="") as fh:
        return [BenchRow(int(r["frames"]), int(r["resolution"]), r["compression"] == "on",
                         float(r["median_ms"]), float(r["iqr_ms"]), int(r["invocations"]), r["status"])
                for r in csv.DictReader(fh)]


def speedup_report(rows: list[BenchRow]) -> dict:
    """Per-cell off/on ratios and, per resolution, whether speedup is non-decreasing in frame count.

    Cells missing a partner (or whose timing failed) are listed under
    ``unmatched`` and left out of the ratios.
    """
    cells: dict[tuple[int, int], dict[bool, BenchRow]] = {}
    for r in rows:
        cells.setdefault((r.resolution, r.frames), {})[r.compression] = r
    speedups, unmatched = [], []
    for (res, n), pair in sorted(cells.items()):
        on, off = pair.get(True), pair.get(False)
        if on is None or off is None or "failed" in (on.status, off.status):
            unmatched.append({"resolution": res, "frames": n})
            continue
        speedups.append({"resolution": res, "frames": n, "off_ms": off.median_ms, "on_ms": on.median_ms,
                         "speedup": off.median_ms / on.median_ms,
                         "unstable": "unstable" in (on.status, off.status)})
    monotone = {}
    for res in sorted({s["resolution"] for s in speedups}):
        seq = [s["speedup"] for s in speedups if s["resolution"] == res]
        monotone[res] = all(b >= a for a, b in zip(seq, seq[1:]))
    return {"protocol": PROTOCOL, "speedups": speedups, "non_decreasing": monotone,
            "all_non_decreasing": all(monotone.values()), "unmatched": unmatched,
            "partial": bool(unmatched)}


def plot_latency(rows: list[BenchRow], out_dir) -> list[Path]:
    """One line chart per resolution: median ms vs frame count, compression on and off."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for res in sorted({r.resolution for r in rows}):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for on, label in ((False, "backbone only"), (True, "grouped")):
            pts = sorted((r.frames, r.median_ms) for r in rows
                         if r.resolution == res and r.compression == on and r.status != "failed")
            if pts:
                ax.plot(*zip(*pts), marker="o", label=label)
        ax.set_xlabel("frames")
        ax.set_ylabel("median ms")
        ax.set_title(f"{res}x{res}")
        ax.legend()
        fig.tight_layout()
        p = out_dir / f"latency_{res}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def scenario_dict(scenario: BenchScenario) -> dict:
    return asdict(scenario)
