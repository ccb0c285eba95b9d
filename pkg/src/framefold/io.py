"""Frame directories (8-bit RGB PNG, ``%08d.png``) and JSON clip manifests."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .cube import VideoSequence

FRAME_PATTERN = "{:08d}.png"
_FRAME_RE = re.compile(r"^(\d{8})\.png$")
ROLES = ("train", "val", "test")


class DataError(ValueError):
    pass


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_frames(seq: VideoSequence, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for old in directory.glob("*.png"):
        old.unlink()
    for i, f in enumerate(seq.frames):
        if f.ndim != 3 or f.shape[-1] != 3:
            raise DataError(f"frame {i} has shape {f.shape}; expected (H, W, 3)")
        cv2.imwrite(str(directory / FRAME_PATTERN.format(i)), cv2.cvtColor(to_uint8(f), cv2.COLOR_RGB2BGR))
    return directory


def frame_files(directory) -> list[Path]:
    """Sorted frame files; raises DataError unless they are exactly 00000000.png .. (n-1)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"frame directory not found: {directory}")
    idx = sorted(int(m.group(1)) for p in directory.iterdir() if (m := _FRAME_RE.match(p.name)))
    if not idx:
        raise DataError(f"no %08d.png frames in {directory}")
    if idx != list(range(len(idx))):
        missing = sorted(set(range(idx[-1] + 1)) - set(idx))
        raise DataError(f"frames in {directory} are not contiguous from 0 (missing {missing[:5]})")
    return [directory / FRAME_PATTERN.format(i) for i in idx]


def read_frames(directory, frame_rate: float = 25.0) -> VideoSequence:
    frames = []
    for p in frame_files(directory):
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise DataError(f"cannot decode {p}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0)
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DataError(f"frames in {directory} differ in size: {sorted(shapes)}")
    return VideoSequence(frames, frame_rate=frame_rate, meta={"source": str(directory)})


def dir_digest(directory) -> str:
    h = hashlib.sha256()
    for p in frame_files(directory):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


class ClipEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    clip_id: str
    path: str
    frame_count: int = Field(gt=0)
    role: str = "train"
    crf: int | None = None
    seed: int | None = None
    source: str | None = None  # HR directory the LR frames were made from
    digest: str | None = None


class ClipManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    clips: list[ClipEntry]

    def by_role(self, *roles: str) -> list[ClipEntry]:
        return [c for c in self.clips if c.role in roles]


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_manifest(path) -> ClipManifest:
    """Read and validate a manifest; relative clip paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        manifest = ClipManifest.model_validate(raw)
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not JSON: {exc}") from None
    except ValidationError as exc:
        first = exc.errors()[0]
        raise DataError(f"manifest {path}: {'.'.join(map(str, first['loc']))}: {first['msg']}") from None
    base = path.parent
    ids = set()
    for c in manifest.clips:
        if c.clip_id in ids:
            raise DataError(f"duplicate clip id {c.clip_id!r}")
        ids.add(c.clip_id)
        if c.role not in ROLES:
            raise DataError(f"clip {c.clip_id}: role must be one of {ROLES}")
        c.path = str(_resolve(base, c.path))
        if c.source is not None:
            c.source = str(_resolve(base, c.source))
        n = len(frame_files(c.path))
        if n != c.frame_count:
            raise DataError(f"clip {c.clip_id}: manifest says {c.frame_count} frames, found {n}")
    return manifest


def save_manifest(manifest: ClipManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(), indent=2) + "\n")
    return path
