"""Run configuration: one YAML/JSON key-value file, validated, with environment overrides.

Any field can be overridden from the environment as
``FRAMEFOLD__<SECTION>__<KEY>=value`` (top-level keys use a single
separator, e.g. ``FRAMEFOLD__SEED=3``). Values are parsed as YAML scalars.
"""

from __future__ import annotations

import os
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .backbone import BackboneSpec
from .codec import CodecConfig
from .degrade import ALLOWED_CRF, COMPRESSORS, DegradeConfig
from .flow import METHODS, HornSchunckParams
from .train import MODES, TrainConfig

ENV_PREFIX = "FRAMEFOLD__"


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GroupingSection(_Section):
    group_size: int = Field(9, gt=0)
    overlap: int = Field(3, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.overlap >= self.group_size:
            raise ValueError("overlap must be < group_size")
        return self


class CodecSection(_Section):
    latent_channels: int = Field(3, gt=0)
    clean_width: int = Field(16, gt=0)
    clean_blocks: int = Field(3, ge=0)
    clean_iterations: int = Field(3, ge=0)
    enc_width: int = Field(32, gt=0)
    enc_blocks: int = Field(4, ge=0)
    dec_width: int = Field(16, gt=0)
    dec_blocks: int = Field(0, ge=0)
    reduction: int = Field(4, gt=0)


class FlowSection(_Section):
    method: str = "horn-schunck-pyramid"
    levels: int = Field(3, gt=0)
    iterations: int = Field(100, ge=0)
    smoothness: float = Field(0.1, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.method not in METHODS:
            raise ValueError(f"flow method must be one of {METHODS}")
        return self


class BackboneSection(_Section):
    name: str = "toy"
    scale: int = Field(4, gt=0)
    archive: str | None = None


class DegradeSection(_Section):
    blur_sigma: float = Field(1.5, gt=0)
    scale: int = Field(4, gt=0)
    compressor: str = "dct-proxy"
    fraction_compressed: float = Field(0.5, ge=0, le=1)
    crf_set: list[int] = [15, 25, 35]

    @model_validator(mode="after")
    def _check(self):
        if self.compressor not in COMPRESSORS:
            raise ValueError(f"compressor must be one of {COMPRESSORS}")
        bad = [c for c in self.crf_set if c not in ALLOWED_CRF or c == 0]
        if bad or not self.crf_set:
            raise ValueError(f"crf_set entries must be in {ALLOWED_CRF[1:]}, got {self.crf_set}")
        return self


class TrainSection(_Section):
    lr0: float = Field(1e-3, gt=0)
    total_steps: int = Field(5000, gt=0)
    batch_size: int = Field(8, gt=0)
    crop_size: int | None = None
    flow_freeze_steps: int = Field(5000, ge=0)
    mode: str = "frozen"
    charbonnier_eps: float = Field(1e-3, gt=0)
    noise_prob: float = Field(0.3, ge=0, le=1)
    eval_every: int = Field(0, ge=0)
    checkpoint_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        return self


class CorpusSection(_Section):
    n_clips: int = Field(64, gt=0)
    frames: int = Field(7, gt=0)
    size: int = Field(64, gt=0)


class PathsSection(_Section):
    out: str = "runs"
    codec_archive: str | None = None


class PipelineConfig(_Section):
    seed: int = 0
    grouping: GroupingSection = GroupingSection()
    codec: CodecSection = CodecSection()
    flow: FlowSection = FlowSection()
    backbone: BackboneSection = BackboneSection()
    degrade: DegradeSection = DegradeSection()
    train: TrainSection = TrainSection()
    corpus: CorpusSection = CorpusSection()
    paths: PathsSection = PathsSection()

    def codec_config(self) -> CodecConfig:
        return CodecConfig(group_size=self.grouping.group_size, overlap=self.grouping.overlap,
                           **self.codec.model_dump())

    def flow_params(self) -> HornSchunckParams:
        return HornSchunckParams(self.flow.levels, self.flow.iterations, self.flow.smoothness)

    def degrade_config(self, crf: int = 0) -> DegradeConfig:
        return DegradeConfig(self.degrade.blur_sigma, self.degrade.scale, crf, self.degrade.compressor)

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(self.backbone.name, self.backbone.scale, self.backbone.archive)

    def train_config(self, stage: str) -> TrainConfig:
        return TrainConfig(stage=stage, seed=self.seed, **self.train.model_dump())


def _set_path(tree: dict, keys: list[str], value) -> None:
    for k in keys[:-1]:
        node = tree.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {'.'.join(keys)}: {k} is not a section")
        tree = node
    tree[keys[-1]] = value


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__") if k]
        if keys:
            _set_path(tree, keys, yaml.safe_load(raw))
    return tree


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, environ=None, **overrides) -> PipelineConfig:
    """Read ``path`` (YAML or JSON; None for defaults), apply env then keyword overrides, validate."""
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
    data = _merge(data, env_overrides(environ))
    data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{loc}: {first['msg']} ({exc.error_count()} error(s))") from None
