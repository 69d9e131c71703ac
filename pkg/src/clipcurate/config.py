"""Pipeline configuration: per-module tables in a TOML file, all defaulted."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Any, Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .camera_motion import ClassifierConfig
from .flow import FlowConfig
from .quality import FilterConfig
from .segmenter import SegmenterConfig

STAGES = ("segment", "classify", "score", "filter", "sample", "caption")
# stage -> stages it needs
STAGE_DEPS = {
    "segment": (),
    "classify": ("segment",),
    "score": ("segment",),
    "filter": ("classify", "score"),
    "sample": ("segment",),
    "caption": ("segment",),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MediaConfig:
    target_height: int = 270
    decoder_cmd: str = ""  # e.g. "ffmpeg -v error -i {src} -f yuv4mpegpipe -pix_fmt yuvj444p -"
    decoder_fmt: str = "y4m"
    queue_size: int = 4


@dataclass(frozen=True)
class SamplerConfig:
    N: int = 85
    trim_fraction: float = 0.10


@dataclass(frozen=True)
class ServiceConfig:
    url: str = ""
    timeout_s: float = 30.0
    attempts: int = 1
    fallback: bool = True
    rps_limit: float = 0.0


@dataclass(frozen=True)
class ScoringConfig:
    frames: int = 8
    url: str = ""
    timeout_s: float = 30.0
    attempts: int = 1
    fallback: bool = True
    rps_limit: float = 0.0


@dataclass(frozen=True)
class CaptionSection:
    url: str = ""
    timeout_s: float = 60.0
    attempts: int = 3
    rps_limit: float = 0.0
    min_words: int = 80
    vocabulary: str = ""  # path; empty = built-in list
    template_id: str = "spatiotemporal-v1"
    target_language: str = "en"
    frames: int = 16


@dataclass(frozen=True)
class PathsConfig:
    sources: str = "sources.txt"
    manifest: str = "manifest.jsonl"


@dataclass(frozen=True)
class PipelineConfig:
    workers: int = 1
    stages: tuple[str, ...] = ("segment", "classify", "score", "filter", "sample")
    seed: str = "clipcurate"
    paths: PathsConfig = field(default_factory=PathsConfig)
    media: MediaConfig = field(default_factory=MediaConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    classifier_service: ServiceConfig = field(default_factory=ServiceConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    caption: CaptionSection = field(default_factory=CaptionSection)

    def validate(self) -> "PipelineConfig":
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        unknown = set(self.stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages: {sorted(unknown)}")
        for s in self.stages:
            missing = [d for d in STAGE_DEPS[s] if d not in self.stages]
            if missing:
                raise ConfigError(f"stage {s!r} requires {missing}")
        if self.media.target_height < 64:
            raise ConfigError("media.target_height must be >= 64")
        if self.sampler.N < 1 or not 0 <= self.sampler.trim_fraction < 0.5:
            raise ConfigError("sampler.N must be >= 1 and trim_fraction in [0, 0.5)")
        if "caption" in self.stages and not self.caption.url:
            raise ConfigError("caption stage enabled but caption.url is empty")
        try:
            self.flow.validate()
            self.segmenter.validate()
            self.filter.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        manifest_dir = os.path.dirname(os.path.abspath(self.paths.manifest))
        if not os.path.isdir(manifest_dir):
            try:
                os.makedirs(manifest_dir, exist_ok=True)
            except OSError as e:
                raise ConfigError(f"cannot create {manifest_dir}: {e}") from e
        return self

    def with_stages(self, stages) -> "PipelineConfig":
        return dataclasses.replace(self, stages=tuple(stages))

    def with_workers(self, workers: int) -> "PipelineConfig":
        return dataclasses.replace(self, workers=workers)

    def with_paths(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, paths=dataclasses.replace(self.paths, **kw))


_SECTIONS = {f.name: f for f in fields(PipelineConfig) if dataclasses.is_dataclass(f.default_factory)}
_TOP = {"workers", "stages", "seed"}


def _build_section(cls, table: dict, name: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in table.items():
        if k not in known:
            raise ConfigError(f"unknown key [{name}].{k}")
        default = known[k].default
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"[{name}].{k} must be a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"[{name}].{k} must be an integer")
        elif isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"[{name}].{k} must be a number")
            v = float(v)
        elif isinstance(default, str) and not isinstance(v, str):
            raise ConfigError(f"[{name}].{k} must be a string")
        kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict, base_dir: Optional[str] = None) -> PipelineConfig:
    kwargs: dict[str, Any] = {}
    for k, v in data.items():
        if k in _TOP:
            kwargs[k] = tuple(v) if k == "stages" else v
        elif k in _SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"[{k}] must be a table")
            kwargs[k] = _build_section(_SECTIONS[k].default_factory, v, k)
        else:
            raise ConfigError(f"unknown key {k!r}")
    if "workers" in kwargs and (isinstance(kwargs["workers"], bool) or not isinstance(kwargs["workers"], int)):
        raise ConfigError("workers must be an integer")
    if "seed" in kwargs:
        kwargs["seed"] = str(kwargs["seed"])
    cfg = PipelineConfig(**kwargs)
    if base_dir:
        cfg = _resolve_paths(cfg, base_dir)
    # the quota draw follows the run seed unless set explicitly
    if "seed" in kwargs and "quota_seed" not in data.get("filter", {}):
        cfg = dataclasses.replace(cfg, filter=dataclasses.replace(cfg.filter, quota_seed=cfg.seed))
    return cfg


def _resolve_paths(cfg: PipelineConfig, base_dir: str) -> PipelineConfig:
    def rel(p: str) -> str:
        return p if not p or os.path.isabs(p) else os.path.join(base_dir, p)

    paths = dataclasses.replace(cfg.paths, sources=rel(cfg.paths.sources), manifest=rel(cfg.paths.manifest))
    caption = dataclasses.replace(cfg.caption, vocabulary=rel(cfg.caption.vocabulary))
    return dataclasses.replace(cfg, paths=paths, caption=caption)


def load_config(path: Optional[str]) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return config_from_dict(data, os.path.dirname(os.path.abspath(path)))
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: PipelineConfig) -> str:
    lines = [f"workers = {cfg.workers}", f"stages = {_toml_value(cfg.stages)}", f"seed = {_toml_value(cfg.seed)}"]
    for name in _SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in fields(section):
            lines.append(f"{f.name} = {_toml_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"
