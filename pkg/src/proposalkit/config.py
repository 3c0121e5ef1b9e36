"""Pipeline configuration, stored as JSON.

Defaults: NMS at IoU 0.8, both samplers with center ratio 0.25 and top-k
10 (classification) / 20 (regression), and crops with a 20 px margin
resized to 512x512.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .anchors import DEFAULT_BASE_SCALE, DEFAULT_STRIDES, PyramidSpec
from .assignment import CLS_SAMPLER, REG_SAMPLER, SamplerConfig
from .crop import CropSpec
from .evaluation import EvalConfig
from .geometry import ImageSize
from .postprocess import NMS_IOU_THR


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorConfig:
    strides: tuple[int, ...] = DEFAULT_STRIDES
    base_scale: float = DEFAULT_BASE_SCALE

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(self.strides))
        self.pyramid(ImageSize(1, 1))  # validates

    def pyramid(self, image: ImageSize) -> PyramidSpec:
        return PyramidSpec(image, self.strides, self.base_scale)


@dataclass(frozen=True)
class PipelineConfig:
    nms_iou_thr: float = NMS_IOU_THR
    cls_sampler: SamplerConfig = CLS_SAMPLER
    reg_sampler: SamplerConfig = REG_SAMPLER
    crop: CropSpec = field(default_factory=CropSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)

    def __post_init__(self):
        if not 0.0 <= self.nms_iou_thr <= 1.0:
            raise ValueError(f"nms_iou_thr must lie in [0, 1], got {self.nms_iou_thr}")

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, data: dict) -> PipelineConfig:
        return _build(cls, data, "")

    @classmethod
    def load(cls, path) -> PipelineConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
        return cls.from_dict(data)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data, path: str):
    where = path or "<root>"
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        t = hints[name]
        if dataclasses.is_dataclass(t):
            kwargs[name] = _build(t, value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e

