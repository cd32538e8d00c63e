"""Declarative run configuration.

A config file is plain text, one ``section.key = value`` per line; ``#``
starts a comment.  Tuples are comma separated and ``none`` stands for an
absent optional value.  Parsing is strict: unknown sections or keys and
malformed values are rejected with the offending line number.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

from .codec import AutoEncoderConfig
from .dataset import DEFAULT_TOY_WORDS
from .denoiser import DenoiserConfig
from .engine import TrainConfig
from .errors import ParseError, ValidationError
from .experiments import TOY_TRAIN
from .metrics import ClassifierConfig
from .schedule import linear_schedule


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def validate(self) -> None:
        linear_schedule(self.T, self.beta_start, self.beta_end)

    def build(self):
        return linear_schedule(self.T, self.beta_start, self.beta_end)


@dataclass
class CodecConfig:
    kind: str = "pooled"
    factor: int = 2
    latent_channels: int = 4
    hidden_channels: int = 16
    epochs: int = 80
    batch_size: int = 16
    learning_rate: float = 5e-3
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("identity", "pooled", "learned"):
            raise ValidationError(f"codec.kind must be identity, pooled or learned, got {self.kind!r}")
        if self.factor < 1 or self.factor & (self.factor - 1):
            raise ValidationError(f"codec.factor must be a power of 2, got {self.factor}")

    def autoencoder(self) -> AutoEncoderConfig:
        return AutoEncoderConfig(self.factor, self.latent_channels, self.hidden_channels,
                                 self.epochs, self.batch_size, self.learning_rate)


@dataclass
class DatasetConfig:
    # empty manifest means "render the toy set"
    manifest: str = ""
    height: int = 32
    width: int = 128
    num_styles: int = 4
    words: tuple[str, ...] = DEFAULT_TOY_WORDS
    samples_per_pair: int = 4
    seed: int = 7

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"dataset extents must be positive, got {self.height}x{self.width}")


@dataclass
class SampleConfig:
    checkpoint: str = "checkpoint.gdf"
    t_sample: int = 600
    seed: int = 0

    def validate(self) -> None:
        if self.t_sample < 1:
            raise ValidationError(f"sample.t_sample must be >= 1, got {self.t_sample}")


@dataclass
class MetricsConfig:
    n_generated: int = 64
    classifier_widths: tuple[int, ...] = (16, 32, 32)
    classifier_epochs: int = 25
    classifier_lr: float = 3e-3
    test_fraction: float = 0.25
    classifier_input_pool: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.classifier_input_pool < 1:
            raise ValidationError(f"metrics.classifier_input_pool must be >= 1, got {self.classifier_input_pool}")
        if len(self.classifier_widths) != 3:
            raise ValidationError("metrics.classifier_widths needs exactly three entries")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError(f"metrics.test_fraction must lie in (0, 1), got {self.test_fraction}")

    def classifier(self) -> ClassifierConfig:
        return ClassifierConfig(widths=tuple(self.classifier_widths), epochs=self.classifier_epochs,
                                learning_rate=self.classifier_lr, test_fraction=self.test_fraction,
                                input_pool=self.classifier_input_pool)


SECTIONS = ("schedule", "denoiser", "codec", "train", "dataset", "sample", "metrics")


@dataclass
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def validate(self) -> "RunConfig":
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                lines.append(f"{name}.{f.name} = {_format(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, assignments: typing.Iterable[str]) -> "RunConfig":
        return parse_config("\n".join(assignments), base=self)


PRESETS = {
    "desk": lambda: RunConfig(train=dataclasses.replace(TOY_TRAIN)),
    # full-scale reference values; far too large for a CPU
    "iam-full": lambda: RunConfig(
        schedule=ScheduleConfig(1000, 1e-4, 0.02),
        denoiser=DenoiserConfig(base_channels=320, attention_heads=4, text_dim=320),
        codec=CodecConfig(kind="learned", factor=8, latent_channels=4),
        train=TrainConfig(epochs=1000, batch_size=224, learning_rate=1e-4),
        dataset=DatasetConfig(manifest="iam/manifest.tsv", height=64, width=256),
    ),
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def _convert(text: str, tp):
    tp, optional = _unwrap_optional(tp)
    if text.lower() == "none":
        if optional:
            return None
        raise ValueError("value may not be none")
    if typing.get_origin(tp) is tuple:
        item = typing.get_args(tp)[0]
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_convert(p, item) for p in parts)
    if tp is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return low == "true"
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    if tp is str:
        return text
    raise TypeError(f"unsupported field type {tp!r}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``section.key = value`` lines on top of ``base`` (defaults if None)."""
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    sections = {name: dataclasses.replace(getattr(cfg, name)) for name in SECTIONS}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"config line {n}: expected 'section.key = value', got {raw.strip()!r}")
        lhs, value = (s.strip() for s in line.split("=", 1))
        if "." not in lhs:
            raise ParseError(f"config line {n}: key {lhs!r} lacks a section prefix")
        section_name, key = lhs.split(".", 1)
        if section_name not in sections:
            raise ParseError(f"config line {n}: unknown section {section_name!r}")
        section = sections[section_name]
        hints = typing.get_type_hints(type(section))
        if key not in {f.name for f in dataclasses.fields(section)}:
            raise ParseError(f"config line {n}: unknown key {lhs!r}")
        try:
            setattr(section, key, _convert(value, hints[key]))
        except (ValueError, TypeError) as exc:
            raise ParseError(f"config line {n}: bad value for {lhs}: {exc}") from None
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
