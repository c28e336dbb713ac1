"""Flat ``key = value`` configuration shared by data generation, models and training."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .encoder import EncoderConfig
from .joint import JointConfig, VARIANTS
from .predictor import PredictorConfig
from .synthdata import LANGUAGES, TaskConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # task
    task_seed: int = 1234
    src_vocab: int = 40
    tgt_vocab: int = 40
    min_len: int = 5
    max_len: int = 20
    feat_dim: int = 16
    frames_per_token: int = 8
    noise: float = 0.1
    frame_ms: float = 10.0
    data_seed: int = 1
    # encoder
    enc_dim: int = 64
    enc_layers: int = 2
    heads: int = 4
    ffn: int = 128
    chunk_size: int = 4
    left_chunks: int = 2
    dropout: float = 0.0
    position_jitter: int = 0
    conv_kernel: int = 5
    # prediction + joint networks
    pred_dim: int = 64
    pred_layers: int = 1
    joint_dim: int = 64
    joint_variant: str = "LINEAR"
    activation: str = "tanh"
    languages: str = "MONO"
    # optimization
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    clip: float = 5.0
    warmup: int = 0
    batch_size: int = 16
    steps: int = 3500
    seed: int = 0
    mix_ratio: float = 0.5

    def __post_init__(self):
        if self.joint_variant not in VARIANTS:
            raise ConfigError(f"joint_variant must be one of {VARIANTS}")
        langs = self.language_list
        if not langs or any(lang not in LANGUAGES for lang in langs):
            raise ConfigError(f"languages must be a comma list drawn from {LANGUAGES}")
        if len(set(langs)) != len(langs):
            raise ConfigError("duplicate language in languages")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise ConfigError("mix_ratio must lie in [0, 1]")

    @property
    def language_list(self) -> list[str]:
        return [s.strip() for s in self.languages.split(",") if s.strip()]

    @property
    def subsample(self) -> int:
        return 4

    @property
    def encoder_frame_ms(self) -> float:
        return self.frame_ms * self.subsample

    def task(self) -> TaskConfig:
        return TaskConfig(self.task_seed, self.src_vocab, self.tgt_vocab, self.min_len,
                          self.max_len, self.feat_dim, self.frames_per_token, self.noise, self.frame_ms)

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.feat_dim, self.enc_dim, self.enc_layers, self.heads, self.ffn,
                             4, self.chunk_size, self.left_chunks,
                             self.dropout, self.position_jitter, self.conv_kernel)

    def predictor(self) -> PredictorConfig:
        return PredictorConfig(self.tgt_vocab, self.pred_dim, self.pred_layers)

    def joint(self) -> JointConfig:
        return JointConfig(self.enc_dim, self.pred_dim, self.joint_dim, self.tgt_vocab,
                           self.joint_variant, self.activation)

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def parse_config(text: str, base: Config = Config()) -> Config:
    types = {f.name: f.type for f in fields(Config)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            values[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad {kind} value {value!r} for {key}") from None
    try:
        return dataclasses.replace(base, **values)
    except ConfigError as e:
        raise ConfigError(str(e)) from None


def load_config(path: str | os.PathLike | None) -> Config:
    if path is None:
        return Config()
    return parse_config(Path(path).read_text(encoding="utf-8"))
