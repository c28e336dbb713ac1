"""Synthetic speech-translation task.

Source token sequences are rendered to noisy frame features; targets come
from a fixed bijection (MONO), a window-reversing reorder followed by a
second bijection (REORDER), or the identity (COPY, an ASR-style branch).
Everything is a pure function of integer seeds so datasets store only seeds
and token ids.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DATASET_HEADER = "#streamduct-dataset v1"
LANGUAGES = ("MONO", "REORDER", "COPY")
REORDER_WINDOW = 3


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True)
class TaskConfig:
    task_seed: int = 1234
    src_vocab: int = 40
    tgt_vocab: int = 40
    min_len: int = 5
    max_len: int = 20
    feat_dim: int = 16
    frames_per_token: int = 8
    noise: float = 0.1
    frame_ms: float = 10.0


@dataclass(frozen=True)
class ParallelExample:
    seed: int
    lang: str
    source: tuple[int, ...]
    target: tuple[int, ...]


class Task:
    """Frozen task tables derived from ``TaskConfig.task_seed``."""

    def __init__(self, cfg: TaskConfig = TaskConfig()):
        if cfg.tgt_vocab != cfg.src_vocab:
            raise ValueError("bijective target mapping needs tgt_vocab == src_vocab")
        self.cfg = cfg
        rng = np.random.default_rng([cfg.task_seed, 0])
        self.render_matrix = rng.standard_normal((cfg.src_vocab, cfg.feat_dim))
        self.maps = {
            "MONO": rng.permutation(cfg.tgt_vocab),
            "REORDER": rng.permutation(cfg.tgt_vocab),
            "COPY": np.arange(cfg.tgt_vocab),
        }

    def target_for(self, source: Sequence[int], lang: str) -> tuple[int, ...]:
        return translate(source, lang, self.maps[lang])

    def gen_pair(self, seed: int, lang: str) -> ParallelExample:
        if lang not in LANGUAGES:
            raise ValueError(f"unknown language {lang!r}")
        cfg = self.cfg
        rng = np.random.default_rng([seed, 0])
        n = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        source = tuple(int(s) for s in rng.integers(0, cfg.src_vocab, size=n))
        return ParallelExample(seed, lang, source, self.target_for(source, lang))

    def render_features(self, source: Sequence[int], seed: int,
                        noise: float | None = None) -> np.ndarray:
        """Frames for ``source``: each token's render row repeated, plus noise."""
        sigma = self.cfg.noise if noise is None else noise
        reps = self.cfg.frames_per_token
        clean = np.repeat(self.render_matrix[np.asarray(source, dtype=np.int64)], reps, axis=0)
        if sigma == 0:
            return clean
        rng = np.random.default_rng([seed, 1])
        return clean + sigma * rng.standard_normal(clean.shape)

    def features(self, ex: ParallelExample) -> np.ndarray:
        return self.render_features(ex.source, ex.seed)


def translate(source: Sequence[int], lang: str, mapping: Sequence[int]) -> tuple[int, ...]:
    if lang == "REORDER":
        source = reorder_windows(source)
    return tuple(int(mapping[s]) for s in source)


def reorder_windows(seq: Sequence[int], window: int = REORDER_WINDOW) -> list[int]:
    out: list[int] = []
    for i in range(0, len(seq), window):
        out.extend(reversed(seq[i:i + window]))
    return out


def example_seeds(data_seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(data_seed)
    return [int(s) for s in ss.generate_state(count, dtype=np.uint64)] if count else []


def generate(task: Task, lang: str, count: int, data_seed: int) -> list[ParallelExample]:
    return [task.gen_pair(s, lang) for s in example_seeds(data_seed, count)]


def _ids(xs: Iterable[int]) -> str:
    return " ".join(str(x) for x in xs)


def write_dataset(examples: Iterable[ParallelExample], path: str | os.PathLike) -> None:
    lines = [DATASET_HEADER]
    for ex in examples:
        lines.append(f"{ex.seed}\t{ex.lang}\t{_ids(ex.source)}\t{_ids(ex.target)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_ids(field: str, lineno: int) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in field.split())
    except ValueError:
        raise DatasetParseError(f"line {lineno}: non-integer token id in {field!r}") from None


def read_dataset(path: str | os.PathLike) -> list[ParallelExample]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != DATASET_HEADER:
        raise DatasetParseError(f"line 1: expected header {DATASET_HEADER!r}")
    examples = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 4:
            raise DatasetParseError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        seed_s, lang, src, tgt = parts
        try:
            seed = int(seed_s)
        except ValueError:
            raise DatasetParseError(f"line {lineno}: bad seed {seed_s!r}") from None
        if lang not in LANGUAGES:
            raise DatasetParseError(f"line {lineno}: unknown language {lang!r}")
        examples.append(ParallelExample(seed, lang, _parse_ids(src, lineno), _parse_ids(tgt, lineno)))
    return examples
