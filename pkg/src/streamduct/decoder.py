"""Greedy streaming decoding and fixed wait-k reference paths."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import torch

WAIT_INF = math.inf


@dataclass
class ReadWritePath:
    """d[u-1] = encoder frames consumed when output token u was written."""

    delays: list[int]
    T: int
    frame_ms: float = 40.0

    def __post_init__(self):
        if any(b < a for a, b in zip(self.delays, self.delays[1:])):
            raise ValueError("delays must be nondecreasing")
        if any(not 1 <= d <= self.T for d in self.delays):
            raise ValueError(f"delays must lie in [1, {self.T}]")


@dataclass
class Hypothesis:
    tokens: list[int]
    path: ReadWritePath
    truncated: bool = False


@dataclass(frozen=True)
class DecodeLimits:
    max_symbols_per_frame: int = 10
    max_output_len: int | None = None  # default: 2 * T (four per source token)


def wait_k_path(k: float, T: int, U: int, frame_ms: float = 40.0) -> ReadWritePath:
    if k < 1 or T < 1 or U < 1:
        raise ValueError("wait_k_path needs k, T, U >= 1")
    if k == WAIT_INF:
        return ReadWritePath([T] * U, T, frame_ms)
    return ReadWritePath([min(int(k) + u - 1, T) for u in range(1, U + 1)], T, frame_ms)


@torch.no_grad()
def greedy_stream_decode(model, features, lang: str | None = None,
                         limits: DecodeLimits = DecodeLimits(), frame_ms: float = 40.0) -> Hypothesis:
    """Frame-synchronous greedy search over the transducer lattice.

    ``model`` must provide ``encode(features) -> (T, d_e)`` and
    ``branch(lang)`` returning an object with ``predictor`` (``init_state``,
    ``step``, ``start``) and ``joint`` (callable on one frame and one
    predictor output).  Ties at the argmax go to blank.
    """
    h_enc = model.encode(features)
    branch = model.branch(lang)
    pred, joint = branch.predictor, branch.joint
    T = int(h_enc.shape[0])
    max_len = limits.max_output_len if limits.max_output_len is not None else 2 * T

    state = pred.init_state()
    h_pred, state = pred.step(pred.start, state)
    tokens: list[int] = []
    delays: list[int] = []
    truncated = False
    t = 0
    emitted_here = 0
    while t < T:
        logits = joint(h_enc[t], h_pred)
        blank = logits.shape[-1] - 1
        best = int(torch.argmax(logits[:-1]))
        if logits[best] > logits[blank] and emitted_here < limits.max_symbols_per_frame:
            if len(tokens) >= max_len:
                truncated = True
                break
            tokens.append(best)
            delays.append(t + 1)
            emitted_here += 1
            h_pred, state = pred.step(best, state)
        else:
            if logits[best] > logits[blank]:
                truncated = True
            t += 1
            emitted_here = 0
    return Hypothesis(tokens, ReadWritePath(delays, T, frame_ms), truncated)


def write_hypotheses(hyps: Iterable[Hypothesis], path: str | os.PathLike) -> None:
    lines = []
    for h in hyps:
        toks = " ".join(map(str, h.tokens))
        ds = " ".join(map(str, h.path.delays))
        lines.append(f"{toks}\t{ds}\t{h.path.T}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_hypotheses(path: str | os.PathLike, frame_ms: float = 40.0) -> list[Hypothesis]:
    hyps = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 tab-separated fields")
        try:
            toks = [int(x) for x in parts[0].split()]
            ds = [int(x) for x in parts[1].split()]
            T = int(parts[2])
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer field") from None
        if len(toks) != len(ds):
            raise ValueError(f"line {lineno}: {len(toks)} tokens but {len(ds)} delays")
        hyps.append(Hypothesis(toks, ReadWritePath(ds, T, frame_ms)))
    return hyps


def streaming_prefix_frames(delay: int, chunk_size: int, T: int) -> int:
    """Raw input frames needed to reproduce a decision taken at encoder frame ``delay``."""
    end = min(((delay - 1) // chunk_size + 1) * chunk_size, T)
    return 4 * end

