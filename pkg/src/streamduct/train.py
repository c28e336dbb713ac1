"""Training loop for bilingual and batch-alternating multilingual models."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import Config
from .model_zoo import TransducerModel, assemble, load_encoder_only, save_checkpoint
from .synthdata import ParallelExample, Task
from .transducer_loss import batch_nll

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: str | None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainLog:
    steps: list[tuple[int, str, float]] = field(default_factory=list)
    wall_clock: float = 0.0
    snapshots: list[dict] = field(default_factory=list)

    def losses(self, lang: str | None = None) -> list[float]:
        return [loss for _, l, loss in self.steps if lang is None or l == lang]

    def to_tsv(self) -> str:
        rows = ["step\tlang\tloss"] + [f"{s}\t{l}\t{x:.6f}" for s, l, x in self.steps]
        return "\n".join(rows) + "\n"


def branch_schedule(langs: Sequence[str], ratio: float, steps: int) -> list[str]:
    """Which branch trains at each step.

    With two branches, step i goes to the first one iff
    ceil((i+1) r) > ceil(i r), so after n steps it has had ceil(n r) batches
    (A, B, A, B, ... for r = 0.5).  Three or more branches rotate.
    """
    if len(langs) == 1:
        return [langs[0]] * steps
    if len(langs) > 2:
        return [langs[i % len(langs)] for i in range(steps)]
    out = []
    for i in range(steps):
        a = math.ceil(round((i + 1) * ratio, 9)) > math.ceil(round(i * ratio, 9))
        out.append(langs[0] if a else langs[1])
    return out


class Batcher:
    """Deterministic epoch-shuffled batches with cached rendered features."""

    def __init__(self, task: Task, examples: list[ParallelExample], batch_size: int, seed: int):
        if not examples:
            raise ValueError("empty training set")
        self.examples = examples
        self.feats = [task.features(ex).astype(np.float32) for ex in examples]
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.order: list[int] = []

    def next(self, dtype=torch.float32):
        idx = []
        while len(idx) < self.batch_size:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.examples)))
            idx.append(self.order.pop())
        return collate([self.feats[i] for i in idx], [self.examples[i].target for i in idx], dtype)


def collate(feats: list[np.ndarray], targets: list[Sequence[int]], dtype=torch.float32):
    B = len(feats)
    T_in = max(f.shape[0] for f in feats)
    U = max(max(len(t) for t in targets), 1)
    x = np.zeros((B, T_in, feats[0].shape[1]), dtype=np.float32)
    y = np.zeros((B, U), dtype=np.int64)
    for i, (f, t) in enumerate(zip(feats, targets)):
        x[i, : f.shape[0]] = f
        y[i, : len(t)] = t
    return (torch.from_numpy(x).to(dtype), torch.tensor([f.shape[0] for f in feats]),
            torch.from_numpy(y), torch.tensor([len(t) for t in targets]))


def batch_loss(model: TransducerModel, lang: str, batch) -> torch.Tensor:
    x, x_len, y, y_len = batch
    lattices, enc_len = model.lattices(x, x_len, {lang: y})
    return batch_nll(lattices[lang], y, enc_len, y_len).mean()


def train(cfg: Config, datasets: dict[str, list[ParallelExample]],
          init_encoder: str | os.PathLike | None = None,
          checkpoint_path: str | os.PathLike | None = None,
          log_every: int = 100) -> tuple[TransducerModel, TrainLog]:
    langs = cfg.language_list
    missing = [lang for lang in langs if lang not in datasets]
    if missing:
        raise ValueError(f"no training data for branch(es) {missing}")
    torch.manual_seed(cfg.seed)
    model = assemble(cfg)
    if init_encoder is not None:
        load_encoder_only(init_encoder, model)
    task = Task(cfg.task())
    batchers = {lang: Batcher(task, datasets[lang], cfg.batch_size, cfg.seed * 7919 + i)
                for i, lang in enumerate(langs)}
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    schedule = branch_schedule(langs, cfg.mix_ratio, cfg.steps)
    tlog = TrainLog()
    start = time.perf_counter()
    last_good = {k: v.clone() for k, v in model.state_dict().items()}
    model.train()
    for step, lang in enumerate(schedule):
        if cfg.warmup:
            for g in opt.param_groups:
                g["lr"] = cfg.lr * min(1.0, (step + 1) / cfg.warmup)
        loss = batch_loss(model, lang, batchers[lang].next())
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            saved = None
            if checkpoint_path is not None:
                saved = f"{checkpoint_path}.lastgood"
                save_checkpoint(model, saved)
            raise TrainingDiverged(f"non-finite loss at step {step} ({lang})", saved)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip)
        opt.step()
        tlog.steps.append((step, lang, loss.item()))
        if log_every and step % log_every == 0:
            log.info("step %d %s loss %.4f", step, lang, loss.item())
        last_good = {k: v.clone() for k, v in model.state_dict().items()}
    model.eval()
    tlog.wall_clock = time.perf_counter() - start
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return model, tlog
