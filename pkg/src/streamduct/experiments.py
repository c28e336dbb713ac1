"""Desk-scale experiment runs shared by the CLI and the acceptance suite."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from .config import Config
from .decoder import Hypothesis, greedy_stream_decode
from .metrics import EvalRow, evaluate
from .model_zoo import TransducerModel, checkpoint_bytes
from .synthdata import ParallelExample, Task, generate
from .train import TrainLog, train

TRAIN_COUNT = 2000
HELD_OUT_COUNT = 200
HELD_OUT_SEED = 99

# Batches per branch for the desk runs.  A multilingual model gets this many
# per branch, so its total step count is DESK_STEPS * branches.
DESK_STEPS = 3500


def desk_config(languages: str = "MONO", **overrides) -> Config:
    n = len([s for s in languages.split(",") if s.strip()])
    return Config(languages=languages, steps=DESK_STEPS * n, **overrides)


def training_set(task: Task, lang: str, cfg: Config, count: int = TRAIN_COUNT) -> list[ParallelExample]:
    return generate(task, lang, count, cfg.data_seed)


def held_out(task: Task, lang: str, count: int = HELD_OUT_COUNT, seed: int = HELD_OUT_SEED):
    return generate(task, lang, count, seed)


def decode_examples(model: TransducerModel, task: Task, examples: list[ParallelExample],
                    lang: str) -> list[Hypothesis]:
    fms = model.cfg.encoder_frame_ms
    return [greedy_stream_decode(model, task.features(ex), lang, frame_ms=fms) for ex in examples]


def score(model: TransducerModel, task: Task, examples: list[ParallelExample], lang: str,
          system: str | None = None) -> tuple[EvalRow, list[Hypothesis]]:
    hyps = decode_examples(model, task, examples, lang)
    return evaluate(hyps, [ex.target for ex in examples], lang, system), hyps


@dataclass
class RunResult:
    cfg: Config
    model: TransducerModel
    log: TrainLog
    rows: dict[str, EvalRow] = field(default_factory=dict)
    hyps: dict[str, list[Hypothesis]] = field(default_factory=dict)

    @property
    def checkpoint(self) -> bytes:
        return checkpoint_bytes(self.model)


def run(cfg: Config, train_count: int = TRAIN_COUNT, held_out_count: int = HELD_OUT_COUNT,
        init_encoder: str | os.PathLike | None = None, system: str | None = None) -> RunResult:
    """Generate data, train, then decode and score the held-out set of every branch."""
    task = Task(cfg.task())
    data = {lang: training_set(task, lang, cfg, train_count) for lang in cfg.language_list}
    model, tlog = train(cfg, data, init_encoder=init_encoder, log_every=0)
    res = RunResult(cfg, model, tlog)
    for lang in cfg.language_list:
        res.rows[lang], res.hyps[lang] = score(model, task, held_out(task, lang, held_out_count), lang, system)
    return res
