"""Latency (AP, AL, DAL) and quality (BLEU, token accuracy) metrics."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .decoder import ReadWritePath


class UndefinedMetric(ValueError):
    pass


def _require_tokens(path: ReadWritePath):
    if not path.delays:
        raise UndefinedMetric("latency is undefined for an empty hypothesis")
    if path.T < 1:
        raise UndefinedMetric("latency needs T >= 1")


def ap(path: ReadWritePath) -> float:
    """Average proportion of source frames read per written token."""
    _require_tokens(path)
    return sum(path.delays) / (path.T * len(path.delays))


def al(path: ReadWritePath) -> float:
    """Average lagging in frames, summed up to the first token written after full read."""
    _require_tokens(path)
    d, T, U = path.delays, path.T, len(path.delays)
    rate = U / T
    tau = next((u for u, x in enumerate(d, start=1) if x == T), U)
    return sum(d[u - 1] - (u - 1) / rate for u in range(1, tau + 1)) / tau


def dal(path: ReadWritePath) -> float:
    """Differentiable average lagging: each write costs at least 1/rate frames."""
    _require_tokens(path)
    d, T, U = path.delays, path.T, len(path.delays)
    step = T / U
    total = 0.0
    prev = None
    for u, x in enumerate(d, start=1):
        cur = x if prev is None else max(x, prev + step)
        total += cur - (u - 1) * step
        prev = cur
    return total / U


@dataclass
class LatencyReport:
    ap: float
    al_frames: float
    dal_frames: float
    frame_ms: float

    @property
    def al_ms(self) -> float:
        return self.al_frames * self.frame_ms

    @property
    def dal_ms(self) -> float:
        return self.dal_frames * self.frame_ms


def latency_report(paths: Sequence[ReadWritePath]) -> LatencyReport:
    """Corpus means over paths with at least one token."""
    usable = [p for p in paths if p.delays]
    if not usable:
        raise UndefinedMetric("no non-empty hypotheses to measure latency on")
    n = len(usable)
    return LatencyReport(
        ap=sum(ap(p) for p in usable) / n,
        al_frames=sum(al(p) for p in usable) / n,
        dal_frames=sum(dal(p) for p in usable) / n,
        frame_ms=usable[0].frame_ms,
    )


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]],
         max_order: int = 4) -> float:
    """Unsmoothed corpus BLEU on token ids, in [0, 100]."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise UndefinedMetric("BLEU of an empty corpus")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = min(0.0, 1.0 - ref_len / hyp_len)
    return 100.0 * math.exp(bp + log_prec)


def token_accuracy(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    """Position-wise matches over max(len(hyp), len(ref)), pooled over the corpus."""
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    if not hypotheses:
        raise UndefinedMetric("accuracy of an empty corpus")
    hits = total = 0
    for hyp, ref in zip(hypotheses, references):
        hits += sum(a == b for a, b in zip(hyp, ref))
        total += max(len(hyp), len(ref))
    return hits / total if total else 1.0


TABLE_COLUMNS = ("lang", "BLEU", "acc", "AP", "AL(frames)", "AL(ms)", "DAL(frames)", "DAL(ms)")


@dataclass
class EvalRow:
    lang: str
    bleu: float
    acc: float
    latency: LatencyReport | None
    system: str | None = None

    def cells(self) -> list[str]:
        lat = self.latency
        nums = ["-"] * 5 if lat is None else [
            f"{lat.ap:.4f}", f"{lat.al_frames:.2f}", f"{lat.al_ms:.0f}",
            f"{lat.dal_frames:.2f}", f"{lat.dal_ms:.0f}"]
        return [self.lang, f"{self.bleu:.2f}", f"{self.acc:.4f}", *nums]


def evaluate(hyps, refs: Sequence[Sequence[int]], lang: str, system: str | None = None) -> EvalRow:
    toks = [h.tokens for h in hyps]
    paths = [h.path for h in hyps]
    try:
        lat = latency_report(paths)
    except UndefinedMetric:
        lat = None
    return EvalRow(lang, bleu(toks, refs), token_accuracy(toks, refs), lat, system)


def format_table(rows: Sequence[EvalRow]) -> str:
    with_system = any(r.system for r in rows)
    header = (["system"] if with_system else []) + list(TABLE_COLUMNS)
    body = [([r.system or ""] if with_system else []) + r.cells() for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(header), *map(fmt, body)]) + "\n"
