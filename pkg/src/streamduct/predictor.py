"""Prediction network: token embedding followed by stacked LSTM cells."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .numerics import InvalidArgument


@dataclass(frozen=True)
class PredictorConfig:
    vocab: int = 40
    width: int = 64
    layers: int = 1


# (h, c) per layer, each of shape (..., width)
PredictorState = tuple[tuple[torch.Tensor, torch.Tensor], ...]


class Predictor(nn.Module):
    """Embedding rows 0..vocab-1 are tokens; row ``vocab`` is START."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        self.start = cfg.vocab
        self.embed = nn.Embedding(cfg.vocab + 1, cfg.width)
        self.cells = nn.ModuleList(nn.LSTMCell(cfg.width, cfg.width) for _ in range(cfg.layers))

    def init_state(self, batch: tuple[int, ...] = ()) -> PredictorState:
        w = self.embed.weight
        z = torch.zeros(*batch, self.cfg.width, dtype=w.dtype)
        return tuple((z, z) for _ in range(self.cfg.layers))

    def _cell(self, cell: nn.LSTMCell, x, h, c):
        # Written out rather than calling LSTMCell.forward so that batched and
        # single-step evaluation go through identical arithmetic.
        gates = x @ cell.weight_ih.T + cell.bias_ih + h @ cell.weight_hh.T + cell.bias_hh
        i, f, g, o = gates.chunk(4, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, c

    def step(self, tokens, state: PredictorState) -> tuple[torch.Tensor, PredictorState]:
        """Advance by one non-blank token (or START); returns (h_pred, new_state)."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if ((tokens < 0) | (tokens > self.start)).any():
            raise InvalidArgument(f"token id out of range [0, {self.start}]")
        x = self.embed(tokens)
        new = []
        for cell, (h, c) in zip(self.cells, state):
            h, c = self._cell(cell, x, h, c)
            new.append((h, c))
            x = h
        return x, tuple(new)

    def unroll(self, targets: torch.Tensor) -> torch.Tensor:
        """Teacher-forced outputs for histories START, y1, ..., yU.

        targets: (B, U) token ids -> (B, U+1, width).
        """
        B, U = targets.shape
        state = self.init_state((B,))
        starts = torch.full((B,), self.start, dtype=torch.long)
        outs = []
        h, state = self.step(starts, state)
        outs.append(h)
        for u in range(U):
            h, state = self.step(targets[:, u], state)
            outs.append(h)
        return torch.stack(outs, dim=1)

    forward = unroll
