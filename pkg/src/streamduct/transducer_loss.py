"""Transducer negative log-likelihood over the T x (U+1) alignment lattice.

Lattice conventions: ``logp[t, u, k]`` (0-based t) is the log-probability of
symbol k after consuming frames 0..t and emitting u labels.  The blank
symbol is the last index, ``logp.shape[-1] - 1``.  A path starts at (0, 0),
moves right in u by emitting label y_{u+1} and down in t by emitting blank,
and ends with the blank emitted at (T-1, U).
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import torch

from .numerics import InvalidArgument

MAX_BRUTE_FORCE = 14


def _check(logp_shape, labels, T, U):
    if U >= 1 and T == 0:
        raise InvalidArgument("cannot align labels to an empty frame sequence")
    blank = logp_shape[-1] - 1
    if any(int(y) == blank for y in labels):
        raise InvalidArgument("labels must not contain the blank symbol")
    if any(int(y) < 0 or int(y) > blank for y in labels):
        raise InvalidArgument("label id out of range")


def split_lattice(logp: torch.Tensor, labels: torch.Tensor):
    """(blank_logp (..., T, U+1), label_logp (..., T, U)) from a full lattice.

    ``labels`` is (..., U); padded label slots may hold any valid id.
    """
    blank = logp[..., -1]
    idx = labels[..., None, :, None].expand(*logp.shape[:-2], labels.shape[-1], 1)
    label = logp[..., :-1, :].gather(-1, idx).squeeze(-1)
    return blank, label


def forward_variables(blank: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """alpha (B, T, U+1) by a row-wise scan.

    Within a row, alpha(t, u) = C(u) + logcumsumexp_{u'<=u}(a(u') - C(u'))
    with a(u') the arrival from the row above and C the cumulative label
    log-probability, which turns the u-recursion into one vectorized op.
    """
    B, T, U1 = blank.shape
    neg_inf = torch.full((B, 1), float("-inf"), dtype=blank.dtype)
    zeros = torch.zeros((B, 1), dtype=blank.dtype)
    rows = []
    arrive = torch.cat([zeros, neg_inf.expand(B, U1 - 1)], dim=1)
    for t in range(T):
        cum = torch.cat([zeros, label[:, t].cumsum(dim=1)], dim=1)
        row = cum + torch.logcumsumexp(arrive - cum, dim=1)
        rows.append(row)
        arrive = row + blank[:, t]
    return torch.stack(rows, dim=1)


def batch_nll(logp: torch.Tensor, labels: torch.Tensor, frame_lengths: torch.Tensor,
              label_lengths: torch.Tensor) -> torch.Tensor:
    """Per-utterance NLL for a padded batch; differentiable through autograd.

    logp (B, T, U+1, V+1), labels (B, U) padded with any non-blank id.
    """
    blank, label = split_lattice(logp, labels)
    alpha = forward_variables(blank, label)
    b = torch.arange(logp.shape[0])
    t_last = frame_lengths - 1
    return -(alpha[b, t_last, label_lengths] + blank[b, t_last, label_lengths])


def transducer_nll(logp: torch.Tensor, labels) -> torch.Tensor:
    """NLL of one utterance; logp is (T, U+1, V+1)."""
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    T, U1 = logp.shape[0], logp.shape[1]
    U = labels.numel()
    _check(logp.shape, labels.tolist(), T, U)
    if U1 != U + 1:
        raise InvalidArgument(f"lattice has {U1} label positions, expected {U + 1}")
    return batch_nll(logp[None], labels[None], torch.tensor([T]), torch.tensor([U]))[0]


def nll_gradients(logp, labels) -> np.ndarray:
    """Gradient of the NLL w.r.t. every lattice entry, from alpha/beta variables.

    Computed in numpy float64 independently of autograd.
    """
    lp = np.asarray(logp.detach() if isinstance(logp, torch.Tensor) else logp, dtype=np.float64)
    labels = [int(y) for y in np.asarray(labels).reshape(-1)]
    T, U1, _ = lp.shape
    U = len(labels)
    _check(lp.shape, labels, T, U)
    blank = lp[:, :, -1]
    label = np.array([[lp[t, u, labels[u]] for u in range(U)] for t in range(T)]).reshape(T, U)

    alpha = np.full((T, U1), -np.inf)
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                alpha[t, u] = 0.0
                continue
            a = alpha[t - 1, u] + blank[t - 1, u] if t > 0 else -np.inf
            b = alpha[t, u - 1] + label[t, u - 1] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(a, b)
    beta = np.full((T, U1), -np.inf)
    for t in reversed(range(T)):
        for u in reversed(range(U1)):
            if t == T - 1 and u == U:
                beta[t, u] = blank[t, u]
                continue
            a = beta[t + 1, u] + blank[t, u] if t < T - 1 else -np.inf
            b = beta[t, u + 1] + label[t, u] if u < U else -np.inf
            beta[t, u] = np.logaddexp(a, b)
    log_z = beta[0, 0]

    grad = np.zeros_like(lp)
    # d(-log Z)/d blank(t,u) = -P(path uses blank at (t,u))
    for t in range(T):
        for u in range(U1):
            if t < T - 1:
                grad[t, u, -1] = -math.exp(alpha[t, u] + blank[t, u] + beta[t + 1, u] - log_z)
            elif u == U:
                grad[t, u, -1] = -math.exp(alpha[t, u] + blank[t, u] - log_z)
            if u < U:
                grad[t, u, labels[u]] = -math.exp(alpha[t, u] + label[t, u] + beta[t, u + 1] - log_z)
    return grad


def count_paths(T: int, U: int) -> int:
    return math.comb(T - 1 + U, U)


def enumerate_paths(T: int, U: int):
    """Yield each monotonic path as a list of moves ('b' = blank, 'y' = label)."""
    for label_slots in itertools.combinations(range(T - 1 + U), U):
        slots = set(label_slots)
        yield ["y" if i in slots else "b" for i in range(T - 1 + U)] + ["b"]


def brute_force_nll(logp, labels) -> float:
    """NLL by explicit enumeration of all C(T-1+U, U) alignments (test oracle)."""
    lp = np.asarray(logp.detach() if isinstance(logp, torch.Tensor) else logp, dtype=np.float64)
    labels = [int(y) for y in np.asarray(labels).reshape(-1)]
    T, U = lp.shape[0], len(labels)
    if T + U > MAX_BRUTE_FORCE:
        raise InvalidArgument(f"instance too large for enumeration (T + U = {T + U} > {MAX_BRUTE_FORCE})")
    _check(lp.shape, labels, T, U)
    scores = []
    for moves in enumerate_paths(T, U):
        t = u = 0
        s = 0.0
        for m in moves:
            if m == "y":
                s += lp[t, u, labels[u]]
                u += 1
            else:
                s += lp[t, u, -1]
                t += 1
        scores.append(s)
    m = max(scores)
    return -(m + math.log(math.fsum(math.exp(s - m) for s in scores)))
