"""Joint networks fusing encoder and predictor states into output logits.

Variants:

* ``LINEAR``   z = W_out f(W_e h_enc + W_p h_pred)
* ``BILINEAR`` adds W_proj (v_enc * v_pred) with v = f(w . h)
* ``ATTN``     v = f(softmax(W h) . h)
* ``QKV_ATTN`` v = f(softmax(W_q h * W_k h) . (W_v h))

The pooled scalars are computed once per encoder frame and once per label
position, so the extra work per lattice cell is a rank-1 outer product.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .numerics import InvalidArgument

VARIANTS = ("LINEAR", "BILINEAR", "ATTN", "QKV_ATTN")

_ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu}


@dataclass(frozen=True)
class JointConfig:
    enc_dim: int = 64
    pred_dim: int = 64
    joint_dim: int = 64
    vocab: int = 40
    variant: str = "LINEAR"
    activation: str = "tanh"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown joint variant {self.variant!r}")
        if self.activation not in _ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")

    @property
    def out_dim(self) -> int:
        return self.vocab + 1


def param_count(variant: str, d_e: int, d_p: int, d_j: int) -> int:
    """Parameters a pooled variant adds on top of the linear joint."""
    if min(d_e, d_p, d_j) <= 0:
        raise InvalidArgument("dimensions must be positive")
    if variant == "LINEAR":
        return 0
    if variant == "BILINEAR":
        return d_e + d_p + d_j
    if variant == "ATTN":
        return d_e * d_e + d_p * d_p + d_j
    if variant == "QKV_ATTN":
        return 3 * d_e * d_e + 3 * d_p * d_p + d_j
    raise InvalidArgument(f"unknown joint variant {variant!r}")


def _attn_pool(h, w, f):
    return f((torch.softmax(h @ w.T, dim=-1) * h).sum(-1))


def _qkv_pool(h, wq, wk, wv, f):
    scores = (h @ wq.T) * (h @ wk.T)
    return f((torch.softmax(scores, dim=-1) * (h @ wv.T)).sum(-1))


class Joint(nn.Module):
    def __init__(self, cfg: JointConfig):
        super().__init__()
        self.cfg = cfg
        self.f = _ACTIVATIONS[cfg.activation]
        d_e, d_p, d_j = cfg.enc_dim, cfg.pred_dim, cfg.joint_dim
        self.enc_proj = nn.Linear(d_e, d_j)
        self.pred_proj = nn.Linear(d_p, d_j, bias=False)
        self.out = nn.Linear(d_j, cfg.out_dim)
        v = cfg.variant
        if v != "LINEAR":
            self.pool_proj = nn.Parameter(torch.zeros(d_j))
        if v == "BILINEAR":
            self.w_enc = nn.Parameter(torch.zeros(d_e))
            self.w_pred = nn.Parameter(torch.zeros(d_p))
        elif v == "ATTN":
            self.att_enc = nn.Parameter(torch.zeros(d_e, d_e))
            self.att_pred = nn.Parameter(torch.zeros(d_p, d_p))
        elif v == "QKV_ATTN":
            for side, d in (("enc", d_e), ("pred", d_p)):
                for k in "qkv":
                    setattr(self, f"{k}_{side}", nn.Parameter(torch.zeros(d, d)))

    def extra_parameters(self) -> int:
        return sum(p.numel() for _, p in self.named_parameters(recurse=False))

    def pooled(self, h_enc: torch.Tensor, h_pred: torch.Tensor):
        """Scalar pooling terms (v_enc over h_enc's batch dims, v_pred likewise)."""
        f, v = self.f, self.cfg.variant
        if v == "BILINEAR":
            return f(h_enc @ self.w_enc), f(h_pred @ self.w_pred)
        if v == "ATTN":
            return _attn_pool(h_enc, self.att_enc, f), _attn_pool(h_pred, self.att_pred, f)
        if v == "QKV_ATTN":
            return (_qkv_pool(h_enc, self.q_enc, self.k_enc, self.v_enc, f),
                    _qkv_pool(h_pred, self.q_pred, self.k_pred, self.v_pred, f))
        raise InvalidArgument("LINEAR joint has no pooling term")

    def _check(self, h_enc, h_pred):
        if h_enc.shape[-1] != self.cfg.enc_dim or h_pred.shape[-1] != self.cfg.pred_dim:
            raise InvalidArgument(
                f"joint expects enc dim {self.cfg.enc_dim} and pred dim {self.cfg.pred_dim}, "
                f"got {h_enc.shape[-1]} and {h_pred.shape[-1]}")

    def forward(self, h_enc: torch.Tensor, h_pred: torch.Tensor) -> torch.Tensor:
        """Logits for one (frame, label-position) pair; leading dims broadcast."""
        self._check(h_enc, h_pred)
        pre = self.enc_proj(h_enc) + self.pred_proj(h_pred)
        if self.cfg.variant != "LINEAR":
            v_enc, v_pred = self.pooled(h_enc, h_pred)
            pre = (v_enc * v_pred)[..., None] * self.pool_proj + pre
        return self.out(self.f(pre))

    def lattice(self, h_enc: torch.Tensor, h_pred: torch.Tensor) -> torch.Tensor:
        """Log-probability lattice (B, T, U+1, V+1) from (B, T, d_e) and (B, U+1, d_p)."""
        self._check(h_enc, h_pred)
        pre = self.enc_proj(h_enc)[:, :, None, :] + self.pred_proj(h_pred)[:, None, :, :]
        if self.cfg.variant != "LINEAR":
            v_enc, v_pred = self.pooled(h_enc, h_pred)
            outer = v_enc[:, :, None] * v_pred[:, None, :]
            pre = outer[..., None] * self.pool_proj + pre
        return torch.log_softmax(self.out(self.f(pre)), dim=-1)
