"""Streaming Transformer encoder with a chunked self-attention mask."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .numerics import InvalidArgument


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    feat_dim: int = 16
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    ffn: int = 128
    subsample: int = 4
    chunk_size: int = 4
    left_chunks: int = 2
    dropout: float = 0.0
    position_jitter: int = 0
    conv_kernel: int = 5

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must lie in [0, 1)")
        if self.d_model % self.heads:
            raise InvalidArgument("d_model must be divisible by heads")
        if self.subsample != 4:
            raise InvalidArgument("the convolutional front-end subsamples by exactly 4")


def build_chunk_mask(T: int, chunk_size: int, left_chunks: int) -> torch.Tensor:
    """Boolean (T, T) matrix; entry [t, s] is True when frame t may attend to s."""
    if chunk_size < 1:
        raise InvalidArgument("chunk_size must be >= 1")
    if T < 1 or left_chunks < 0:
        raise InvalidArgument("need T >= 1 and left_chunks >= 0")
    chunk = torch.arange(T) // chunk_size
    diff = chunk[:, None] - chunk[None, :]
    return (diff >= 0) & (diff <= left_chunks)


def reception_field(layers: int, chunk_size: int, left_chunks: int, t: int,
                    T: int | None = None) -> tuple[int, int]:
    """1-based (left, right) input frames visible to output frame ``t``."""
    if t < 1 or (T is not None and t > T):
        raise InvalidArgument(f"frame index {t} out of range")
    start = ((t - 1) // chunk_size) * chunk_size + 1
    end = start + chunk_size - 1
    if T is not None:
        end = min(end, T)
    return max(1, start - layers * left_chunks * chunk_size), end


def chunk_end(t: int, chunk_size: int, T: int | None = None) -> int:
    end = ((t - 1) // chunk_size + 1) * chunk_size
    return end if T is None else min(end, T)


def sinusoidal_positions(T: int, d: int, dtype=torch.float32, offset=0) -> torch.Tensor:
    """(T, d) table for positions offset..offset+T-1; a (B,) offset gives (B, T, d)."""
    offset = torch.as_tensor(offset, dtype=torch.float64)
    pos = torch.arange(T, dtype=torch.float64) + offset[..., None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos[..., None] / torch.pow(10000.0, i / d)
    pe = torch.zeros(*angle.shape[:-1], d, dtype=torch.float64)
    pe[..., 0::2] = torch.sin(angle)
    pe[..., 1::2] = torch.cos(angle[..., : d // 2])
    return pe.to(dtype)


class CausalSubsampler(nn.Module):
    """Two stride-2 convolutions with left-only padding (total stride 4).

    Output frame j depends on input frames up to 4j + 3 only.  With kernel k
    it sees 3k - 2 raw frames, so a wide kernel can tell how far back the
    last change in the input lies.
    """

    def __init__(self, feat_dim: int, d_model: int, kernel: int = 3):
        super().__init__()
        if kernel < 2:
            raise InvalidArgument("subsampler kernel must be >= 2")
        self.pad = kernel - 2  # left pad that keeps each window ending at 2i + 1
        self.conv1 = nn.Conv1d(feat_dim, d_model, kernel_size=kernel, stride=2)
        self.conv2 = nn.Conv1d(d_model, d_model, kernel_size=kernel, stride=2)

    @staticmethod
    def out_length(T_in: int) -> int:
        return T_in // 4

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T_in, feat_dim)
        if x.shape[1] < 4:
            raise InvalidArgument(f"need at least 4 input frames, got {x.shape[1]}")
        y = x.transpose(1, 2)
        y = F.relu(self.conv1(F.pad(y, (self.pad, 0))))
        y = F.relu(self.conv2(F.pad(y, (self.pad, 0))))
        return y.transpose(1, 2)


class MaskedSelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.drop = nn.Dropout(dropout)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, visible: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        H = self.heads
        q, k, v = self.qkv(x).view(B, T, 3, H, D // H).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // H)
        # masked_fill (not an additive bias) so hidden frames cannot leak through.
        scores = scores.masked_fill(~visible, float("-inf"))
        w = self.drop(torch.softmax(scores, dim=-1))
        ctx = (w @ v).transpose(1, 2).reshape(B, T, D)
        return self.out(ctx)


class EncoderBlock(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MaskedSelfAttention(d_model, heads, dropout)
        self.drop = nn.Dropout(dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, ffn)
        self.ff2 = nn.Linear(ffn, d_model)

    def forward(self, x, visible):
        x = x + self.drop(self.attn(self.norm1(x), visible))
        return x + self.drop(self.ff2(F.relu(self.ff1(self.norm2(x)))))


class StreamingEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.subsample = CausalSubsampler(cfg.feat_dim, cfg.d_model, cfg.conv_kernel)
        self.blocks = nn.ModuleList(EncoderBlock(cfg.d_model, cfg.heads, cfg.ffn, cfg.dropout)
                                    for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.d_model)

    def encode_frames(self, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """Run the Transformer blocks on already-subsampled frames (B, T, d_model)."""
        B, T, _ = x.shape
        visible = build_chunk_mask(T, self.cfg.chunk_size, self.cfg.left_chunks)
        visible = visible.expand(B, 1, T, T)
        if lengths is not None:
            keep = torch.arange(T)[None, :] < lengths[:, None]
            # Padded rows keep their diagonal so no softmax row is empty.
            visible = (visible & keep[:, None, None, :]) | torch.eye(T, dtype=torch.bool)
        offset = 0
        if self.training and self.cfg.position_jitter:
            # Random per-utterance start position: absolute frame parity stops
            # being a usable cue, so token-run lengths must be read relatively.
            offset = torch.randint(0, self.cfg.position_jitter + 1, (B,))
        x = x + sinusoidal_positions(T, self.cfg.d_model, x.dtype, offset)
        for i, block in enumerate(self.blocks):
            x = block(x, visible)
            if not torch.isfinite(x).all():
                raise NumericalFailure(f"non-finite activation after encoder block {i}")
        return self.norm(x)

    def forward(self, feats: torch.Tensor, feat_lengths: torch.Tensor | None = None):
        """feats: (B, T_in, feat_dim) -> (states (B, T, d_model), lengths (B,))."""
        x = self.subsample(feats)
        if feat_lengths is None:
            lengths = torch.full((x.shape[0],), x.shape[1], dtype=torch.long)
        else:
            lengths = feat_lengths // 4
        return self.encode_frames(x, lengths), lengths
