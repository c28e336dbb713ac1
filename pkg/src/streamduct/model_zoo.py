"""Model assembly, checkpoint files and 8-bit encoder quantization.

Tensor names follow ``encoder/...``, ``branch/<lang>/predictor/...`` and
``branch/<lang>/joint/...`` so that encoder-only loading is a prefix filter.
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import Config, parse_config
from .encoder import StreamingEncoder
from .joint import Joint
from .numerics import InvalidArgument, make_rng, seeded_init
from .predictor import Predictor

MAGIC = b"STTT"
VERSION = 1
CONFIG_TENSOR = "meta/config"


class CheckpointFormatError(ValueError):
    pass


class CheckpointIntegrityError(ValueError):
    pass


class Branch(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        self.predictor = Predictor(cfg.predictor())
        self.joint = Joint(cfg.joint())


class TransducerModel(nn.Module):
    def __init__(self, cfg: Config, langs: list[str] | None = None):
        super().__init__()
        langs = cfg.language_list if langs is None else langs
        if len(set(langs)) != len(langs):
            raise InvalidArgument(f"duplicate language ids in {langs}")
        if not langs:
            raise InvalidArgument("a model needs at least one branch")
        self.cfg = cfg.replace(languages=",".join(langs))
        self.encoder = StreamingEncoder(cfg.encoder())
        self.branches = nn.ModuleDict({lang: Branch(cfg) for lang in langs})
        self.quantized: dict[str, QuantizedTensor] = {}
        self.eval()  # inference mode unless a training loop says otherwise

    @property
    def languages(self) -> list[str]:
        return list(self.branches.keys())

    @property
    def dtype(self) -> torch.dtype:
        return self.encoder.norm.weight.dtype

    def branch(self, lang: str | None = None) -> Branch:
        if lang is None:
            if len(self.branches) != 1:
                raise InvalidArgument("model has several branches; name a language")
            return next(iter(self.branches.values()))
        if lang not in self.branches:
            raise InvalidArgument(f"no branch for language {lang!r}; have {self.languages}")
        return self.branches[lang]

    def encode(self, features) -> torch.Tensor:
        """Encoder states (T, d_e) for a single utterance (T_in, d_x)."""
        x = torch.as_tensor(np.asarray(features), dtype=self.dtype)[None]
        return self.encoder(x)[0][0]

    def lattices(self, feats, feat_lens, targets: dict[str, torch.Tensor]):
        """Encode once, then one log-prob lattice per requested branch."""
        h_enc, enc_lens = self.encoder(feats, feat_lens)
        out = {}
        for lang, tgt in targets.items():
            br = self.branch(lang)
            out[lang] = br.joint.lattice(h_enc, br.predictor.unroll(tgt))
        return out, enc_lens

    def named_tensors(self) -> dict[str, torch.Tensor]:
        return {key_to_name(k): v for k, v in self.state_dict().items()}

    def load_named(self, tensors: dict[str, torch.Tensor]) -> None:
        self.load_state_dict({name_to_key(k): v for k, v in tensors.items()}, strict=True)


def key_to_name(key: str) -> str:
    parts = key.split(".")
    if parts[0] == "branches":
        parts[0] = "branch"
    return "/".join(parts)


def name_to_key(name: str) -> str:
    parts = name.split("/")
    if parts[0] == "branch":
        parts[0] = "branches"
    return ".".join(parts)


def _init_scheme(name: str) -> str:
    leaf = name.rsplit("/", 1)[-1]
    if leaf.startswith("bias"):
        return "zeros"
    if "norm" in name:
        return "ones"
    return "uniform-scaled"


def initialize(model: TransducerModel, seed: int) -> TransducerModel:
    """Seeded init; each tensor's draw depends only on (seed, tensor name)."""
    with torch.no_grad():
        for key, p in model.named_parameters():
            name = key_to_name(key)
            scheme = _init_scheme(name)
            if scheme == "ones":
                p.fill_(1.0)
                continue
            rng = make_rng((seed * 1_000_003 + zlib.crc32(name.encode())) % 2**64)
            p.copy_(seeded_init(p.shape, scheme, rng, p.dtype))
    return model


def assemble(cfg: Config, langs: list[str] | None = None, seed: int | None = None) -> TransducerModel:
    model = TransducerModel(cfg, langs)
    return initialize(model, cfg.seed if seed is None else seed)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# --------------------------------------------------------------------------
# quantization

@dataclass
class QuantizedTensor:
    codes: np.ndarray  # uint8, original shape
    scale: float
    minimum: float

    @property
    def zero_point(self) -> int:
        return 0 if self.scale == 0 else int(round(-self.minimum / self.scale))

    def dequantize(self) -> np.ndarray:
        return self.scale * self.codes.astype(np.float64) + self.minimum


def quantize_tensor(x) -> QuantizedTensor:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return QuantizedTensor(np.zeros(x.shape, dtype=np.uint8), 0.0, lo)
    scale = (hi - lo) / 255.0
    codes = np.clip(np.rint((x - lo) / scale), 0, 255).astype(np.uint8)
    return QuantizedTensor(codes, scale, lo)


def quantize_encoder(model: TransducerModel) -> tuple[TransducerModel, dict[str, dict]]:
    """Per-tensor affine uint8 quantization of every encoder tensor.

    Returns a new model whose encoder holds the dequantized values, and a
    report of {name: {scale, zero_point, max_error, bound_ok}}.
    """
    out = TransducerModel(model.cfg, model.languages)
    out.load_state_dict(model.state_dict())
    out.quantized = dict(model.quantized)
    report = {}
    tensors = out.named_tensors()
    with torch.no_grad():
        for name, t in tensors.items():
            if not name.startswith("encoder/"):
                continue
            orig = t.detach().double().numpy()
            q = quantize_tensor(orig)
            rec = q.dequantize()
            err = np.abs(rec - orig)
            report[name] = {
                "scale": q.scale,
                "zero_point": q.zero_point,
                "max_error": float(err.max()),
                "bound_ok": bool(np.all(err <= q.scale / 2 + 1e-12 * max(1.0, abs(q.minimum)))),
            }
            t.copy_(torch.from_numpy(rec).to(t.dtype))
            out.quantized[name] = q
    return out, report


# --------------------------------------------------------------------------
# checkpoint files

def _tensor_bytes(name: str, t: torch.Tensor, quantized: dict[str, QuantizedTensor]) -> tuple[str, bytes]:
    if name in quantized:
        q = quantized[name]
        return "u8", q.codes.tobytes() + struct.pack("<dd", q.scale, q.minimum)
    return "f32", t.detach().to(torch.float32).numpy().astype("<f4").tobytes()


def checkpoint_bytes(model: TransducerModel) -> bytes:
    entries: list[tuple[str, str, tuple[int, ...], bytes]] = []
    cfg_bytes = np.frombuffer(model.cfg.dumps().encode("utf-8"), dtype=np.uint8)
    entries.append((CONFIG_TENSOR, "u8", cfg_bytes.shape, cfg_bytes.tobytes() + struct.pack("<dd", 1.0, 0.0)))
    for name, t in model.named_tensors().items():
        dtype, raw = _tensor_bytes(name, t, model.quantized)
        entries.append((name, dtype, tuple(t.shape), raw))
    manifest = io.StringIO()
    blob = io.BytesIO()
    for name, dtype, shape, raw in entries:
        shape_s = ",".join(map(str, shape)) if shape else "-"
        manifest.write(f"{name} {dtype} {shape_s} {blob.tell()}\n")
        blob.write(raw)
    man = manifest.getvalue().encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(man)) + man + blob.getvalue()


def save_checkpoint(model: TransducerModel, path: str | os.PathLike) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


@dataclass
class RawEntry:
    name: str
    dtype: str
    shape: tuple[int, ...]
    values: np.ndarray  # float64 values (dequantized for u8)
    quantized: QuantizedTensor | None


def read_checkpoint(path: str | os.PathLike) -> dict[str, RawEntry]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    version, man_len = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    if 16 + man_len > len(data):
        raise CheckpointIntegrityError(f"{path}: manifest runs past end of file")
    try:
        manifest = data[16:16 + man_len].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointFormatError(f"{path}: manifest is not UTF-8") from None
    blob = data[16 + man_len:]
    entries: dict[str, RawEntry] = {}
    for line in manifest.splitlines():
        try:
            name, dtype, shape_s, offset_s = line.split(" ")
            shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split(","))
            offset = int(offset_s)
        except ValueError:
            raise CheckpointFormatError(f"{path}: malformed manifest line {line!r}") from None
        if name in entries:
            raise CheckpointFormatError(f"{path}: duplicate tensor {name}")
        n = int(np.prod(shape)) if shape else 1
        if dtype == "f32":
            size = 4 * n
        elif dtype == "u8":
            size = n + 16
        else:
            raise CheckpointFormatError(f"{path}: unknown dtype {dtype!r} for {name}")
        if offset < 0 or offset + size > len(blob):
            raise CheckpointIntegrityError(f"{path}: tensor {name} extends past end of data")
        raw = blob[offset:offset + size]
        if dtype == "f32":
            vals = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
            entries[name] = RawEntry(name, dtype, shape, vals, None)
        else:
            codes = np.frombuffer(raw[:n], dtype=np.uint8).reshape(shape).copy()
            scale, minimum = struct.unpack("<dd", raw[n:])
            q = QuantizedTensor(codes, scale, minimum)
            entries[name] = RawEntry(name, dtype, shape, q.dequantize(), q)
    if CONFIG_TENSOR not in entries:
        raise CheckpointFormatError(f"{path}: missing {CONFIG_TENSOR}")
    return entries


def load_checkpoint(path: str | os.PathLike) -> TransducerModel:
    entries = read_checkpoint(path)
    cfg_text = entries.pop(CONFIG_TENSOR).quantized.codes.tobytes().decode("utf-8")
    cfg = parse_config(cfg_text)
    model = TransducerModel(cfg)
    expected = model.named_tensors()
    if set(expected) != set(entries):
        missing = sorted(set(expected) - set(entries))
        extra = sorted(set(entries) - set(expected))
        raise CheckpointFormatError(f"{path}: tensor set mismatch; missing {missing}, unexpected {extra}")
    tensors = {}
    for name, e in entries.items():
        tensors[name] = torch.from_numpy(e.values).to(expected[name].dtype)
        if e.quantized is not None:
            model.quantized[name] = e.quantized
    model.load_named(tensors)
    return model


def load_encoder_only(path: str | os.PathLike, model: TransducerModel) -> TransducerModel:
    """Overwrite the encoder namespace of ``model`` in place from a checkpoint."""
    entries = read_checkpoint(path)
    donor = {k: e for k, e in entries.items() if k.startswith("encoder/")}
    own = {k: t for k, t in model.named_tensors().items() if k.startswith("encoder/")}
    problems = []
    for name, t in own.items():
        if name not in donor:
            problems.append(f"{name}: missing from checkpoint")
        elif tuple(donor[name].shape) != tuple(t.shape):
            problems.append(f"{name}: checkpoint shape {donor[name].shape} != model shape {tuple(t.shape)}")
    problems += [f"{name}: not present in model" for name in sorted(set(donor) - set(own))]
    if problems:
        raise InvalidArgument("encoder-only load failed:\n  " + "\n  ".join(problems))
    with torch.no_grad():
        for name, t in own.items():
            t.copy_(torch.from_numpy(donor[name].values).to(t.dtype))
    model.quantized = {k: v for k, v in model.quantized.items() if not k.startswith("encoder/")}
    for name, e in donor.items():
        if e.quantized is not None:
            model.quantized[name] = e.quantized
    return model
