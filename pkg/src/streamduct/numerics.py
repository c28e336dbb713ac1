"""Dense-tensor numerics shared by every model component.

Tensors, reverse-mode gradients and the elementary differentiable ops come
from torch; this module pins down the pieces the rest of the package relies
on: a checked softmax, seeded initialization and a central-difference
gradient checker that is independent of autograd.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

# Tests and oracles run in float64; training may use float32.
ORACLE_DTYPE = torch.float64

# torch.Generator on CPU is a Mersenne Twister (mt19937) seeded by manual_seed.
RNG_ALGORITHM = "torch-cpu-mt19937"


class InvalidArgument(ValueError):
    pass


def make_rng(seed: int) -> torch.Generator:
    """Return a torch generator seeded with ``seed`` (64-bit unsigned)."""
    if not 0 <= seed < 2**64:
        raise InvalidArgument(f"seed must be a 64-bit unsigned int, got {seed}")
    gen = torch.Generator(device="cpu")
    # manual_seed takes a signed 64-bit value.
    gen.manual_seed(seed if seed < 2**63 else seed - 2**64)
    return gen


def softmax(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if v.numel() == 0:
        raise InvalidArgument("softmax of an empty vector")
    if not torch.isfinite(v).all():
        raise InvalidArgument("softmax input contains non-finite values")
    shifted = v - v.amax(dim=dim, keepdim=True)
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if not torch.isfinite(v).all():
        raise InvalidArgument("log_softmax input contains non-finite values")
    return torch.log_softmax(v, dim=dim)


def seeded_init(shape: Sequence[int], scheme: str, rng: torch.Generator,
                dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Initialize a weight tensor.

    ``uniform-scaled`` draws from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    where fan_in is the last extent and fan_out the first (the layout of a
    ``torch.nn.Linear`` weight).  ``zeros`` returns an all-zero tensor.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise InvalidArgument(f"all extents must be positive, got {shape}")
    if scheme == "zeros":
        return torch.zeros(shape, dtype=dtype)
    if scheme != "uniform-scaled":
        raise InvalidArgument(f"unknown init scheme {scheme!r}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_out, fan_in = shape[0], math.prod(shape[1:])
    a = math.sqrt(6.0 / (fan_in + fan_out))
    u = torch.rand(shape, generator=rng, dtype=torch.float64)
    return ((2.0 * u - 1.0) * a).to(dtype)


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    ok: bool = True
    message: str = ""

    def passed(self, tol: float) -> bool:
        return self.ok and self.max_rel_error <= tol


def grad_check(f: Callable[..., torch.Tensor], point: Sequence[torch.Tensor] | dict[str, torch.Tensor],
               eps: float = 1e-6) -> GradCheckReport:
    """Compare autograd gradients of scalar ``f`` against central differences.

    ``point`` is a list or dict of float64 tensors passed positionally (or by
    keyword).  The error per parameter is
    max |analytic - numeric| / max(1, |numeric|).
    """
    if not 1e-8 <= eps <= 1e-4:
        raise InvalidArgument(f"eps must lie in [1e-8, 1e-4], got {eps}")
    if isinstance(point, dict):
        names = list(point)
        values = [point[k] for k in names]
    else:
        values = list(point)
        names = [str(i) for i in range(len(values))]
    for v in values:
        if v.dtype != torch.float64:
            raise InvalidArgument("grad_check requires float64 tensors")

    def call(args):
        if isinstance(point, dict):
            return f(**dict(zip(names, args)))
        return f(*args)

    leaves = [v.detach().clone().requires_grad_(True) for v in values]
    out = call(leaves)
    if out.numel() != 1:
        raise InvalidArgument("grad_check needs a scalar function")
    if not torch.isfinite(out).all():
        return GradCheckReport(math.inf, ok=False, message="f is non-finite at the check point")
    grads = torch.autograd.grad(out, leaves, allow_unused=True)

    report = GradCheckReport(0.0)
    with torch.no_grad():
        base = [v.detach().clone() for v in values]
        for name, i in zip(names, range(len(base))):
            analytic = grads[i] if grads[i] is not None else torch.zeros_like(base[i])
            flat = base[i].view(-1)
            numeric = torch.empty_like(flat)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + eps
                hi = call(base).item()
                flat[j] = orig - eps
                lo = call(base).item()
                flat[j] = orig
                if not (math.isfinite(hi) and math.isfinite(lo)):
                    report.ok = False
                    report.message = f"f is non-finite near parameter {name}[{j}]"
                    report.max_rel_error = math.inf
                    return report
                numeric[j] = (hi - lo) / (2.0 * eps)
            err = (analytic.reshape(-1) - numeric).abs() / numeric.abs().clamp(min=1.0)
            e = float(err.max()) if err.numel() else 0.0
            report.per_param[name] = e
            report.max_rel_error = max(report.max_rel_error, e)
    return report
