"""Built-in correctness checks that run without a test runner.

Each check returns ``(ok, detail)``; ``run_selftest`` prints one line per
check and reports whether all of them passed.
"""
from __future__ import annotations

import itertools
import sys
import time
from typing import Callable

import torch

from .decoder import WAIT_INF, wait_k_path
from .encoder import EncoderConfig, StreamingEncoder, reception_field
from .joint import VARIANTS, Joint, JointConfig
from .metrics import al, ap, dal
from .numerics import grad_check
from .transducer_loss import brute_force_nll, transducer_nll

f64 = torch.float64


def _random_lattice(T, U, V1, g):
    return torch.log_softmax(torch.randn(T, U + 1, V1, generator=g, dtype=f64) * 2, -1)


def check_loss_oracle(n: int = 200, seed: int = 0):
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n):
        T, U, V1 = (int(torch.randint(lo, hi + 1, (1,), generator=g)) for lo, hi in ((1, 4), (0, 3), (2, 6)))
        lat = _random_lattice(T, U, V1, g)
        y = torch.randint(0, V1 - 1, (U,), generator=g)
        worst = max(worst, abs(transducer_nll(lat, y).item() - brute_force_nll(lat, y)))
    return worst <= 1e-10, f"{n} lattices, max |DP - enumeration| = {worst:.2e}"


def random_joint(variant: str, d_e=3, d_p=2, d_j=4, vocab=4, seed=0, activation="tanh") -> Joint:
    g = torch.Generator().manual_seed(seed)
    j = Joint(JointConfig(d_e, d_p, d_j, vocab, variant, activation)).double()
    with torch.no_grad():
        for p in j.parameters():
            p.copy_(torch.rand(p.shape, generator=g, dtype=f64) * 2 - 1)
    return j


def joint_grad_report(variant: str, seed: int = 10):
    j = random_joint(variant, seed=seed)
    names = [n for n, _ in j.named_parameters()]
    g = torch.Generator().manual_seed(seed + 1)
    point = {n.replace(".", "_"): p.detach().clone() for n, p in j.named_parameters()}
    point["h_enc"] = torch.randn(3, generator=g, dtype=f64)
    point["h_pred"] = torch.randn(2, generator=g, dtype=f64)
    y = torch.tensor([1, 3])

    def f(h_enc, h_pred, **kw):
        params = {n: kw[n.replace(".", "_")] for n in names}
        # lattice over 2 frames x 3 prefixes built from shifted copies of the inputs
        he = torch.stack([h_enc, h_enc.flip(0)])[None]
        hp = torch.stack([h_pred, h_pred * 0.5, -h_pred])[None]
        lat = torch.func.functional_call(_LatticeView(j), {f"j.{k}": v for k, v in params.items()}, (he, hp))
        return transducer_nll(lat[0], y)

    return grad_check(f, point, eps=1e-6)


class _LatticeView(torch.nn.Module):
    def __init__(self, j: Joint):
        super().__init__()
        self.j = j

    def forward(self, he, hp):
        return self.j.lattice(he, hp)


def check_gradients(tol: float = 1e-4):
    worst = 0.0
    for v in VARIANTS:
        rep = joint_grad_report(v)
        if not rep.ok:
            return False, f"{v}: {rep.message}"
        worst = max(worst, rep.max_rel_error)
    return worst <= tol, f"joint variants through the loss, max rel error {worst:.2e}"


def check_degeneracy():
    g = torch.Generator().manual_seed(2)
    he, hp = torch.randn(1, 5, 3, generator=g, dtype=f64), torch.randn(1, 4, 2, generator=g, dtype=f64)
    bad = []
    for v in VARIANTS[1:]:
        pooled = random_joint(v, seed=11)
        linear = Joint(JointConfig(3, 2, 4, 4, "LINEAR")).double()
        linear.load_state_dict({k: t for k, t in pooled.state_dict().items() if k in linear.state_dict()})
        with torch.no_grad():
            pooled.pool_proj.zero_()
        if not torch.equal(pooled.lattice(he, hp), linear.lattice(he, hp)):
            bad.append(v)
    return not bad, "zero pooling projection equals LINEAR exactly" if not bad else f"differs: {bad}"


def _encoder(L, C, B, seed=0):
    torch.manual_seed(seed)
    enc = StreamingEncoder(EncoderConfig(4, 8, L, 2, 16, 4, C, B)).double()
    with torch.no_grad():
        for p in enc.parameters():
            p.uniform_(-0.5, 0.5)
    return enc.eval()


def mask_causality_violations(L: int, C: int, B: int, T: int = 12, seed: int = 0) -> list[str]:
    """Perturb each frame in turn and compare every output row with the analytic field."""
    enc = _encoder(L, C, B, seed)
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(1, T, 8, generator=g, dtype=f64)
    with torch.no_grad():
        base = enc.encode_frames(x)[0]
        bad = []
        for s in range(T):
            xp = x.clone()
            # a random direction: a constant shift would vanish under LayerNorm
            xp[0, s] += torch.randn(8, generator=g, dtype=f64)
            moved = enc.encode_frames(xp)[0]
            for t in range(T):
                lo, hi = reception_field(L, C, B, t + 1, T)
                inside = lo <= s + 1 <= hi
                same = torch.equal(moved[t], base[t])
                if inside == same:
                    bad.append(f"L={L} C={C} B={B}: frame {s + 1} -> output {t + 1} "
                               f"({'unchanged inside' if inside else 'changed outside'} field [{lo},{hi}])")
    return bad


def check_mask_causality(configs=None):
    configs = configs or list(itertools.product((1, 2, 3), (1, 2, 4), (0, 1, 2)))
    bad = []
    for L, C, B in configs:
        bad += mask_causality_violations(L, C, B)
    if reception_field(3, 3, 1, 10) != (1, 12):
        bad.append(f"reception_field(3, 3, 1, 10) = {reception_field(3, 3, 1, 10)}")
    return not bad, f"{len(configs)} configs agree with the analytic field" if not bad else bad[0]


def check_latency_fixtures():
    w3 = wait_k_path(3, 6, 6)
    diag = wait_k_path(1, 5, 5)
    full = wait_k_path(WAIT_INF, 6, 6)
    got = dict(ap=ap(w3), al=al(w3), dal=dal(w3), al_diag=al(diag), dal_diag=dal(diag), ap_full=ap(full))
    ok = (abs(got["ap"] - 0.8333) <= 1e-4 and got["al"] == 3.0 and got["dal"] == 3.0
          and got["al_diag"] == 1.0 and got["dal_diag"] == 1.0 and got["ap_full"] == 1.0)
    return ok, " ".join(f"{k}={v:.4f}" for k, v in got.items())


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "loss-oracle": check_loss_oracle,
    "gradients": check_gradients,
    "degeneracy": check_degeneracy,
    "mask-causality": check_mask_causality,
    "latency-fixtures": check_latency_fixtures,
}


def run_selftest(out=sys.stdout) -> bool:
    all_ok = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(e).__name__}: {e}"
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<17} {detail}  [{time.perf_counter() - t0:.1f}s]", file=out)
    return all_ok
