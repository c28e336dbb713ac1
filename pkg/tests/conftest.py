import pytest
import torch

from streamduct.config import Config
from streamduct.encoder import EncoderConfig, StreamingEncoder
from streamduct.model_zoo import assemble


def random_encoder(layers=2, chunk=4, left=2, d=16, heads=2, feat_dim=6, seed=0):
    torch.manual_seed(seed)
    enc = StreamingEncoder(EncoderConfig(feat_dim, d, layers, heads, 2 * d, 4, chunk, left)).double()
    with torch.no_grad():
        for p in enc.parameters():
            p.uniform_(-0.5, 0.5)
    return enc.eval()


@pytest.fixture
def small_cfg():
    return Config(enc_dim=16, heads=2, ffn=32, pred_dim=12, joint_dim=10, tgt_vocab=6,
                  src_vocab=6, feat_dim=5)


@pytest.fixture
def small_model(small_cfg):
    return assemble(small_cfg.replace(languages="MONO,REORDER"), seed=3).double()


_criteria: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; echoed immediately and in the terminal summary."""
    def record(n: int, ok: bool, detail: str):
        _criteria[n] = (ok, detail)
        print(f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, detail = _criteria[n]
        terminalreporter.write_line(f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
