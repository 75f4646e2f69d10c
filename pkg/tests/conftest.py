import numpy as np
import pytest

from fedlab.data import SynthSpec, synth_generate
from fedlab.model import ModelConfig


@pytest.fixture
def tiny_cfg():
    return ModelConfig(seq_len=6, feat_dim=4, hidden=3, lstm_layers=1)


@pytest.fixture
def tiny_spec():
    return SynthSpec(n_users=10, mean_samples=8, T=6, F=4, glass_dim=3,
                     invalid_burst_rate=0.0, dark_rate=0.0)


@pytest.fixture
def tiny_users(tiny_spec):
    return synth_generate(tiny_spec, seed=0)


def triple_loop_matmul(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], outcome))
    if lines:
        terminalreporter.section("acceptance criteria")
        for (num, title), outcome in sorted(lines):
            terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  "
                                        f"criterion {num}: {title}")
