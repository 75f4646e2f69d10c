"""Finite-difference check of the analytic gradients.

The reference loss below is a deliberately naive re-implementation: one sample
and one time step at a time, in ``np.longdouble``. It shares no code with the
vectorised forward pass, and the extra precision keeps central differences at
``h = 1e-5`` clear of float64 roundoff on tiny gradient coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, init_params, layout_for, loss_and_grad
from .numkernel import finite_diff_grad, relative_error, rng_derive

LD = np.longdouble


def _seg(values, layout, name):
    a, b, shape = layout.offsets[name]
    return values[a:b].reshape(shape)


def _sig(x):
    return LD(1) / (LD(1) + np.exp(-x))


def _direction(seq, W_ih, W_hh, b):
    H = W_hh.shape[1]
    h = np.zeros(H, dtype=LD)
    c = np.zeros(H, dtype=LD)
    out = []
    for x in seq:
        a = W_ih @ x + W_hh @ h + b
        i, f = _sig(a[:H]), _sig(a[H:2 * H])
        g, o = np.tanh(a[2 * H:3 * H]), _sig(a[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return out


def reference_loss(values, cfg: ModelConfig, X, y, G=None):
    """Mean softmax cross-entropy, computed sample by sample."""
    values = np.asarray(values, dtype=LD)
    layout = layout_for(cfg)
    W = _seg(values, layout, "proj.W")
    bp = _seg(values, layout, "proj.b")
    total = LD(0)
    for n in range(len(y)):
        if cfg.arch == "mlp":
            x = np.asarray(X[n], dtype=LD)
            feat = np.tanh(_seg(values, layout, "mlp.W1") @ x + _seg(values, layout, "mlp.b1"))
        else:
            rows = [np.asarray(r, dtype=LD) for r in X[n]]
            for layer in range(cfg.lstm_layers):
                p = f"lstm{layer}"
                fw = _direction(rows, *(_seg(values, layout, f"{p}.fwd.{k}")
                                        for k in ("W_ih", "W_hh", "b")))
                bw = _direction(rows[::-1], *(_seg(values, layout, f"{p}.bwd.{k}")
                                              for k in ("W_ih", "W_hh", "b")))[::-1]
                rows = [np.concatenate([fw[t], bw[t]]) for t in range(len(rows))]
            H = cfg.hidden
            feat = np.concatenate([rows[-1][:H], rows[0][H:]])
            if cfg.glass_fusion:
                g = np.asarray(G[n], dtype=LD)
                mean = g.sum(axis=0) / len(g)
                std = np.sqrt(((g - mean) ** 2).sum(axis=0) / len(g))
                feat = np.concatenate([feat, mean, std])
        z = W @ feat + bp
        m = z.max()
        total += m + np.log(np.exp(z - m).sum()) - z[int(y[n])]
    return total / len(y)


@dataclass
class GradCheckResult:
    cfg: ModelConfig
    max_rel_error: float
    n_params: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def random_config(rng: np.random.Generator) -> ModelConfig:
    """A small random model: T<=6, F<=4, H<=5, <=2 layers, some MLPs, some with glass."""
    T = int(rng.integers(2, 7))
    F = int(rng.integers(1, 5))
    if rng.random() < 0.2:
        return ModelConfig(seq_len=T, feat_dim=F, hidden=1, lstm_layers=1, arch="mlp",
                           mlp_hidden=int(rng.integers(1, 6)), mlp_frames=T)
    glass = bool(rng.random() < 0.5)
    return ModelConfig(seq_len=T, feat_dim=F, hidden=int(rng.integers(1, 6)),
                       lstm_layers=int(rng.integers(1, 3)), glass_fusion=glass,
                       glass_dim=int(rng.integers(1, 4)))


def check_gradients(cfg: ModelConfig, rng: np.random.Generator, batch: int = 2,
                    h: float = 1e-5, floor: float = 1e-8) -> GradCheckResult:
    params = init_params(cfg, rng)
    params.values[:] += rng.normal(scale=0.3, size=params.values.size)
    y = rng.integers(0, 2, size=batch)
    G = None
    if cfg.arch == "mlp":
        X = rng.normal(size=(batch, cfg.mlp_in))
    else:
        X = rng.normal(size=(batch, cfg.seq_len, cfg.feat_dim))
        if cfg.glass_fusion:
            G = rng.normal(size=(batch, cfg.seq_len, cfg.glass_dim))
    _, grad, _ = loss_and_grad(params, cfg, X, y, G)
    fd = finite_diff_grad(lambda v: reference_loss(v, cfg, X, y, G),
                          params.values.astype(LD), h)
    err = relative_error(grad.values, fd.astype(np.float64), floor)
    return GradCheckResult(cfg, float(err.max()), len(params))


def run_gradcheck(n_configs: int = 20, seed: int = 0, **kw) -> list[GradCheckResult]:
    """Check ``n_configs`` random small models, always including both glass settings and an MLP."""
    out = []
    for k in range(n_configs):
        rng = rng_derive(seed, ["gradcheck", k])
        cfg = random_config(rng)
        if k == 0:
            cfg = ModelConfig(seq_len=5, feat_dim=3, hidden=4, lstm_layers=2)
        elif k == 1:
            cfg = ModelConfig(seq_len=6, feat_dim=4, hidden=5, lstm_layers=2, glass_fusion=True,
                              glass_dim=3)
        elif k == 2:
            cfg = ModelConfig(seq_len=4, feat_dim=3, hidden=1, lstm_layers=1, arch="mlp",
                              mlp_hidden=5, mlp_frames=4)
        out.append(check_gradients(cfg, rng, **kw))
    return out
