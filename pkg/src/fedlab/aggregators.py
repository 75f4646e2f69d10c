"""Server-side aggregation rules.

Every aggregator takes the round's participant models in a fixed order together
with their weights and returns a new global ``ParamVector`` of the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, ShapeError
from .model import ParamVector
from .optim import AdamState, SgdConfig, adam_step, sgd_step

EMBED = "proj.W"


def aggregation_weights(sizes) -> np.ndarray:
    """``|D_i| / sum_j |D_j|`` over the round's participants."""
    sizes = np.asarray([len(s) if hasattr(s, "__len__") else s for s in sizes], dtype=np.float64)
    if sizes.size == 0:
        raise ProtocolError("no participants to weight")
    total = sizes.sum()
    if total <= 0:
        raise ProtocolError("participants hold no samples")
    return sizes / total


def _weighted_sum(vectors, weights) -> np.ndarray:
    """Sum of ``w_i * v_i`` that does not depend on participant order.

    Terms are sorted per coordinate before the left-to-right sum, so any
    permutation of the inputs gives bitwise the same result.
    """
    terms = np.stack([w * v for v, w in zip(vectors, weights)])
    if len(terms) > 1:
        terms.sort(axis=0)
    out = terms[0].copy()
    for row in terms[1:]:
        out += row
    return out


def _check_layouts(locals_, weights):
    if len(locals_) == 0:
        raise ProtocolError("no participant models to aggregate")
    if len(locals_) != len(weights):
        raise ShapeError(f"{len(locals_)} models but {len(weights)} weights")
    for p in locals_[1:]:
        locals_[0].check_compatible(p)


def aggregate_fedavg(locals_: list[ParamVector], weights) -> ParamVector:
    _check_layouts(locals_, weights)
    return locals_[0].with_values(_weighted_sum([p.values for p in locals_], weights))


def pseudo_gradient(global_: ParamVector, locals_, weights) -> ParamVector:
    """Negated weighted mean client delta."""
    _check_layouts(locals_, weights)
    global_.check_compatible(locals_[0])
    delta = _weighted_sum([p.values - global_.values for p in locals_], weights)
    return global_.with_values(-delta)


def aggregate_fedadam(server: AdamState | SgdConfig, global_: ParamVector, locals_, weights):
    """Feed the pseudo-gradient to the server optimizer; returns ``(global, server state)``."""
    g = pseudo_gradient(global_, locals_, weights)
    if isinstance(server, SgdConfig):
        return sgd_step(global_, g, server), server
    return adam_step(server, global_, g)


def server_fedaws_spreadout(global_: ParamVector, margin: float, server_lr: float,
                            rng: np.random.Generator | None = None) -> ParamVector:
    """One gradient step on ``max(0, margin - ||w0 - w1||)^2`` over the class embeddings."""
    out = global_.copy()
    W = out.view(EMBED)
    diff = W[0] - W[1]
    dist = float(np.linalg.norm(diff))
    if dist >= margin:
        return out
    if dist > 0:
        u = diff / dist
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        u = rng.normal(size=diff.shape)
        u /= np.linalg.norm(u)
    # d/dw0 of (margin - ||w0 - w1||)^2 is -2 (margin - dist) u; w1 gets the opposite sign
    step = 2.0 * server_lr * (margin - dist)
    W[0] += step * u
    W[1] -= step * u
    return out


# ------------------------------------------------------------------ TurboSVM

@dataclass
class SvmFit:
    w: np.ndarray
    b: float
    alpha: np.ndarray
    margins: np.ndarray   # y_i (w . x_i + b)


def _project_box_hyperplane(v, y, C):
    """Euclidean projection onto ``{0 <= a <= C, sum y a = 0}``.

    The projection is ``clip(v - mu * y, 0, C)`` for the ``mu`` that zeroes
    ``r(mu) = sum y clip(v - mu y, 0, C)``. ``r`` is piecewise linear and
    non-increasing with kinks at ``y v`` and ``y (v - C)``, so the root is found
    exactly by evaluating ``r`` at the sorted kinks and interpolating.
    """
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ProtocolError("the SVM needs points of both classes")
    kinks = np.unique(np.concatenate([y * v, y * (v - C)]))
    r = (y[None, :] * np.clip(v[None, :] - kinks[:, None] * y[None, :], 0.0, C)).sum(axis=1)
    j = int(np.searchsorted(-r, 0.0, side="right")) - 1     # last kink with r >= 0
    if j < 0:
        mu = kinks[0]
    elif j >= len(kinks) - 1 or r[j] == 0.0:
        mu = kinks[min(j, len(kinks) - 1)]
    else:
        mu = kinks[j] + (kinks[j + 1] - kinks[j]) * r[j] / (r[j] - r[j + 1])
    return np.clip(v - mu * y, 0.0, C)


def fit_linear_svm(X, y, C: float = 1.0, iters: int = 500) -> SvmFit:
    """Soft-margin linear SVM by accelerated projected gradient on the dual.

    ``y`` holds +1/-1. Deterministic: starts from zero and has no random choices.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Q = (y[:, None] * y[None, :]) * (X @ X.T)
    L = float(np.linalg.eigvalsh(Q)[-1]) if len(y) else 0.0
    alpha = np.zeros(len(y))
    if L <= 0:
        w = np.zeros(X.shape[1])
        return SvmFit(w, 0.0, alpha, np.zeros(len(y)))
    z = alpha.copy()
    t = 1.0
    for _ in range(iters):
        nxt = _project_box_hyperplane(z - (Q @ z - 1.0) / L, y, C)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = nxt + ((t - 1.0) / t_next) * (nxt - alpha)
        alpha, t = nxt, t_next
    w = (alpha * y) @ X
    f = X @ w
    tol = 1e-8 * C
    free = (alpha > tol) & (alpha < C - tol)
    if free.any():
        b = float(np.mean(y[free] - f[free]))
    else:
        # bias range allowed by the KKT conditions; take its midpoint
        lo_cands = [y[i] - f[i] for i in range(len(y))
                    if (y[i] > 0 and alpha[i] <= tol) or (y[i] < 0 and alpha[i] >= C - tol)]
        hi_cands = [y[i] - f[i] for i in range(len(y))
                    if (y[i] > 0 and alpha[i] >= C - tol) or (y[i] < 0 and alpha[i] <= tol)]
        lo = max(lo_cands) if lo_cands else (min(hi_cands) if hi_cands else 0.0)
        hi = min(hi_cands) if hi_cands else lo
        b = 0.5 * (lo + hi)
    return SvmFit(w, b, alpha, y * (f + b))


def support_mask(fit: SvmFit, tol: float = 1e-6) -> np.ndarray:
    """Points on or inside the margin."""
    return fit.margins <= 1.0 + tol


def aggregate_turbosvm(global_: ParamVector, locals_: list[ParamVector], weights,
                       svm_c: float = 1.0, svm_iters: int = 500,
                       server_lr: float = 1e-2) -> ParamVector:
    """FedAvg for the body; SVM-guided aggregation of the class embeddings.

    Each participant contributes its two embedding rows as labelled points. The
    class embeddings are rebuilt from support-vector clients only, weighted by
    their dual coefficients, and then pushed one step apart along the SVM normal.
    """
    if len(locals_) < 2:
        raise ProtocolError("TurboSVM aggregation needs at least two participants")
    out = aggregate_fedavg(locals_, weights)
    E = np.stack([p.view(EMBED) for p in locals_])          # (k, 2, d)
    if np.all(E[:, 0] == E[0, 0]) and np.all(E[:, 1] == E[0, 1]):
        return out   # unanimous embeddings: nothing for the SVM to arbitrate
    k = len(locals_)
    pts = np.concatenate([E[:, 0], E[:, 1]])
    lab = np.concatenate([-np.ones(k), np.ones(k)])
    fit = fit_linear_svm(pts, lab, svm_c, svm_iters)
    sv = support_mask(fit)
    weights = np.asarray(weights, dtype=np.float64)
    W = out.view(EMBED)
    for cls in (0, 1):
        rows = slice(cls * k, (cls + 1) * k)
        act = np.where(sv[rows], fit.alpha[rows], 0.0)
        if act.sum() > 0:
            w_c = act / act.sum()
        elif sv[rows].any():
            w_c = sv[rows] / sv[rows].sum()
        else:
            w_c = weights / weights.sum()
        W[cls] = w_c @ E[:, cls]
    norm = float(np.linalg.norm(fit.w))
    if norm > 0:
        n_hat = fit.w / norm
        W[1] += server_lr * n_hat
        W[0] -= server_lr * n_hat
    return out
