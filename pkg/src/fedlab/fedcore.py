"""Federated rounds: client sampling, local training and server aggregation."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .aggregators import (aggregate_fedadam, aggregate_fedavg, aggregate_turbosvm,
                          aggregation_weights, server_fedaws_spreadout)
from .data.types import FederatedSplit, UserDataset, pooled
from .errors import ConfigError, ProtocolError
from .evalkit import core_metrics, confusion
from .model import ModelConfig, ParamVector, forward, init_params, predict_proba
from .numkernel import rng_derive
from .optim import AdamState
from .training import ArrayData, run_sgd

ALGOS = ("fedavg", "fedadam", "fedaws", "fedprox", "moon", "turbosvm")
SERVER_LR_ALGOS = ("fedadam", "fedaws", "turbosvm")


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 100
    participation: float = 0.5
    local_epochs: int = 8
    batch_size: int = 4
    client_lr: float = 1e-3
    algo: str = "fedavg"
    server_lr: float = 1e-2
    mu_prox: float = 0.01
    mu_moon: float = 1.0
    tau_moon: float = 0.5
    aws_margin: float = 1.0
    svm_c: float = 1.0
    svm_iters: int = 500
    patience: int = 10

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; expected one of {ALGOS}")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError("participation must lie in (0, 1]")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1 or self.svm_iters < 1:
            raise ConfigError("rounds, local_epochs, batch_size and svm_iters must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        for name in ("client_lr", "server_lr", "mu_prox", "mu_moon", "aws_margin", "svm_c"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.tau_moon > 0:
            raise ConfigError("tau_moon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClientState:
    client_id: str
    dataset: UserDataset
    prev_local: ParamVector | None = None
    _arrays: ArrayData | None = field(default=None, repr=False)

    def arrays(self, cfg: ModelConfig) -> ArrayData:
        if self._arrays is None:
            self._arrays = ArrayData.from_samples(self.dataset.samples, cfg)
        return self._arrays


@dataclass
class RoundReport:
    round: int
    participants: list
    mean_loss: float
    update_norm: float
    val: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def participant_count(n: int, participation: float) -> int:
    # the small slack keeps e.g. 0.3 * 10 from rounding up to 4
    return min(n, max(1, math.ceil(participation * n - 1e-9)))


def sample_clients(round_idx: int, clients: list, participation: float, seed: int) -> list:
    """``ceil(participation * N)`` distinct clients, in their original order."""
    if not 0.0 < participation <= 1.0:
        raise ConfigError("participation must lie in (0, 1]")
    n = len(clients)
    if n == 0:
        raise ProtocolError("no clients to sample from")
    k = participant_count(n, participation)
    if k == n:
        return list(clients)
    rng = rng_derive(seed, ["round", round_idx])
    picked = np.sort(rng.choice(n, size=k, replace=False))
    return [clients[i] for i in picked]


def _cosine(a, b):
    """Row-wise cosine and its gradient w.r.t. ``a``; zero-norm rows give 0."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    dot = np.sum(a * b, axis=1)
    denom = np.where(ok, na * nb, 1.0)
    cos = np.where(ok, dot / denom, 0.0)
    na_safe = np.where(ok, na, 1.0)
    grad = b / denom[:, None] - (cos / na_safe ** 2)[:, None] * a
    grad[~ok] = 0.0
    return cos, grad


def moon_contrastive(z, z_glob, z_prev, tau: float):
    """Per-row contrastive loss pulling ``z`` toward ``z_glob`` and away from ``z_prev``.

    Returns ``(losses, dlosses/dz)``.
    """
    if not tau > 0:
        raise ConfigError("tau must be positive")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    z_glob = np.atleast_2d(np.asarray(z_glob, dtype=np.float64))
    z_prev = np.atleast_2d(np.asarray(z_prev, dtype=np.float64))
    if not (z.shape == z_glob.shape == z_prev.shape):
        raise ConfigError("contrastive inputs must share a shape")
    c_g, d_g = _cosine(z, z_glob)
    c_p, d_p = _cosine(z, z_prev)
    a, b = c_g / tau, c_p / tau
    # -log(e^a / (e^a + e^b)) = log(1 + e^(b - a))
    loss = np.logaddexp(0.0, b - a)
    s = 1.0 / (1.0 + np.exp(a - b))        # softmax weight of the negative pair
    grad = (s / tau)[:, None] * (d_p - d_g)
    return loss, grad


def _prox_hook(global_: ParamVector, mu: float):
    def hook(params, X, G, cache):
        diff = params.values - global_.values
        return 0.5 * mu * float(diff @ diff), None, mu * diff
    return hook


def _moon_hook(global_: ParamVector, prev: ParamVector, cfg: ModelConfig, mu: float, tau: float):
    def hook(params, X, G, cache):
        z_g = forward(global_, cfg, X, G).readout
        z_p = forward(prev, cfg, X, G).readout
        losses, dz = moon_contrastive(cache.readout, z_g, z_p, tau)
        B = losses.size
        return mu * float(losses.mean()), (mu / B) * dz, None
    return hook


def local_train(client: ClientState, global_: ParamVector, cfg: FederationConfig,
                model_cfg: ModelConfig, rng: np.random.Generator):
    """Local epochs of shuffled mini-batch SGD from the global model; returns ``(params, loss)``."""
    if len(client.dataset) == 0:
        raise ProtocolError(f"client {client.client_id} holds no samples")
    if client.prev_local is not None:
        global_.check_compatible(client.prev_local)
    hook = None
    if cfg.algo == "fedprox" and cfg.mu_prox > 0:
        hook = _prox_hook(global_, cfg.mu_prox)
    elif cfg.algo == "moon" and cfg.mu_moon > 0:
        prev = client.prev_local if client.prev_local is not None else global_
        hook = _moon_hook(global_, prev, model_cfg, cfg.mu_moon, cfg.tau_moon)
    params, loss = run_sgd(global_.copy(), model_cfg, client.arrays(model_cfg), cfg.client_lr,
                           cfg.local_epochs, cfg.batch_size, rng, hook)
    if cfg.algo == "moon":
        client.prev_local = params
    return params, loss


@dataclass
class ServerState:
    adam: AdamState | None = None


def aggregate(cfg: FederationConfig, server: ServerState, global_: ParamVector, locals_,
              weights, round_idx: int, seed: int) -> ParamVector:
    if cfg.algo == "fedadam":
        if server.adam is None:
            server.adam = AdamState.fresh(global_, lr=cfg.server_lr)
        new, server.adam = aggregate_fedadam(server.adam, global_, locals_, weights)
        return new
    if cfg.algo == "turbosvm" and len(locals_) >= 2:
        return aggregate_turbosvm(global_, locals_, weights, cfg.svm_c, cfg.svm_iters,
                                  cfg.server_lr)
    new = aggregate_fedavg(locals_, weights)
    if cfg.algo == "fedaws":
        new = server_fedaws_spreadout(new, cfg.aws_margin, cfg.server_lr,
                                      rng_derive(seed, ["round", round_idx, "spreadout"]))
    return new


def thread_count() -> int:
    raw = os.environ.get("FEDLAB_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"FEDLAB_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("FEDLAB_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def evaluate_users(params: ParamVector, model_cfg: ModelConfig, users) -> dict:
    """Binary metrics of the model on the pooled samples of ``users``."""
    data = ArrayData.from_samples(pooled(users), model_cfg)
    probs = predict_proba(params, model_cfg, data.X, data.G)
    out = core_metrics(confusion(probs, data.y))
    return out


def run_federation(cfg: FederationConfig, split: FederatedSplit, model_cfg: ModelConfig,
                   seed: int, val_users=None, log=None, threads: int | None = None,
                   init: ParamVector | None = None):
    """Run the federation; returns ``(params, reports)``.

    With ``val_users`` each round is scored on them and the best-F1 model is
    returned, stopping after ``cfg.patience`` rounds without improvement.
    ``log`` is a writable text stream that receives one JSON line per round.
    """
    clients = [ClientState(u.user_id, u) for u in split.train_clients]
    if not clients:
        raise ProtocolError("federation has no clients")
    global_ = init.copy() if init is not None else init_params(model_cfg, rng_derive(seed, ["init"]))
    server = ServerState()
    reports: list[RoundReport] = []
    best, best_f1, stale = global_, -1.0, 0
    threads = threads if threads is not None else thread_count()
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for r in range(cfg.rounds):
            part = sample_clients(r, clients, cfg.participation, seed)

            def job(c, _g=global_, _r=r):
                try:
                    return local_train(c, _g, cfg, model_cfg,
                                       rng_derive(seed, ["round", _r, "client", c.client_id]))
                except Exception as exc:
                    raise ProtocolError(f"round {_r}: client {c.client_id} failed: {exc}") from exc

            results = list(pool.map(job, part)) if pool else [job(c) for c in part]
            locals_ = [p for p, _ in results]
            weights = aggregation_weights([len(c.dataset) for c in part])
            new = aggregate(cfg, server, global_, locals_, weights, r, seed)
            rep = RoundReport(r, [c.client_id for c in part],
                              float(np.dot(weights, [l for _, l in results])),
                              float(np.linalg.norm(new.values - global_.values)))
            global_ = new
            stop = False
            if val_users:
                rep.val = evaluate_users(global_, model_cfg, val_users)
                if rep.val["f1_binary"] > best_f1:
                    best, best_f1, stale = global_, rep.val["f1_binary"], 0
                else:
                    stale += 1
                    stop = stale >= cfg.patience
            reports.append(rep)
            if log is not None:
                log.write(rep.to_json() + "\n")
            if stop:
                break
    finally:
        if pool:
            pool.shutdown()
    return (best if val_users else global_), reports
