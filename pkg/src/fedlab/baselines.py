"""Centralized training, a user-wise bagging ensemble, and the vote-vs-average toy check."""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.types import FederatedSplit, UserDataset, pooled
from .errors import ConfigError, FormatError
from .model import ModelConfig, ParamVector, init_params, predict, predict_proba, read_flpv, write_flpv
from .numkernel import rng_derive
from .training import ArrayData, run_sgd

N_LEARNERS = 15
BAGGING_BATCH = 128


def _users(data) -> list[UserDataset]:
    return list(data.train_clients) if isinstance(data, FederatedSplit) else list(data)


def train_centralized(data, model_cfg: ModelConfig, lr: float, epochs: int, batch: int = 4,
                      rng: np.random.Generator | None = None) -> ParamVector:
    """Shuffled mini-batch SGD on the pooled samples of every training user.

    ``rng`` draws the initial parameters first and then the epoch shuffles.
    """
    samples = pooled(_users(data))
    if not samples:
        raise ConfigError("no training samples to pool")
    if epochs < 0 or batch < 1:
        raise ConfigError("epochs must be >= 0 and batch >= 1")
    rng = rng if rng is not None else rng_derive(0, ["centralized"])
    params = init_params(model_cfg, rng)
    params, _ = run_sgd(params, model_cfg, ArrayData.from_samples(samples, model_cfg), lr,
                        epochs, batch, rng)
    return params


def bootstrap_userwise(clients, n: int = N_LEARNERS,
                       rng: np.random.Generator | None = None) -> list[list[UserDataset]]:
    """``n`` subsets of users drawn with replacement until each holds at least as many
    samples as the full corpus."""
    users = _users(clients)
    if not users:
        raise ConfigError("bootstrap needs at least one user")
    rng = rng if rng is not None else np.random.default_rng(0)
    target = sum(len(u) for u in users)
    subsets = []
    for _ in range(n):
        picked, total = [], 0
        while total < target:
            u = users[int(rng.integers(len(users)))]
            picked.append(u)
            total += len(u)
        subsets.append(picked)
    return subsets


@dataclass
class Ensemble:
    learners: list
    model_cfg: ModelConfig | None = None

    def __post_init__(self):
        for p in self.learners[1:]:
            self.learners[0].check_compatible(p)

    @property
    def n(self) -> int:
        return len(self.learners)

    def to_bytes(self) -> bytes:
        return struct.pack("<I", len(self.learners)) + b"".join(write_flpv(p) for p in self.learners)

    @classmethod
    def from_bytes(cls, buf: bytes, model_cfg: ModelConfig | None = None) -> "Ensemble":
        if len(buf) < 4:
            raise FormatError("ensemble is missing its learner count", 0)
        (count,) = struct.unpack_from("<I", buf, 0)
        pos, learners = 4, []
        for _ in range(count):
            p, pos = read_flpv(buf, pos)
            learners.append(p)
        if pos != len(buf):
            raise FormatError("trailing bytes after the last learner", pos)
        return cls(learners, model_cfg)


def train_bagging(data, model_cfg: ModelConfig, lr: float, epochs: int = 8, seed: int = 0,
                  n: int = N_LEARNERS, batch: int = BAGGING_BATCH, bootstrap: bool = True,
                  shared_init: bool = False) -> Ensemble:
    """Independently initialised learners, each fit to its own user-wise bootstrap.

    ``bootstrap=False`` trains every learner on the full corpus; ``shared_init``
    puts every learner on learner 0's random path (a degeneracy check).
    """
    users = _users(data)
    if bootstrap:
        subsets = bootstrap_userwise(users, n, rng_derive(seed, ["bagging", "bootstrap"]))
    else:
        subsets = [users] * n
    learners = []
    for k, subset in enumerate(subsets):
        rng = rng_derive(seed, ["bagging", "learner", 0 if shared_init else k])
        learners.append(train_centralized(subset, model_cfg, lr, epochs, batch, rng))
    return Ensemble(learners, model_cfg)


def soft_vote(ensemble: Ensemble, sample, model_cfg: ModelConfig | None = None) -> float:
    """Mean positive-class probability over the learners."""
    if not ensemble.learners:
        raise ConfigError("cannot vote with an empty ensemble")
    cfg = model_cfg or ensemble.model_cfg
    if cfg is None:
        raise ConfigError("soft_vote needs the learners' model config")
    return float(np.mean([predict(p, cfg, sample) for p in ensemble.learners]))


def soft_vote_batch(ensemble: Ensemble, X, G=None, model_cfg: ModelConfig | None = None):
    if not ensemble.learners:
        raise ConfigError("cannot vote with an empty ensemble")
    cfg = model_cfg or ensemble.model_cfg
    return np.mean([predict_proba(p, cfg, X, G) for p in ensemble.learners], axis=0)


# ------------------------------------------------------------------ toy example

def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class ToyReport:
    n_models: int
    base_output: float
    threshold: float
    soft_vote_increase: float      # one learner's output must rise by this much
    soft_vote_feasible: bool       # ... and that stays within [0, 1]
    soft_vote_flips: bool          # best case: one learner jumps to 1.0
    logit_increase: float
    bias_increase: float           # on one model, so the average moves by logit_increase
    average_flips: bool
    checked_bias: float | None = None
    checked_bias_flips: bool | None = None
    checked_average_output: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _averaged_output(n: int, base: float, bias_bump: float) -> float:
    """Single-neuron models sharing bias ``logit(base)``; one gets ``bias_bump`` extra."""
    biases = np.full(n, logit(base))
    biases[0] += bias_bump
    return 1.0 / (1.0 + math.exp(-float(np.mean(biases))))


def toy_vote_vs_average(n_models: int = 100, base_output: float = 0.49, threshold: float = 0.5,
                        check_bias: float | None = None) -> ToyReport:
    """How far one participant must move to flip a soft-vote ensemble versus a
    parameter-averaged model, when all others sit at ``base_output``.

    ``check_bias`` additionally evaluates the averaged model under that bias bump.
    """
    if not 0.0 < base_output < threshold < 1.0:
        raise ConfigError("need 0 < base_output < threshold < 1")
    if n_models < 1:
        raise ConfigError("n_models must be >= 1")
    need = n_models * (threshold - base_output)
    best_vote = ((n_models - 1) * base_output + 1.0) / n_models
    dz = logit(threshold) - logit(base_output)
    bias = n_models * dz
    # the averaged logit lands on logit(threshold) up to rounding; compare in logit space
    z_avg = logit(base_output) + bias / n_models
    rep = ToyReport(n_models, base_output, threshold, need, base_output + need <= 1.0,
                    best_vote >= threshold, dz, bias,
                    z_avg >= logit(threshold) - 1e-12)
    if check_bias is not None:
        out = _averaged_output(n_models, base_output, check_bias)
        rep.checked_bias = check_bias
        rep.checked_average_output = out
        rep.checked_bias_flips = out >= threshold
        if not rep.checked_bias_flips:
            rep.notes.append(f"a bias bump of {check_bias} leaves the averaged output at {out:.8f}; "
                             f"{bias:.6f} is needed")
    return rep
