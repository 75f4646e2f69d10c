"""Synthetic non-iid learner corpora.

Per-user sample counts are log-normal (heavy tail, clipped at one), per-user
positive rates are Beta around the target rate, and fixed fractions of users
are forced to hold a single class. Each clip is an AR(1) noise sequence on
top of a per-user offset, with a class-dependent drift that develops over the
clip; the drift is what a sequence model can learn, the offset is what makes
users look different from one another.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..numkernel import rng_derive
from .types import Sample, UserDataset


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 130
    mean_samples: float = 25.4
    count_sigma: float = 1.0
    positive_rate: float = 0.30
    rate_concentration: float = 4.0
    frac_all_positive: float = 8 / 130
    frac_all_negative: float = 15 / 130
    frac_glasses: float = 12 / 130
    T: int = 12
    F: int = 16
    fps: float = 1.2
    glass_dim: int = 8
    class_signal: float = 1.5
    user_shift: float = 1.0
    noise: float = 1.0
    ar_coef: float = 0.5
    gaze_dims: int = 2
    invalid_burst_rate: float = 0.05
    max_burst: int = 12
    dark_rate: float = 0.02

    def validate(self) -> None:
        for name in ("positive_rate", "frac_all_positive", "frac_all_negative", "frac_glasses",
                     "invalid_burst_rate", "dark_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.frac_all_positive + self.frac_all_negative > 1.0 + 1e-12:
            raise ConfigError("all-positive and all-negative fractions sum past 1")
        if self.n_users < 1 or self.mean_samples < 1 or self.T < 1 or self.F < 1:
            raise ConfigError("counts and dimensions must be >= 1")
        if not self.fps > 0 or self.rate_concentration <= 0:
            raise ConfigError("fps and rate_concentration must be positive")
        if not 0 <= self.ar_coef < 1:
            raise ConfigError("ar_coef must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def rest_rate(self) -> float:
        """Beta mean for users not forced to a single class."""
        rest = 1.0 - self.frac_all_positive - self.frac_all_negative
        m = (self.positive_rate - self.frac_all_positive) / rest if rest > 0 else self.positive_rate
        return min(max(m, 1e-3), 1 - 1e-3)


@dataclass
class UserProfiles:
    counts: np.ndarray
    rates: np.ndarray       # Beta draws (forced users carry 1.0 or 0.0)
    forced: np.ndarray      # +1 all-positive, -1 all-negative, 0 free
    glasses: np.ndarray


def draw_user_profiles(spec: SynthSpec, seed: int) -> UserProfiles:
    spec.validate()
    rng = rng_derive(seed, ["synth", "profiles"])
    n = spec.n_users
    mu = math.log(spec.mean_samples) - spec.count_sigma ** 2 / 2
    counts = np.maximum(1, np.rint(rng.lognormal(mu, spec.count_sigma, size=n))).astype(np.int64)
    m = spec.rest_rate
    rates = rng.beta(m * spec.rate_concentration, (1 - m) * spec.rate_concentration, size=n)
    n_pos = min(n, int(round(spec.frac_all_positive * n)))
    n_neg = min(n - n_pos, int(round(spec.frac_all_negative * n)))
    order = rng.permutation(n)
    forced = np.zeros(n, dtype=np.int64)
    forced[order[:n_pos]] = 1
    forced[order[n_pos:n_pos + n_neg]] = -1
    rates = np.where(forced == 1, 1.0, np.where(forced == -1, 0.0, rates))
    glasses = np.zeros(n, dtype=bool)
    glasses[rng.permutation(n)[:int(round(spec.frac_glasses * n))]] = True
    return UserProfiles(counts, rates, forced, glasses)


def _unit(rng, F):
    v = rng.normal(size=F)
    return v / np.linalg.norm(v)


def synth_generate(spec: SynthSpec = SynthSpec(), seed: int = 0) -> list[UserDataset]:
    prof = draw_user_profiles(spec, seed)
    drng = rng_derive(seed, ["synth", "directions"])
    d_pos = _unit(drng, spec.F)
    d_neg = _unit(drng, spec.F)
    glass_proto = drng.normal(size=(2, max(spec.glass_dim, 1)))
    ramp = np.linspace(0.0, 1.0, spec.T)[:, None]
    users = []
    for k in range(spec.n_users):
        rng = rng_derive(seed, ["synth", "user", k])
        uid = f"u{k:03d}"
        wears = bool(prof.glasses[k])
        offset = rng.normal(scale=spec.user_shift, size=spec.F)
        expressiveness = rng.uniform(0.6, 1.4)
        base_light = float(np.clip(rng.normal(150.0, 20.0), 110.0, 230.0))
        gvec = glass_proto[int(wears)] + 0.3 * rng.normal(size=glass_proto.shape[1])
        samples = []
        for _ in range(int(prof.counts[k])):
            y = int(rng.random() < prof.rates[k])
            noise = np.empty((spec.T, spec.F))
            e = rng.normal(scale=spec.noise, size=(spec.T, spec.F))
            noise[0] = e[0]
            for t in range(1, spec.T):
                noise[t] = spec.ar_coef * noise[t - 1] + math.sqrt(1 - spec.ar_coef ** 2) * e[t]
            drift = spec.class_signal * expressiveness * ramp * (d_pos if y else d_neg)
            X = offset + drift + noise
            if wears and spec.gaze_dims:
                # reflective lenses: gaze channels carry no class information
                X[:, -spec.gaze_dims:] = offset[-spec.gaze_dims:] + rng.normal(
                    scale=2.0 * spec.noise, size=(spec.T, spec.gaze_dims))
            valid = np.ones(spec.T, dtype=bool)
            if rng.random() < spec.invalid_burst_rate:
                L = int(rng.integers(1, min(spec.max_burst, spec.T) + 1))
                s0 = int(rng.integers(0, spec.T - L + 1))
                valid[s0:s0 + L] = False
                X[s0:s0 + L] = 0.0
            bright = np.clip(base_light + rng.normal(scale=5.0, size=spec.T), 0.0, 255.0)
            if rng.random() < spec.dark_rate:
                L = int(rng.integers(1, spec.T + 1))
                s0 = int(rng.integers(0, spec.T - L + 1))
                bright[s0:s0 + L] = np.clip(rng.normal(60.0, 10.0, size=L), 0.0, 99.0)
            glass = None
            if spec.glass_dim:
                glass = gvec[:spec.glass_dim] + 0.1 * rng.normal(size=(spec.T, spec.glass_dim))
            samples.append(Sample(uid, y, X, valid, bright, spec.fps, glass))
        users.append(UserDataset(uid, samples, wears))
    return users
