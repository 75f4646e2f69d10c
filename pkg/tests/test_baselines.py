import math

import numpy as np
import pytest

from fedlab.baselines import (BAGGING_BATCH, N_LEARNERS, Ensemble, bootstrap_userwise, soft_vote,
                              soft_vote_batch, toy_vote_vs_average, train_bagging,
                              train_centralized)
from fedlab.data import Sample, UserDataset
from fedlab.errors import ConfigError, FormatError
from fedlab.model import ModelConfig, init_params, predict, predict_proba
from fedlab.numkernel import rng_derive
from fedlab.training import ArrayData


def clip(uid, label, rng, T=4, F=2):
    sign = 1.0 if label else -1.0
    return Sample(uid, label, sign + 0.3 * rng.normal(size=(T, F)), np.ones(T, bool),
                  np.full(T, 120.0), 30.0)


def separable_users(n_users=6, per_user=6, seed=0):
    rng = np.random.default_rng(seed)
    return [UserDataset(f"u{i}", [clip(f"u{i}", k % 2, rng) for k in range(per_user)])
            for i in range(n_users)]


def sized_users(sizes, seed=0):
    rng = np.random.default_rng(seed)
    return [UserDataset(f"s{i}", [clip(f"s{i}", k % 2, rng) for k in range(n)])
            for i, n in enumerate(sizes)]


@pytest.fixture
def sep_cfg():
    return ModelConfig(seq_len=4, feat_dim=2, hidden=3, lstm_layers=1)


# ---------------------------------------------------------------- centralized

def test_centralized_zero_lr_is_init(sep_cfg):
    users = separable_users()
    p = train_centralized(users, sep_cfg, 0.0, 2, rng=rng_derive(3, ["c"]))
    assert p.values.tobytes() == init_params(sep_cfg, rng_derive(3, ["c"])).values.tobytes()


def test_centralized_deterministic(sep_cfg):
    users = separable_users()
    a = train_centralized(users, sep_cfg, 0.1, 2, rng=rng_derive(1, ["c"]))
    b = train_centralized(users, sep_cfg, 0.1, 2, rng=rng_derive(1, ["c"]))
    assert a.values.tobytes() == b.values.tobytes()


def test_centralized_fits_separable_data(sep_cfg):
    users = separable_users()
    p = train_centralized(users, sep_cfg, 0.3, 20, rng=rng_derive(0, ["c"]))
    d = ArrayData.from_samples([s for u in users for s in u.samples], sep_cfg)
    acc = np.mean((predict_proba(p, sep_cfg, d.X) >= 0.5) == d.y)
    assert acc == 1.0


def test_centralized_rejects_empty(sep_cfg):
    with pytest.raises(ConfigError):
        train_centralized([], sep_cfg, 0.1, 1)


# ---------------------------------------------------------------- bootstrap

def test_bootstrap_properties():
    users = sized_users([3, 7, 2, 9, 4, 5])
    target = sum(len(u) for u in users)
    ids = {u.user_id for u in users}
    subsets = bootstrap_userwise(users, 50, np.random.default_rng(0))
    assert len(subsets) == 50
    for s in subsets:
        total = sum(len(u) for u in s)
        assert total >= target
        assert total - len(s[-1]) < target      # stops as soon as the target is met
        assert {u.user_id for u in s} <= ids


def test_bootstrap_inclusion_rate():
    U = 10
    users = sized_users([4] * U)
    subsets = bootstrap_userwise(users, 4000, np.random.default_rng(1))
    rate = np.mean([len({u.user_id for u in s}) / U for s in subsets])
    assert rate == pytest.approx(1 - (1 - 1 / U) ** U, abs=0.01)


def test_bootstrap_seeded():
    users = sized_users([3, 4, 5])
    a = bootstrap_userwise(users, 5, rng_derive(0, ["b"]))
    b = bootstrap_userwise(users, 5, rng_derive(0, ["b"]))
    assert [[u.user_id for u in s] for s in a] == [[u.user_id for u in s] for s in b]


# ---------------------------------------------------------------- bagging

def test_bagging_defaults(sep_cfg):
    assert (N_LEARNERS, BAGGING_BATCH) == (15, 128)
    ens = train_bagging(separable_users(), sep_cfg, 0.1, epochs=1)
    assert ens.n == 15
    vals = {p.values.tobytes() for p in ens.learners}
    assert len(vals) == 15


def test_bagging_compositional_oracle(sep_cfg):
    users = separable_users()
    ens = train_bagging(users, sep_cfg, 0.2, epochs=2, seed=5, n=3, batch=8)
    subsets = bootstrap_userwise(users, 3, rng_derive(5, ["bagging", "bootstrap"]))
    for k, s in enumerate(subsets):
        ref = train_centralized(s, sep_cfg, 0.2, 2, 8, rng_derive(5, ["bagging", "learner", k]))
        assert ens.learners[k].values.tobytes() == ref.values.tobytes()


def test_single_learner_without_bootstrap_is_centralized(sep_cfg):
    users = separable_users()
    ens = train_bagging(users, sep_cfg, 0.2, epochs=2, seed=2, n=1, batch=4, bootstrap=False)
    ref = train_centralized(users, sep_cfg, 0.2, 2, 4, rng_derive(2, ["bagging", "learner", 0]))
    assert ens.learners[0].values.tobytes() == ref.values.tobytes()


def test_shared_init_collapses_ensemble(sep_cfg):
    users = separable_users()
    ens = train_bagging(users, sep_cfg, 0.2, epochs=2, n=4, bootstrap=False, shared_init=True)
    assert len({p.values.tobytes() for p in ens.learners}) == 1
    s = users[0].samples[0]
    assert soft_vote(ens, s) == pytest.approx(predict(ens.learners[0], sep_cfg, s), abs=1e-15)


# ---------------------------------------------------------------- soft vote

def bias_only(cfg, z):
    p = init_params(cfg, np.random.default_rng(0))
    p.values[:] = 0.0
    p.view("proj.b")[:] = [0.0, z]
    return p


def test_soft_vote_is_mean_probability(sep_cfg):
    sig = lambda z: 1 / (1 + math.exp(-z))
    ens = Ensemble([bias_only(sep_cfg, -1.0), bias_only(sep_cfg, 2.0), bias_only(sep_cfg, 0.0)],
                   sep_cfg)
    s = separable_users()[0].samples[0]
    expected = (sig(-1.0) + sig(2.0) + 0.5) / 3
    assert soft_vote(ens, s) == pytest.approx(expected, abs=1e-14)
    X = ArrayData.from_samples(separable_users()[0].samples, sep_cfg).X
    np.testing.assert_allclose(soft_vote_batch(ens, X), expected, atol=1e-14)


def test_soft_vote_errors(sep_cfg):
    with pytest.raises(ConfigError):
        soft_vote(Ensemble([], sep_cfg), separable_users()[0].samples[0])


def test_ensemble_round_trip(sep_cfg):
    ens = train_bagging(separable_users(), sep_cfg, 0.1, epochs=1, n=3)
    buf = ens.to_bytes()
    back = Ensemble.from_bytes(buf, sep_cfg)
    assert back.n == 3
    for a, b in zip(ens.learners, back.learners):
        assert a.values.tobytes() == b.values.tobytes() and a.layout == b.layout
    with pytest.raises(FormatError):
        Ensemble.from_bytes(buf[:-3])
    with pytest.raises(FormatError):
        Ensemble.from_bytes(buf + b"\0")
    with pytest.raises(FormatError):
        Ensemble.from_bytes(b"\1")


# ---------------------------------------------------------------- toy comparison

def test_toy_values():
    rep = toy_vote_vs_average()
    assert rep.soft_vote_increase == pytest.approx(1.0, abs=1e-12)
    assert not rep.soft_vote_feasible and not rep.soft_vote_flips
    assert rep.logit_increase == pytest.approx(0.040005, abs=1e-5)
    assert rep.logit_increase == pytest.approx(math.log(51 / 49), rel=1e-14)
    assert rep.bias_increase == pytest.approx(100 * math.log(51 / 49), rel=1e-14)
    assert rep.average_flips


def test_toy_small_bias_does_not_flip():
    # 4.0 on one of 100 models moves the averaged logit by 0.04, short of 0.0400053
    rep = toy_vote_vs_average(check_bias=4.0)
    assert rep.checked_bias_flips is False
    expected = 1 / (1 + math.exp(-(math.log(0.49 / 0.51) + 0.04)))
    assert rep.checked_average_output == pytest.approx(expected, abs=1e-15)
    assert rep.checked_average_output == pytest.approx(0.49999867, abs=1e-8)
    assert toy_vote_vs_average(check_bias=4.001).checked_bias_flips


def test_toy_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        toy_vote_vs_average(base_output=0.6)
    with pytest.raises(ConfigError):
        toy_vote_vs_average(n_models=0)
