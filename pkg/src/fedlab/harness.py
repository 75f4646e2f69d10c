"""Experiment specs, learning-rate search, seeded runs and report files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import soft_vote_batch, train_bagging, train_centralized
from .data import (FederatedSplit, SynthSpec, kfold_user_folds, load_dataset, pooled,
                   preprocess_corpus, synth_generate, user_independent_split)
from .errors import ConfigError
from .evalkit import METRIC_ORDER, aggregate_seeds, evaluate
from .fedcore import ALGOS, SERVER_LR_ALGOS, FederationConfig, evaluate_users, run_federation
from .model import ModelConfig, predict_proba
from .numkernel import rng_derive
from .training import ArrayData

BASELINE_ALGOS = ("centralized", "bagging")
DEFAULT_LR_GRID = tuple(float(10.0 ** e) for e in np.arange(-5.5, -0.5, 0.5))
CSV_PREFIX = ("seed", "algo", "dataset")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines an experiment's outputs.

    ``synth`` (a dict of generator fields) and ``data_dir`` are alternatives; a
    synthetic corpus is regenerated from each run seed unless ``data_seed`` pins it.
    """

    dataset: str = "synth"
    synth: dict | None = field(default_factory=dict)
    data_dir: str | None = None
    data_seed: int | None = None
    preprocess: bool = True
    drop_dark: bool = False
    model: dict = field(default_factory=lambda: ModelConfig.desk().to_dict())
    algos: tuple = ("fedavg",)
    federation: dict = field(default_factory=dict)
    lr_grid: tuple = DEFAULT_LR_GRID
    server_lr_grid: tuple = DEFAULT_LR_GRID
    grid_search: bool = True
    grid_folds: int = 5
    grid_rounds: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)
    test_frac: float = 0.1
    use_val_fold: bool = True
    central_epochs: int = 8
    central_lr: float | None = None
    bagging_epochs: int = 8
    chance_trials: int = 100_000
    out: str | None = None

    def __post_init__(self):
        for name in ("algos", "lr_grid", "server_lr_grid", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.lr_grid or not self.server_lr_grid:
            raise ConfigError("learning-rate grids must be nonempty")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be nonempty and distinct")
        if self.data_dir is not None and not self.synth:
            object.__setattr__(self, "synth", None)
        if (self.synth is None) == (self.data_dir is None):
            raise ConfigError("give exactly one of synth and data_dir")
        for a in self.algos:
            if a not in ALGOS + BASELINE_ALGOS:
                raise ConfigError(f"unknown algorithm {a!r}")
        self.model_cfg()
        self.fed_cfg(self.algos[0] if self.algos[0] in ALGOS else "fedavg")

    # -------------------------------------------------------------- accessors

    def model_cfg(self) -> ModelConfig:
        return ModelConfig(**self.model)

    def fed_cfg(self, algo: str = "fedavg", **overrides) -> FederationConfig:
        return FederationConfig(**{**self.federation, "algo": algo, **overrides})

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**(self.synth or {}))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("algos", "lr_grid", "server_lr_grid", "seeds"):
            d[k] = list(d[k])
        return d

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ data

def load_users(spec: ExperimentSpec, seed: int):
    if spec.data_dir is not None:
        users = load_dataset(spec.data_dir)
    else:
        users = synth_generate(spec.synth_spec(), seed if spec.data_seed is None else spec.data_seed)
    if spec.preprocess:
        users, _ = preprocess_corpus(users, drop_dark=spec.drop_dark)
    return users


@dataclass
class SeedData:
    split: FederatedSplit
    folds: list

    @property
    def val_users(self):
        return self.folds[0]

    def fit_split(self, use_val: bool) -> FederatedSplit:
        if not use_val:
            return self.split
        return FederatedSplit([u for f in self.folds[1:] for u in f], self.split.test_users)


def prepare_seed(spec: ExperimentSpec, seed: int) -> SeedData:
    users = load_users(spec, seed)
    split = user_independent_split(users, spec.test_frac, rng_derive(seed, ["split"]))
    folds = kfold_user_folds(split.train_clients, spec.grid_folds, rng_derive(seed, ["folds"]))
    return SeedData(split, folds)


def pos_rate(users) -> float:
    return float(np.mean(np.concatenate([u.labels for u in users])))


# ------------------------------------------------------------------ grid search

def _fold_score(spec, cfg, model_cfg, folds, seed) -> float:
    scores = []
    for j, val in enumerate(folds):
        train = [u for i, f in enumerate(folds) if i != j for u in f]
        params, _ = run_federation(cfg, FederatedSplit(train, []), model_cfg,
                                   seed, val_users=val)
        scores.append(evaluate_users(params, model_cfg, val)["f1_binary"])
    return float(np.mean(scores))


def grid_search_lr(spec: ExperimentSpec, folds, seed: int, algo: str = "fedavg",
                   client_lr: float | None = None):
    """Pick the client lr under FedAvg, then (for server-side algorithms) the server lr.

    Only fold users are ever evaluated. Ties go to the first grid point.
    Returns ``(client_lr, server_lr or None, score table)``.
    """
    if not spec.lr_grid:
        raise ConfigError("learning-rate grid is empty")
    model_cfg = spec.model_cfg()
    table = {"client": [], "server": []}
    if client_lr is None:
        if len(spec.lr_grid) == 1:
            client_lr = spec.lr_grid[0]
        else:
            best = -np.inf
            for lr in spec.lr_grid:
                cfg = spec.fed_cfg("fedavg", client_lr=lr, rounds=spec.grid_rounds)
                s = _fold_score(spec, cfg, model_cfg, folds, seed)
                table["client"].append([lr, s])
                if s > best:
                    best, client_lr = s, lr
    server_lr = None
    if algo in SERVER_LR_ALGOS:
        if len(spec.server_lr_grid) == 1:
            server_lr = spec.server_lr_grid[0]
        else:
            best = -np.inf
            for lr in spec.server_lr_grid:
                cfg = spec.fed_cfg(algo, client_lr=client_lr, server_lr=lr,
                                   rounds=spec.grid_rounds)
                s = _fold_score(spec, cfg, model_cfg, folds, seed)
                table["server"].append([lr, s])
                if s > best:
                    best, server_lr = s, lr
    return client_lr, server_lr, table


# ------------------------------------------------------------------ runs

def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def run_algo(spec: ExperimentSpec, data: SeedData, algo: str, seed: int, client_lr: float,
             server_lr: float | None, log=None):
    """Train one algorithm on one seed; returns ``(test metrics, rounds run)``."""
    model_cfg = spec.model_cfg()
    fit = data.fit_split(spec.use_val_fold)
    val = data.val_users if spec.use_val_fold else None
    test = ArrayData.from_samples(pooled(data.split.test_users), model_cfg)
    rounds = 0
    if algo == "centralized":
        lr = spec.central_lr if spec.central_lr is not None else client_lr
        params = train_centralized(data.split.train_clients, model_cfg, lr, spec.central_epochs,
                                   spec.fed_cfg().batch_size, rng_derive(seed, ["centralized"]))
        probs = predict_proba(params, model_cfg, test.X, test.G)
    elif algo == "bagging":
        lr = spec.central_lr if spec.central_lr is not None else client_lr
        ens = train_bagging(data.split.train_clients, model_cfg, lr, spec.bagging_epochs, seed)
        probs = soft_vote_batch(ens, test.X, test.G)
    else:
        over = {"client_lr": client_lr}
        if server_lr is not None:
            over["server_lr"] = server_lr
        params, reports = run_federation(spec.fed_cfg(algo, **over), fit, model_cfg, seed,
                                         val_users=val, log=log)
        rounds = len(reports)
        probs = predict_proba(params, model_cfg, test.X, test.G)
    metrics = evaluate(probs, test.y, pos_rate(data.split.train_clients),
                       chance_trials=spec.chance_trials, rng=rng_derive(seed, ["chance"]))
    return metrics, rounds


def run_experiment(spec: ExperimentSpec, out: str | Path | None = None, progress=None):
    """Every seed and algorithm of ``spec``; writes records, summary and reports under ``out``.

    Returns ``(records, summary)``. A failing stage is recorded with its tag and
    the remaining work continues.
    """
    out = Path(out or spec.out or "fedlab-out")
    digest = spec.digest()
    records, timings = [], []
    for seed in spec.seeds:
        try:
            data = prepare_seed(spec, seed)
        except Exception as exc:
            records.append({"digest": digest, "seed": seed, "algo": None,
                            "dataset": spec.dataset, "stage": "data", "error": str(exc)})
            continue
        client_lr = None if spec.grid_search else spec.fed_cfg().client_lr
        for algo in spec.algos:
            rec = {"digest": digest, "seed": seed, "algo": algo, "dataset": spec.dataset}
            t0 = time.perf_counter()
            stage = "grid_search"
            try:
                server_lr = None
                if spec.grid_search:
                    client_lr, server_lr, table = grid_search_lr(
                        spec, data.folds, seed, algo if algo in ALGOS else "fedavg", client_lr)
                    rec["grid"] = table
                elif algo in SERVER_LR_ALGOS:
                    server_lr = spec.fed_cfg().server_lr
                stage = "train"
                log = io.StringIO()
                metrics, rounds = run_algo(spec, data, algo, seed, client_lr, server_lr, log)
                if log.getvalue():
                    atomic_write(out / "rounds" / f"{algo}_seed{seed}.jsonl", log.getvalue())
                rec.update(client_lr=client_lr, server_lr=server_lr, rounds=rounds,
                           metrics=metrics)
            except Exception as exc:
                rec.update(stage=stage, error=f"{type(exc).__name__}: {exc}")
            timings.append({"seed": seed, "algo": algo,
                            "seconds": round(time.perf_counter() - t0, 3)})
            records.append(rec)
            if progress:
                progress(rec)
            atomic_write(out / "records.json", json.dumps(records, indent=1, sort_keys=True))
    summary = summarize(records)
    atomic_write(out / "spec.json", json.dumps(spec.to_dict(), indent=1, sort_keys=True))
    atomic_write(out / "summary.json", json.dumps(summary, indent=1, sort_keys=True))
    atomic_write(out / "timings.json", json.dumps(timings, indent=1))
    emit_report(records, out)
    return records, summary


def summarize(records) -> dict:
    """Mean and sample std per (algo, dataset) over the successful seeds."""
    groups = {}
    for r in records:
        if "metrics" in r:
            groups.setdefault(f"{r['algo']}|{r['dataset']}", []).append(r["metrics"])
    return {k: aggregate_seeds(v).to_dict() for k, v in sorted(groups.items())}


# ------------------------------------------------------------------ reports

def format_cell(values) -> str:
    """Percent, one decimal, ``mean±std`` (std left out for a single value)."""
    vals = [v for v in values if v is not None]
    if not vals:
        return ""
    mean = 100.0 * float(np.mean(vals))
    if len(vals) < 2:
        return f"{mean:.1f}"
    return f"{mean:.1f}±{100.0 * float(np.std(vals, ddof=1)):.1f}"


_CELL = re.compile(r"^(-?\d+(?:\.\d+)?)(?:±(\d+(?:\.\d+)?))?$")


def parse_cell(cell: str):
    """Inverse of ``format_cell``: ``(mean, std or None)`` in percent, or None if empty."""
    if cell == "":
        return None
    m = _CELL.match(cell)
    if not m:
        raise ConfigError(f"not a report cell: {cell!r}")
    return float(m.group(1)), (float(m.group(2)) if m.group(2) else None)


def emit_report(records, out) -> dict:
    """Write ``report.csv`` (mean±std rows), ``per_seed.csv`` and ``report.json``."""
    out = Path(out)
    ok = [r for r in records if "metrics" in r]
    groups = {}
    for r in ok:
        groups.setdefault((r["algo"], r["dataset"]), []).append(r)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("algo", "dataset") + METRIC_ORDER)
    table = {}
    for (algo, ds), rs in groups.items():
        cells = [format_cell([r["metrics"].get(m) for r in rs]) for m in METRIC_ORDER]
        w.writerow((algo, ds, *cells))
        table[f"{algo}|{ds}"] = dict(zip(METRIC_ORDER, cells))
    atomic_write(out / "report.csv", buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_PREFIX + METRIC_ORDER)
    for r in ok:
        w.writerow((r["seed"], r["algo"], r["dataset"],
                    *("" if r["metrics"].get(m) is None else repr(r["metrics"][m])
                      for m in METRIC_ORDER)))
    atomic_write(out / "per_seed.csv", buf.getvalue())

    raw = {"cells": table, "summary": summarize(records),
           "failures": [r for r in records if "error" in r]}
    atomic_write(out / "report.json", json.dumps(raw, indent=1, sort_keys=True))
    return table


def with_overrides(spec: ExperimentSpec, **fed) -> ExperimentSpec:
    """Copy of ``spec`` with federation fields replaced (None values ignored)."""
    fed = {k: v for k, v in fed.items() if v is not None}
    if not fed:
        return spec
    return replace(spec, federation={**spec.federation, **fed})
