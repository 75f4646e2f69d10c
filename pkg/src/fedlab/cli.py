"""``fedlab`` command line."""

from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import toy_vote_vs_average
from .data import SynthSpec, load_dataset, preprocess_corpus, save_dataset, synth_generate
from .errors import FedlabError
from .fedcore import SERVER_LR_ALGOS
from .harness import (ExperimentSpec, atomic_write, emit_report, prepare_seed, run_algo,
                      run_experiment, summarize, with_overrides)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", help="fedavg, fedadam, fedaws, fedprox, moon, turbosvm, "
                                  "centralized or bagging")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--participation", type=float)
    p.add_argument("--local-epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--client-lr", type=float)
    p.add_argument("--server-lr", type=float)
    p.add_argument("--config", help="experiment JSON; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="FDS dataset directory (default: synthetic corpus)")


def _spec_from_args(args) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.config) if args.config else ExperimentSpec()
    if args.data:
        spec = replace(spec, data_dir=args.data, synth=None, dataset=Path(args.data).name)
    if args.algo:
        spec = replace(spec, algos=tuple(args.algo.split(",")))
    if args.seed is not None:
        spec = replace(spec, seeds=(args.seed,))
    if args.client_lr is not None:
        spec = replace(spec, lr_grid=(args.client_lr,))
    if args.server_lr is not None:
        spec = replace(spec, server_lr_grid=(args.server_lr,))
    if args.out:
        spec = replace(spec, out=args.out)
    return with_overrides(spec, rounds=args.rounds, participation=args.participation,
                          local_epochs=args.local_epochs, batch_size=args.batch,
                          client_lr=args.client_lr, server_lr=args.server_lr)


def cmd_synth(args) -> int:
    spec = SynthSpec(**json.loads(Path(args.config).read_text())) if args.config else SynthSpec()
    if args.users is not None:
        spec = replace(spec, n_users=args.users)
    users = synth_generate(spec, args.seed)
    save_dataset(users, args.out)
    n = sum(len(u) for u in users)
    print(f"wrote {len(users)} users, {n} samples to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    users = load_dataset(args.data)
    kept, report = preprocess_corpus(users, drop_dark=args.drop_dark)
    save_dataset(kept, args.out)
    atomic_write(Path(args.out) / "preprocess_report.json",
                 json.dumps(report.to_dict(), indent=1, sort_keys=True))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    seed = spec.seeds[0]
    algo = spec.algos[0]
    out = Path(spec.out or "fedlab-train")
    data = prepare_seed(spec, seed)
    fed = spec.fed_cfg()
    client_lr = args.client_lr if args.client_lr is not None else fed.client_lr
    server_lr = None
    if algo in SERVER_LR_ALGOS:
        server_lr = args.server_lr if args.server_lr is not None else fed.server_lr
    log = io.StringIO()
    metrics, rounds = run_algo(spec, data, algo, seed, client_lr, server_lr, log)
    if log.getvalue():
        atomic_write(out / "rounds.jsonl", log.getvalue())
    result = {"algo": algo, "seed": seed, "client_lr": client_lr, "server_lr": server_lr,
              "rounds": rounds, "metrics": metrics}
    atomic_write(out / "metrics.json", json.dumps(result, indent=1, sort_keys=True))
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    spec = _spec_from_args(args)

    def progress(rec):
        status = rec.get("error") or f"f1={rec['metrics']['f1_binary']:.3f}"
        print(f"seed {rec['seed']} {rec['algo']}: {status}", file=sys.stderr)

    records, summary = run_experiment(spec, progress=progress)
    print(json.dumps(summary, sort_keys=True))
    return 1 if any("error" in r for r in records) else 0


def cmd_report(args) -> int:
    records = json.loads(Path(args.records).read_text())
    table = emit_report(records, args.out or Path(args.records).parent)
    for key, cells in table.items():
        print(key, " ".join(f"{m}={v}" for m, v in cells.items()))
    if not summarize(records):
        print("no successful records", file=sys.stderr)
        return 1
    return 0


def cmd_toy(args) -> int:
    rep = toy_vote_vs_average(args.n_models, args.base, args.threshold, args.check_bias)
    checks = [
        ("soft vote needs one learner to rise by n*(threshold-base)",
         abs(rep.soft_vote_increase - rep.n_models * (rep.threshold - rep.base_output)) < 1e-12),
        ("that rise leaves the [0, 1] output range", not rep.soft_vote_feasible),
        ("soft vote cannot flip even with one learner at 1.0", not rep.soft_vote_flips),
        ("bias bump n*logit gap flips the averaged model", rep.average_flips),
    ]
    if rep.checked_bias is not None:
        checks.append((f"bias bump {rep.checked_bias} flips the averaged model",
                       bool(rep.checked_bias_flips)))
    print(json.dumps(rep.to_dict(), indent=1))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 0 if all(ok for _, ok in checks) else 1


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.configs, args.seed if args.seed is not None else 0)
    for r in results:
        c = r.cfg
        shape = (f"mlp T={c.seq_len} F={c.feat_dim} hidden={c.mlp_hidden}" if c.arch == "mlp" else
                 f"bilstm T={c.seq_len} F={c.feat_dim} H={c.hidden} L={c.lstm_layers} "
                 f"glass={c.glass_dim if c.glass_fusion else 0}")
        print(f"{'PASS' if r.ok(args.tol) else 'FAIL'}  {shape}  params={r.n_params}  "
              f"max_rel_err={r.max_rel_error:.3e}")
    return 0 if all(r.ok(args.tol) for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedlab", description="Federated learner-state lab")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic FDS dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int)
    p.add_argument("--config", help="JSON of generator fields")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("preprocess", help="apply the clip and user exclusion rules")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop-dark", action="store_true", help="also drop low-illumination clips")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="one algorithm, one seed")
    _common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("experiment", help="grid search and every seed and algorithm")
    _common(p)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("report", help="render report files from records.json")
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("toy", help="soft vote versus parameter averaging")
    p.add_argument("--n-models", type=int, default=100)
    p.add_argument("--base", type=float, default=0.49)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--check-bias", type=float, default=4.0)
    p.set_defaults(fn=cmd_toy)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FedlabError as exc:
        print(f"fedlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
