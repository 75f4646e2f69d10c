"""Every aggregation rule and both baselines on a reduced corpus, two seeds.

    python3 demos/compare_algorithms.py [out_dir]

Writes records.json, report.csv and per-round logs under out_dir.
"""

import sys

from fedlab.harness import ExperimentSpec, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "demo-out"
spec = ExperimentSpec(
    synth=dict(n_users=40),
    algos=("fedavg", "fedadam", "fedaws", "fedprox", "moon", "turbosvm", "centralized",
           "bagging"),
    grid_search=False,
    seeds=(0, 1),
    federation=dict(rounds=8, client_lr=0.1, server_lr=0.01, local_epochs=2),
    central_lr=0.05,
    central_epochs=4,
    bagging_epochs=2,
    chance_trials=20_000,
)


def progress(rec):
    if "error" in rec:
        print(f"seed {rec['seed']} {rec['algo']}: failed at {rec['stage']}: {rec['error']}")
    else:
        m = rec["metrics"]
        print(f"seed {rec['seed']} {rec['algo']:<11} F1 {m['f1_binary']:.3f}  "
              f"AC {100 * m['ac']:+5.1f}  AUC {m['auc'] or float('nan'):.3f}")


run_experiment(spec, out, progress)
print(open(f"{out}/report.csv", encoding="utf-8").read())
