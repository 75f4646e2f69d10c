"""Generate a synthetic classroom, clean it, hold out users and train FedAvg.

    python3 demos/fedavg_walkthrough.py [seed]
"""

import sys

import numpy as np

from fedlab.data import (SynthSpec, kfold_user_folds, preprocess_corpus, synth_generate,
                         user_independent_split)
from fedlab.data.types import FederatedSplit, pooled
from fedlab.evalkit import evaluate
from fedlab.fedcore import FederationConfig, run_federation
from fedlab.model import ModelConfig, predict_proba
from fedlab.numkernel import rng_derive
from fedlab.training import ArrayData

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

users = synth_generate(SynthSpec(), seed)
users, report = preprocess_corpus(users)
print(f"{report.kept_samples} clips from {len(users)} users survive cleaning "
      f"(excluded: {report.excluded})")

split = user_independent_split(users, 0.1, rng_derive(seed, ["split"]))
folds = kfold_user_folds(split.train_clients, 5, rng_derive(seed, ["folds"]))
val, train = folds[0], [u for f in folds[1:] for u in f]
print(f"{len(train)} clients, {len(val)} validation users, {len(split.test_users)} test users")

cfg = FederationConfig(rounds=20, client_lr=0.1)
model_cfg = ModelConfig.desk()


class Echo:
    def write(self, line):
        print("  " + line.strip()[:110])


params, rounds = run_federation(cfg, FederatedSplit(train, split.test_users), model_cfg, seed,
                                val_users=val, log=Echo())

test = ArrayData.from_samples(pooled(split.test_users), model_cfg)
pos = float(np.mean(np.concatenate([u.labels for u in train])))
m = evaluate(predict_proba(params, model_cfg, test.X, test.G), test.y, pos)
print(f"held-out F1 {m['f1_binary']:.3f}, chance {m['chance_f1']:.3f}, "
      f"above chance {100 * m['ac']:+.1f} points after {len(rounds)} rounds")
