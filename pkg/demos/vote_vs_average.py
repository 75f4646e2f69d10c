"""Why one participant moves an averaged model more easily than a soft-vote ensemble.

A hundred single-neuron models all output 0.49. To push the soft vote to 0.5, one
model would have to raise its output by a full 1.0, which no probability can do.
Averaging parameters instead only needs one model's bias to grow by 100 times the
logit gap.
"""

import math

from fedlab.baselines import toy_vote_vs_average

rep = toy_vote_vs_average(100, 0.49, 0.5)
print(f"soft vote: one learner must rise by {rep.soft_vote_increase:.3f} "
      f"(feasible: {rep.soft_vote_feasible})")
print(f"logit gap: {rep.logit_increase:.6f}, so the bias must grow by {rep.bias_increase:.4f}")

for bump in (3.9, 4.0, rep.bias_increase, 4.1):
    r = toy_vote_vs_average(100, 0.49, 0.5, check_bias=bump)
    print(f"  bias +{bump:.6f}: averaged output {r.checked_average_output:.8f} "
          f"-> {'positive' if r.checked_bias_flips else 'negative'}")

print(f"(exact threshold: 100 * log(51/49) = {100 * math.log(51 / 49):.6f})")
