# Supervised vs RankUp on the 1-d sine task.
#
#   python notebooks/03_sine_experiment.py [total_iters]
#
# The default of 3000 iterations takes about a minute. The acceptance suite
# runs the full 20000.

import sys

from rankup.data import DataSpec
from rankup.trainer import TrainConfig, run_protocol

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
spec = DataSpec(n_labeled=50, task="sine", n_samples=5000, noise_sigma=0.1)

print(f"{'method':<18}{'MAE':>8}{'R2':>8}{'SRCC':>8}   per-seed MAE")
for method in ("supervised", "rankup", "rankup_rda", "fully_supervised"):
    rep = run_protocol(TrainConfig(method=method, total_iters=iters, eval_every=iters), spec)
    seeds = ", ".join(f"{r['mae']:.3f}" for r in rep.per_seed)
    print(f"{method:<18}{rep.mean['mae']:8.3f}{rep.mean['r2']:8.3f}{rep.mean['srcc']:8.3f}   {seeds}")

# With the default initialization some seeds sit at a near-constant fit for
# thousands of iterations, which is why the per-seed spread is large.
