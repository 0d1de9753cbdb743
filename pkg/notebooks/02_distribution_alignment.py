# Aligning pseudo-labels to the labeled distribution.
#
#   python notebooks/02_distribution_alignment.py

import numpy as np

from rankup.rda import (
    PseudoLabelTable,
    RdaConfig,
    align,
    interpolate_labeled_distribution,
    maybe_refresh,
    table_update,
)

# Three labeled targets stretched to five unlabeled slots.
dist = interpolate_labeled_distribution([2.0, 5.0, 8.0], 5)
print("resampled labels:", dist.sorted_values)

# Each pseudo-label keeps its rank and takes the resampled value of that rank.
pseudo = [1.0, 9.0, 4.0, 3.0, 7.0]
print("pseudo-labels:  ", pseudo)
print("aligned:        ", align(pseudo, dist))

# Predictions that are squashed toward the mean get their spread back.
rng = np.random.default_rng(1)
labels = rng.uniform(0, 1, 40)
squashed = 0.5 + 0.1 * (rng.uniform(0, 1, 400) - 0.5)
out = align(squashed, interpolate_labeled_distribution(labels, 400))
print(f"std before {squashed.std():.3f}, after {out.std():.3f}, labeled {labels.std():.3f}")

# The table caches raw predictions and re-aligns only every T iterations.
table = PseudoLabelTable(ids=np.arange(400))
table_update(table, table.ids, squashed)
cfg = RdaConfig(refresh_period=100)
for it in range(0, 501):
    maybe_refresh(table, labels, it, cfg)
print("align calls over 500 iterations with T=100:", table.align_calls)
