# Pairwise ranking losses on a handful of scores.
#
#   python notebooks/01_pairwise_ranking.py

import numpy as np

from rankup.losses import (
    ArcLossConfig,
    arc_labeled_loss,
    arc_pair_softmax,
    arc_unlabeled_fixmatch_loss,
    pairwise_targets,
    ranknet_loss,
)

np.set_printoptions(precision=3, suppress=True)

# The ranking head emits one score per sample. A pair (i, j) becomes a
# two-class problem: class 1 is "i ranks above j".
r = np.array([0.1, 1.2, -0.4, 0.8])
y = np.array([2.0, 5.0, 1.0, 5.0])
print("P(i above j) for the first pair:", arc_pair_softmax(r[0], r[1]))

# Adding a constant to every score changes nothing.
print("shifted:", arc_pair_softmax(r[0] + 10, r[1] + 10))

# RankNet uses soft targets (0.5 on ties); the ranking classifier uses the
# hard indicator y_i > y_j, so both orders of a tie get class 0.
print("RankNet targets:\n", pairwise_targets(y))
print("RankNet loss %.4f" % ranknet_loss(r, pairwise_targets(y))[0])
loss, grad = arc_labeled_loss(r, y)
print("labeled ranking loss %.4f, grad %s" % (loss, grad))

# Unlabeled pairs count only when the weak view is confident. Raising the
# threshold can only shrink the set of kept pairs.
rng = np.random.default_rng(0)
weak = rng.normal(scale=1.5, size=32)
strong = weak + rng.normal(scale=0.3, size=32)
for tau in (0.6, 0.8, 0.95, 1.0):
    loss, _, rate = arc_unlabeled_fixmatch_loss(weak, strong, ArcLossConfig(tau=tau))
    print(f"tau={tau:<5} kept {rate:6.1%} of pairs, loss {loss:.4f}")
