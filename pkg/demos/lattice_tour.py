"""A walk through the transducer lattice on a problem small enough to enumerate.

Run: python demos/lattice_tour.py
"""

import numpy as np

from trlab.lattice import (LogitsLattice, alignment_symbols, brute_force_log_prob,
                           enumerate_alignments, log_softmax, path_log_prob, rnnt_forward,
                           rnnt_loss_and_grad, rnnt_loss_from_scores)

rng = np.random.default_rng(0)
T, U, V = 3, 2, 2
labels = np.array([1, 0])
scores = rng.normal(size=(T, U + 1, V + 1))  # raw joint outputs
lattice = LogitsLattice(log_softmax(scores), labels)
blank = V

# Every way of interleaving T blanks with the U labels is one alignment.
# A label emitted after the final blank would leave the lattice: log p = -inf.
print(f"T={T} frames, target {labels.tolist()}, blank id {blank}")
for pattern in enumerate_alignments(T, U):
    symbols = alignment_symbols(pattern, labels, blank)
    print(f"  {symbols}  log p = {path_log_prob(lattice, pattern):8.4f}")

# The forward recursion sums those paths without listing them.
print(f"\nforward recursion   log P(y|x) = {rnnt_forward(lattice):.12f}")
print(f"sum over alignments log P(y|x) = {brute_force_log_prob(lattice):.12f}")

# Gradient of the loss with respect to the log-probabilities, checked at one entry.
res = rnnt_loss_and_grad(lattice)
idx = (1, 1, blank)
eps = 1e-5
bumped = [lattice.values.copy() for _ in range(2)]
bumped[0][idx] += eps
bumped[1][idx] -= eps
fd = -(rnnt_forward(LogitsLattice(bumped[0], labels))
       - rnnt_forward(LogitsLattice(bumped[1], labels))) / (2 * eps)
print(f"\nloss {res.negative_log_likelihood:.6f}")
print(f"d loss / d log p{idx}: analytic {res.gradient[idx]:.8f}, finite difference {fd:.8f}")
# Through the softmax, each node's gradient over the vocabulary sums to zero.
fused = rnnt_loss_from_scores(scores, labels)
print(f"max |sum over vocabulary of d loss / d score| = {np.abs(fused.gradient.sum(-1)).max():.1e}")
