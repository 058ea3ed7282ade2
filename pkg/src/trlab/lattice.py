"""Transducer alignment lattice: exact loss, gradient and a brute-force oracle.

A lattice holds log-probabilities ``values[t, u, k]`` for encoder frame ``t``,
``u`` labels already emitted and output symbol ``k``. Symbols ``0..V-1`` are
labels; the blank lives at index ``V`` (the last column).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_ENUMERATION_LENGTH = 24


class LatticeError(ValueError):
    """Raised for malformed lattices or targets."""


@dataclass
class LogitsLattice:
    """Dense ``(T, U+1, V+1)`` log-probability lattice paired with its target."""

    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.values.ndim != 3:
            raise LatticeError(f"lattice must be rank 3, got shape {self.values.shape}")
        T, U1, K = self.values.shape
        if T < 1:
            raise LatticeError("lattice needs at least one frame")
        if U1 != len(self.labels) + 1:
            raise LatticeError(
                f"lattice has {U1} label positions but target has {len(self.labels)} labels"
            )
        if K < 2:
            raise LatticeError("need at least one label plus blank")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= K - 1):
            raise LatticeError("label id out of range (blank may not appear in the target)")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def blank(self) -> int:
        return self.values.shape[2] - 1

    def blank_scores(self) -> np.ndarray:
        """``(T, U+1)`` log-prob of blank at every node."""
        return self.values[:, :, self.blank]

    def emit_scores(self) -> np.ndarray:
        """``(T, U)`` log-prob of emitting the next target label at node ``(t, u)``."""
        U = self.num_labels
        return self.values[:, np.arange(U), self.labels]


@dataclass
class LossResult:
    negative_log_likelihood: float
    gradient: np.ndarray


def log_softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    m = np.max(scores, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = scores - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def check_normalized(lattice: LogitsLattice, atol: float = 1e-6) -> None:
    totals = np.logaddexp.reduce(lattice.values, axis=2)
    if not np.all(np.abs(totals) <= atol):
        worst = float(np.max(np.abs(totals)))
        raise LatticeError(f"lattice is not log-normalized (max |logsumexp| = {worst:.3g})")


def _alphas(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    # anti-diagonal sweep; every node on diagonal n = t + u depends only on diagonal n - 1
    T, U1 = blank.shape
    alpha = np.full((T, U1), -np.inf)
    alpha[0, 0] = 0.0
    for n in range(1, T + U1 - 1):
        u = np.arange(max(0, n - T + 1), min(n, U1 - 1) + 1)
        t = n - u
        from_blank = np.full(len(u), -np.inf)
        ok = t > 0
        from_blank[ok] = alpha[t[ok] - 1, u[ok]] + blank[t[ok] - 1, u[ok]]
        from_emit = np.full(len(u), -np.inf)
        ok = u > 0
        from_emit[ok] = alpha[t[ok], u[ok] - 1] + emit[t[ok], u[ok] - 1]
        alpha[t, u] = np.logaddexp(from_blank, from_emit)
    return alpha


def _betas(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, U1 = blank.shape
    beta = np.full((T, U1), -np.inf)
    beta[T - 1, U1 - 1] = blank[T - 1, U1 - 1]
    for n in range(T + U1 - 3, -1, -1):
        u = np.arange(max(0, n - T + 1), min(n, U1 - 1) + 1)
        t = n - u
        to_blank = np.full(len(u), -np.inf)
        ok = t < T - 1
        to_blank[ok] = beta[t[ok] + 1, u[ok]] + blank[t[ok], u[ok]]
        to_emit = np.full(len(u), -np.inf)
        ok = u < U1 - 1
        to_emit[ok] = beta[t[ok], u[ok] + 1] + emit[t[ok], u[ok]]
        beta[t, u] = np.logaddexp(to_blank, to_emit)
    return beta


def rnnt_forward(lattice: LogitsLattice, debug: bool = False) -> float:
    """Return ``log P(y|x)`` by the forward recursion over the lattice."""
    if debug:
        check_normalized(lattice)
    blank = lattice.blank_scores()
    alpha = _alphas(blank, lattice.emit_scores())
    return float(alpha[-1, -1] + blank[-1, -1])


def rnnt_loss_and_grad(lattice: LogitsLattice, debug: bool = False) -> LossResult:
    """Negative log-likelihood and its gradient w.r.t. each lattice entry.

    Entries are treated as free log-probabilities. Nodes that no complete path
    visits get a zero gradient. When ``log P(y|x) = -inf`` the loss is ``inf``
    and the gradient is all zeros.
    """
    if debug:
        check_normalized(lattice)
    values = lattice.values
    T, U1, _ = values.shape
    U = U1 - 1
    blank = lattice.blank_scores()
    emit = lattice.emit_scores()
    alpha = _alphas(blank, emit)
    beta = _betas(blank, emit)
    log_p = alpha[-1, -1] + blank[-1, -1]
    grad = np.zeros_like(values)
    if not np.isfinite(log_p):
        return LossResult(math.inf, grad)

    # beta one frame ahead; the terminal blank at (T-1, U) completes the path
    beta_next = np.full((T, U1), -np.inf)
    beta_next[:-1] = beta[1:]
    beta_next[-1, -1] = 0.0
    with np.errstate(invalid="ignore"):
        g_blank = -np.exp(alpha + blank + beta_next - log_p)
        grad[:, :, lattice.blank] = np.nan_to_num(g_blank, nan=0.0)
        if U:
            g_emit = -np.exp(alpha[:, :U] + emit + beta[:, 1:] - log_p)
            tt, uu = np.meshgrid(np.arange(T), np.arange(U), indexing="ij")
            grad[tt, uu, lattice.labels[uu]] = np.nan_to_num(g_emit, nan=0.0)
    return LossResult(float(-log_p), grad)


def rnnt_loss_from_scores(scores: np.ndarray, labels) -> LossResult:
    """Loss with log-softmax fused in; gradient is w.r.t. the raw joint scores."""
    log_probs = log_softmax(scores)
    result = rnnt_loss_and_grad(LogitsLattice(log_probs, labels))
    g = result.gradient
    grad = g - np.exp(log_probs) * g.sum(axis=-1, keepdims=True)
    return LossResult(result.negative_log_likelihood, grad)


def enumerate_alignments(T: int, U: int) -> list[tuple[bool, ...]]:
    """All interleavings of ``T`` blanks and ``U`` labels.

    Each pattern is a tuple of length ``T + U`` with ``True`` marking a label
    position. Label identities are implied by order (the i-th ``True`` is
    ``y_i``).
    """
    if T < 1 or U < 0:
        raise LatticeError("need T >= 1 and U >= 0")
    if T + U > MAX_ENUMERATION_LENGTH:
        raise LatticeError(f"T + U = {T + U} exceeds enumeration guard {MAX_ENUMERATION_LENGTH}")
    paths = []
    for positions in itertools.combinations(range(T + U), U):
        pattern = [False] * (T + U)
        for p in positions:
            pattern[p] = True
        paths.append(tuple(pattern))
    return paths


def alignment_symbols(pattern, labels, blank: int) -> list[int]:
    """Expand a blank/label pattern into the symbol sequence it spells."""
    it = iter(labels)
    return [int(next(it)) if is_label else blank for is_label in pattern]


def path_log_prob(lattice: LogitsLattice, pattern) -> float:
    """Log-probability of one alignment, walking the lattice from ``(0, 0)``.

    A label emitted after the last frame's blank leaves the lattice, so such
    patterns score ``-inf``.
    """
    values = lattice.values
    T = lattice.num_frames
    t = u = 0
    total = 0.0
    for is_label in pattern:
        if t >= T:
            return -math.inf
        if is_label:
            total += values[t, u, lattice.labels[u]]
            u += 1
        else:
            total += values[t, u, lattice.blank]
            t += 1
    return total


def brute_force_log_prob(lattice: LogitsLattice) -> float:
    """``log P(y|x)`` as a log-sum over every enumerated alignment."""
    scores = [path_log_prob(lattice, p)
              for p in enumerate_alignments(lattice.num_frames, lattice.num_labels)]
    return float(np.logaddexp.reduce(np.array(scores)))
