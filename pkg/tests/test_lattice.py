import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trlab.lattice import (LatticeError, LogitsLattice, brute_force_log_prob, enumerate_alignments,
                           log_softmax, path_log_prob, rnnt_forward, rnnt_loss_and_grad,
                           rnnt_loss_from_scores)

from conftest import random_lattice, random_scores


def uniform_lattice(T, U, V):
    return LogitsLattice(np.full((T, U + 1, V + 1), -math.log(V + 1)), np.zeros(U, dtype=int))


def test_single_forced_path():
    lat = LogitsLattice(np.log([[[0.5, 0.5]]]), [])
    assert rnnt_forward(lat) == pytest.approx(math.log(0.5))
    assert brute_force_log_prob(lat) == pytest.approx(math.log(0.5))


def test_uniform_two_frames_one_label():
    # only the two interleavings ending in the terminal blank stay on the lattice
    lat = uniform_lattice(2, 1, 1)
    assert rnnt_forward(lat) == pytest.approx(math.log(2 / 8), abs=1e-12)
    assert brute_force_log_prob(lat) == pytest.approx(math.log(2 / 8), abs=1e-12)


def test_random_lattice_matches_enumeration(rng):
    lat = random_lattice(rng, 3, 2, 2)
    assert abs(rnnt_forward(lat) - brute_force_log_prob(lat)) < 1e-10


def test_shape_mismatch_rejected():
    with pytest.raises(LatticeError):
        LogitsLattice(np.zeros((2, 3, 3)), [0])
    with pytest.raises(LatticeError):
        LogitsLattice(np.zeros((2, 2, 3)), [2])  # label id collides with blank


def test_debug_flag_checks_normalization():
    lat = LogitsLattice(np.zeros((2, 2, 3)), [1])
    rnnt_forward(lat)
    with pytest.raises(LatticeError):
        rnnt_forward(lat, debug=True)


def test_enumeration_counts():
    assert enumerate_alignments(1, 0) == [(False,)]
    assert len(enumerate_alignments(2, 1)) == 3
    paths = enumerate_alignments(3, 2)
    assert len(paths) == 10
    assert len(set(paths)) == 10
    assert all(sum(not x for x in p) == 3 for p in paths)
    with pytest.raises(LatticeError):
        enumerate_alignments(20, 5)


def test_no_label_emission_possible():
    rng = np.random.default_rng(3)
    lat = random_lattice(rng, 3, 2, 2)
    vals = lat.values.copy()
    for u, y in enumerate(lat.labels):
        vals[:, u, y] = -np.inf
    lat = LogitsLattice(vals, lat.labels)
    assert brute_force_log_prob(lat) == -np.inf
    assert rnnt_forward(lat) == -np.inf
    res = rnnt_loss_and_grad(lat)
    assert res.negative_log_likelihood == math.inf
    assert not res.gradient.any()


def test_off_lattice_alignment_scores_zero_probability():
    lat = uniform_lattice(2, 1, 1)
    assert path_log_prob(lat, (False, False, True)) == -math.inf


def test_gradient_single_path():
    lat = LogitsLattice(np.log([[[0.5, 0.5]]]), [])
    g = rnnt_loss_and_grad(lat).gradient
    np.testing.assert_array_equal(g, [[[0.0, -1.0]]])


def test_gradient_path_exchange_symmetry():
    # paths (y, b, b) and (b, y, b) are mirror images: blank at (0,0) <-> blank at (0,1),
    # label at (0,0) <-> label at (1,0)
    g = rnnt_loss_and_grad(uniform_lattice(2, 1, 1)).gradient
    assert g[0, 0, 1] == pytest.approx(g[0, 1, 1])
    assert g[0, 0, 0] == pytest.approx(g[1, 0, 0])
    assert g[1, 1, 1] == pytest.approx(-1.0)
    assert g[1, 1, 0] == 0.0  # unreachable emission after all labels


def _rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale < 1e-8, np.abs(a - b), np.abs(a - b) / np.maximum(scale, 1e-300))


def fd_grad_log_probs(lat, eps=1e-5):
    out = np.zeros_like(lat.values)
    for idx in np.ndindex(lat.values.shape):
        v = lat.values.copy()
        v[idx] += eps
        plus = -rnnt_forward(LogitsLattice(v, lat.labels))
        v[idx] -= 2 * eps
        minus = -rnnt_forward(LogitsLattice(v, lat.labels))
        out[idx] = (plus - minus) / (2 * eps)
    return out


def fd_grad_scores(scores, labels, eps=1e-5):
    out = np.zeros_like(scores)
    for idx in np.ndindex(scores.shape):
        s = scores.copy()
        s[idx] += eps
        plus = -rnnt_forward(LogitsLattice(log_softmax(s), labels))
        s[idx] -= 2 * eps
        minus = -rnnt_forward(LogitsLattice(log_softmax(s), labels))
        out[idx] = (plus - minus) / (2 * eps)
    return out


@pytest.mark.parametrize("T,U,V", [(1, 0, 1), (2, 1, 1), (3, 2, 2), (4, 3, 3)])
def test_gradient_wrt_log_probs_matches_finite_differences(rng, T, U, V):
    lat = random_lattice(rng, T, U, V)
    g = rnnt_loss_and_grad(lat).gradient
    assert np.all(_rel_err(g, fd_grad_log_probs(lat)) < 1e-4)


@pytest.mark.parametrize("T,U,V", [(2, 1, 1), (3, 2, 2), (4, 2, 3)])
def test_gradient_wrt_scores_matches_finite_differences(rng, T, U, V):
    scores, labels = random_scores(rng, T, U, V)
    res = rnnt_loss_from_scores(scores, labels)
    assert res.negative_log_likelihood == pytest.approx(
        -rnnt_forward(LogitsLattice(log_softmax(scores), labels)))
    assert np.all(_rel_err(res.gradient, fd_grad_scores(scores, labels)) < 1e-4)


def test_single_certain_path_has_zero_loss():
    vals = np.full((2, 2, 3), -np.inf)
    vals[0, 0, 1] = 0.0  # emit label 1 at frame 0
    vals[0, 1, 2] = 0.0  # blank
    vals[1, 1, 2] = 0.0  # terminal blank
    vals[1, 0, 0] = 0.0
    lat = LogitsLattice(vals, [1])
    assert rnnt_forward(lat) == 0.0


@settings(max_examples=150, deadline=None)
@given(T=st.integers(1, 4), U=st.integers(0, 3), V=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_forward_equals_enumeration(T, U, V, seed):
    lat = random_lattice(np.random.default_rng(seed), T, U, V)
    fwd = rnnt_forward(lat)
    assert abs(fwd - brute_force_log_prob(lat)) < 1e-9
    assert fwd <= 1e-12


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 4), U=st.integers(0, 3), V=st.integers(2, 4), seed=st.integers(0, 2**32 - 1))
def test_relabeling_invariance(T, U, V, seed):
    rng = np.random.default_rng(seed)
    lat = random_lattice(rng, T, U, V)
    perm = rng.permutation(V)
    vals = lat.values.copy()
    vals[:, :, perm] = lat.values[:, :, :V]  # label k becomes perm[k]
    relabeled = LogitsLattice(vals, perm[lat.labels])
    assert rnnt_forward(relabeled) == pytest.approx(rnnt_forward(lat), abs=1e-12)
