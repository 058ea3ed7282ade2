import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trlab.corpus import TaskConfig, concat_utterances, generate_corpus
from trlab.decoding import BeamConfig, Hypothesis, beam_search
from trlab.model import init_params
from trlab.overlap import (AlignedToken, MergeConfig, SegmentationConfig, decoded_frame_count,
                           doi_decode, fixed_overlap_config, fixed_overlap_decode, merge_pair,
                           overlapping_decode, segment_features, segment_starts)

from conftest import tiny_config


def tok(label, frame):
    return AlignedToken(label, frame)


def test_single_window_when_input_fits():
    segs = segment_features(np.zeros((100, 2)), SegmentationConfig(100, 20))
    assert [(s.global_start_frame, s.num_frames) for s in segs] == [(0, 100)]


def test_two_windows_cover_input():
    segs = segment_features(np.zeros((160, 2)), SegmentationConfig(100, 20))
    assert [s.global_start_frame for s in segs] == [0, 80]
    assert [s.num_frames for s in segs] == [100, 80]


@settings(max_examples=200, deadline=None)
@given(T=st.integers(1, 2000), W=st.integers(2, 300), data=st.data())
def test_segments_cover_every_frame(T, W, data):
    o = data.draw(st.integers(1, W - 1))
    cfg = SegmentationConfig(W, o)
    starts = segment_starts(T, cfg)
    covered = np.zeros(T, dtype=bool)
    for s in starts:
        covered[s:s + W] = True
    assert covered.all()
    assert starts[-1] + W >= T and (len(starts) == 1 or starts[-2] + W < T)
    assert decoded_frame_count(T, cfg) == sum(min(W, T - s) for s in starts)


def test_invalid_segmentation_rejected():
    for W, o in [(10, 0), (10, 10), (10, 12)]:
        with pytest.raises(ValueError):
            SegmentationConfig(W, o)


def test_hand_built_disagreement_goes_to_central_window():
    # left window [0,100), centre 50; right window [85,185), centre 135; overlap [85,100)
    left = [tok(3, 20), tok(1, 90), tok(2, 95)]
    right = [tok(1, 91), tok(4, 96), tok(5, 150)]
    merged = merge_pair(left, right, (85, 100), (50.0, 135.0), MergeConfig(3))
    # 1 agrees; 2 vs 4 substitute at frames 95/96, right's confidence there is higher
    assert merged == [tok(3, 20), tok(1, 90), tok(4, 96), tok(5, 150)]


def test_unpaired_token_kept_only_by_more_confident_window():
    # a left-only token near the left edge of the overlap is trusted, one near the right edge is not
    near_left = merge_pair([tok(7, 86)], [], (85, 100), (50.0, 135.0), MergeConfig(3))
    near_right = merge_pair([tok(7, 99)], [], (85, 100), (50.0, 135.0), MergeConfig(3))
    assert near_left == [tok(7, 86)] and near_right == []
    assert merge_pair([], [tok(7, 99)], (85, 100), (50.0, 135.0), MergeConfig(3)) == [tok(7, 99)]


def test_merge_rejects_unsorted_input():
    with pytest.raises(ValueError):
        merge_pair([tok(1, 10), tok(2, 5)], [], (0, 20), (0.0, 20.0))


def _agreeing_pair(rng, tau):
    """Left/right token lists that agree exactly on the overlap, up to frame jitter <= tau."""
    start, end = 100, 100 + int(rng.integers(5, 60))
    frames = np.sort(rng.choice(np.arange(0, end + 100), size=int(rng.integers(0, 25)),
                                replace=False))
    labels = rng.integers(0, 5, size=len(frames))
    left, right, truth = [], [], []
    for f, y in zip(frames, labels):
        truth.append(tok(int(y), int(f)))
        if f < end:
            left.append(tok(int(y), int(f)))
        if f >= start:
            jitter = int(rng.integers(-tau, tau + 1)) if start + tau <= f < end - tau else 0
            right.append(tok(int(y), int(f) + jitter))
    r_frames = [t.global_frame for t in right]
    if any(b <= a for a, b in zip(r_frames, r_frames[1:])):
        return None  # jitter reordered or collided tokens; draw again
    return left, right, truth, (start, end)


def test_merge_randomized_invariants():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        tau = int(rng.integers(0, 3))
        case = _agreeing_pair(rng, tau)
        if case is None:
            continue
        left, right, truth, span = case
        centers = (span[1] - 100.0, span[0] + 100.0)
        merged = merge_pair(left, right, span, centers, MergeConfig(tau))
        frames = [t.global_frame for t in merged]
        assert frames == sorted(frames)  # monotone
        assert [t.label for t in merged] == [t.label for t in truth]  # idempotent on agreement
        checked += 1


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 200)), max_size=12),
       st.lists(st.tuples(st.integers(0, 3), st.integers(0, 200)), max_size=12),
       st.integers(0, 10))
def test_merge_output_is_sorted_and_drawn_from_inputs(a, b, tau):
    left = sorted((tok(y, f) for y, f in a), key=lambda t: t.global_frame)
    right = sorted((tok(y, f) for y, f in b), key=lambda t: t.global_frame)
    merged = merge_pair(left, right, (80, 120), (60.0, 140.0), MergeConfig(tau))
    frames = [t.global_frame for t in merged]
    assert frames == sorted(frames)
    pool = left + right
    assert all(t in pool for t in merged)
    assert all(t in merged for t in left if t.global_frame < 80)
    assert all(t in merged for t in right if t.global_frame >= 120)
    assert len(merged) <= len(left) + len(right)


def test_identical_windows_merge_to_one_copy():
    toks = [tok(1, 82), tok(2, 90), tok(0, 110)]
    merged = merge_pair(toks, toks, (80, 120), (60.0, 140.0), MergeConfig(0))
    assert merged == toks


@pytest.mark.parametrize("seed", range(5))
def test_doi_is_exact_when_input_fits_one_window(rng, seed):
    p = init_params(tiny_config(seed=seed, init_scale=1.0))
    feats = rng.normal(size=(int(rng.integers(1, 40)), 3))
    cfg = SegmentationConfig(40, 5, subsample_factor=2)
    plain, _, _ = beam_search(p, feats, BeamConfig(3))
    doi = doi_decode(p, feats, cfg, beam_config=BeamConfig(3))
    assert (doi.labels, doi.frame_of, doi.log_score) == \
        (plain.labels, plain.frame_of, plain.log_score)
    fixed = fixed_overlap_decode(p, feats, 40, BeamConfig(3))
    assert (fixed.labels, fixed.frame_of) == (plain.labels, plain.frame_of)


def test_doi_multiwindow_output_is_consistent(rng):
    p = init_params(tiny_config(seed=3, init_scale=1.0))
    feats = rng.normal(size=(130, 3))
    res = overlapping_decode(p, feats, SegmentationConfig(40, 6, 2), beam_config=BeamConfig(2))
    assert len(res.segments) == 4
    assert res.decoded_frames == decoded_frame_count(130, SegmentationConfig(40, 6, 2))
    frames = [t.global_frame for t in res.tokens]
    assert frames == sorted(frames) and all(0 <= f < 130 for f in frames)
    assert res.hypothesis.frame_of == [f // 2 for f in frames]
    assert res.hypothesis.log_score == pytest.approx(
        sum(h.log_score for h in res.segment_hypotheses))


def _oracle_decoder(utt, s):
    """Pretend-perfect recognizer: emits each token whose span start lies in the window."""
    def decode(segment):
        labels, frames = [], []
        for y, f in zip(utt.labels, utt.token_frames):
            if segment.global_start_frame <= f < segment.end_frame:
                labels.append(int(y))
                frames.append(int((f - segment.global_start_frame) // s))
        return Hypothesis(labels, frames, 0.0)
    return decode


@pytest.mark.parametrize("s", [1, 2])
def test_concatenation_of_perfect_windows_recovers_reference(s):
    task = TaskConfig(noise_std=0.0)
    for seed in range(20):
        a, b = generate_corpus(task, 2, (3, 10), seed=seed)
        utt = concat_utterances([a, b])
        W = max(a.num_frames, b.num_frames)
        res = overlapping_decode(None, utt.features, SegmentationConfig(W, max(2, W // 8), s),
                                 decode_segment=_oracle_decoder(utt, s))
        assert res.hypothesis.labels == list(utt.labels)


def test_doi_frames_ratio_against_half_overlap():
    W = 200
    T = 10 * W + 37
    doi = decoded_frame_count(T, SegmentationConfig(W, W // 8))
    half = decoded_frame_count(T, fixed_overlap_config(W))
    assert doi / half < 0.65
    assert doi / half == pytest.approx((W / (W - W // 8)) / 2, abs=0.03)


def test_merge_tolerance_default_scales_with_subsampling():
    assert MergeConfig().tolerance(4) == 100
    assert MergeConfig(7).tolerance(4) == 7
    with pytest.raises(ValueError):
        MergeConfig(-1).tolerance(1)
