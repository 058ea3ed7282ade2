"""Overlapping-window inference for inputs longer than the training segments.

A long input is cut into fixed windows that overlap by a few frames. Each
window is decoded on its own, its labels are placed on the global timeline
through their frame alignments, and consecutive windows are merged inside the
shared region. Tokens that two windows agree on (same label, nearby frames)
are kept once; disagreements go to the window whose centre is closer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoding import BeamConfig, Hypothesis, beam_search


@dataclass
class SegmentationConfig:
    window_frames: int
    overlap_frames: int
    subsample_factor: int = 1

    def __post_init__(self):
        if not 0 < self.overlap_frames < self.window_frames:
            raise ValueError("need 0 < overlap_frames < window_frames")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")

    @property
    def stride(self) -> int:
        return self.window_frames - self.overlap_frames


@dataclass
class Segment:
    features: np.ndarray
    global_start_frame: int

    @property
    def num_frames(self) -> int:
        return len(self.features)

    @property
    def end_frame(self) -> int:
        return self.global_start_frame + len(self.features)

    @property
    def center(self) -> float:
        return self.global_start_frame + 0.5 * len(self.features)


@dataclass(frozen=True)
class AlignedToken:
    label: int
    global_frame: int


@dataclass
class MergeConfig:
    match_tolerance_frames: int | None = None  # None: 25 encoder frames' worth

    def tolerance(self, subsample_factor: int) -> int:
        if self.match_tolerance_frames is None:
            return 25 * subsample_factor
        if self.match_tolerance_frames < 0:
            raise ValueError("match_tolerance_frames must be >= 0")
        return self.match_tolerance_frames


@dataclass
class OverlapResult:
    hypothesis: Hypothesis
    tokens: list
    segments: list = field(default_factory=list)
    segment_hypotheses: list = field(default_factory=list)

    @property
    def decoded_frames(self) -> int:
        return sum(s.num_frames for s in self.segments)


def segment_starts(T: int, config: SegmentationConfig) -> list:
    if T < 1:
        raise ValueError("need at least one frame")
    starts = [0]
    while starts[-1] + config.window_frames < T:
        starts.append(starts[-1] + config.stride)
    return starts


def segment_features(features, config: SegmentationConfig) -> list:
    features = np.asarray(features)
    T = len(features)
    return [Segment(features[s:s + config.window_frames], s) for s in segment_starts(T, config)]


def decoded_frame_count(T: int, config: SegmentationConfig) -> int:
    return sum(min(config.window_frames, T - s) for s in segment_starts(T, config))


def to_global_tokens(hyp: Hypothesis, segment: Segment, subsample_factor: int) -> list:
    """Anchor each label at the middle of its encoder frame's input stride."""
    s = subsample_factor
    last = segment.end_frame - 1
    return [AlignedToken(int(y), min(segment.global_start_frame + t * s + s // 2, last))
            for y, t in zip(hyp.labels, hyp.frame_of)]


def _confidence(frame, center, half_width):
    return 1.0 - abs(frame - center) / half_width


def _check_sorted(tokens, name):
    frames = [tok.global_frame for tok in tokens]
    if any(b < a for a, b in zip(frames, frames[1:])):
        raise ValueError(f"{name} tokens are not sorted by global_frame")


def merge_pair(left, right, overlap_span, segment_centers, config: MergeConfig | None = None,
               subsample_factor: int = 1) -> list:
    """Merge two time-sorted token lists that share ``overlap_span = [start, end)``.

    Left tokens before ``start`` and right tokens from ``end`` on pass through.
    Inside the overlap the two token sequences are aligned by minimum edit cost,
    where tokens may only be paired when their frames differ by at most the
    match tolerance. Paired equal labels are emitted once with the left timing.
    For a substituted pair the token with the higher confidence wins; an
    unpaired token survives only if its own window is at least as confident at
    its frame as the other window (left wins exact ties). Confidence is
    ``1 - |frame - centre| / half_width``; the half widths follow from the
    centres and the overlap edges.
    """
    config = config or MergeConfig()
    _check_sorted(left, "left")
    _check_sorted(right, "right")
    start, end = overlap_span
    c_left, c_right = segment_centers
    h_left = max(end - c_left, 1e-9)
    h_right = max(c_right - start, 1e-9)
    tau = config.tolerance(subsample_factor)

    head = [tok for tok in left if tok.global_frame < start]
    lo = [tok for tok in left if tok.global_frame >= start]
    ro = [tok for tok in right if tok.global_frame < end]
    tail = [tok for tok in right if tok.global_frame >= end]

    n, m = len(lo), len(ro)
    inf = n + m + 1
    cost = np.full((n + 1, m + 1), inf, dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = min(cost[i - 1, j], cost[i, j - 1]) + 1
            if abs(lo[i - 1].global_frame - ro[j - 1].global_frame) <= tau:
                best = min(best, cost[i - 1, j - 1] + (lo[i - 1].label != ro[j - 1].label))
            cost[i, j] = best

    def conf_l(f):
        return _confidence(f, c_left, h_left)

    def conf_r(f):
        return _confidence(f, c_right, h_right)

    resolved = []
    i, j = n, m
    while i or j:
        c = cost[i, j]
        if i and j and abs(lo[i - 1].global_frame - ro[j - 1].global_frame) <= tau:
            a, b = lo[i - 1], ro[j - 1]
            if a.label == b.label and cost[i - 1, j - 1] == c:
                resolved.append(a)
                i, j = i - 1, j - 1
                continue
            if a.label != b.label and cost[i - 1, j - 1] + 1 == c:
                resolved.append(a if conf_l(a.global_frame) >= conf_r(b.global_frame) else b)
                i, j = i - 1, j - 1
                continue
        if i and cost[i - 1, j] + 1 == c:
            a = lo[i - 1]
            if conf_l(a.global_frame) >= conf_r(a.global_frame):
                resolved.append(a)
            i -= 1
            continue
        b = ro[j - 1]
        if conf_r(b.global_frame) > conf_l(b.global_frame):
            resolved.append(b)
        j -= 1
    resolved.reverse()
    resolved.sort(key=lambda tok: tok.global_frame)  # stable: keeps alignment order on ties
    return head + resolved + tail


def overlapping_decode(params, features, seg_config: SegmentationConfig,
                       merge_config: MergeConfig | None = None,
                       beam_config: BeamConfig | None = None, map_fn=map,
                       decode_segment=None) -> OverlapResult:
    """Decode every window and left-fold :func:`merge_pair` over them.

    ``map_fn`` may be an executor's ``map`` to decode windows concurrently;
    merging always proceeds left to right. ``decode_segment(segment)`` replaces
    the default beam search when given. With a single window the result is
    exactly that window's hypothesis.
    """
    features = np.asarray(features, dtype=np.float64)
    beam_config = beam_config or BeamConfig()
    s = seg_config.subsample_factor
    segments = segment_features(features, seg_config)

    def run(seg):
        return beam_search(params, seg.features, beam_config)[0]

    hyps = list(map_fn(decode_segment or run, segments))
    if len(segments) == 1:
        h = hyps[0]
        return OverlapResult(h, to_global_tokens(h, segments[0], s), segments, hyps)
    merged = to_global_tokens(hyps[0], segments[0], s)
    for prev, seg, hyp in zip(segments, segments[1:], hyps[1:]):
        span = (seg.global_start_frame, prev.end_frame)
        merged = merge_pair(merged, to_global_tokens(hyp, seg, s), span,
                            (prev.center, seg.center), merge_config, s)
    hyp = Hypothesis([tok.label for tok in merged], [tok.global_frame // s for tok in merged],
                     float(sum(h.log_score for h in hyps)))
    return OverlapResult(hyp, merged, segments, hyps)


def doi_decode(params, features, seg_config: SegmentationConfig,
               merge_config: MergeConfig | None = None,
               beam_config: BeamConfig | None = None) -> Hypothesis:
    """Dynamic overlapping inference.

    For more than one window, ``frame_of`` holds encoder-frame indices on the
    whole input's timeline and ``log_score`` is the sum of the window scores.
    """
    return overlapping_decode(params, features, seg_config, merge_config, beam_config).hypothesis


def fixed_overlap_config(window_frames: int, subsample_factor: int = 1) -> SegmentationConfig:
    if window_frames < 2:
        raise ValueError("window must span at least two frames")
    return SegmentationConfig(window_frames, window_frames // 2, subsample_factor)


def fixed_overlap_decode(params, features, window_frames: int,
                         beam_config: BeamConfig | None = None,
                         merge_config: MergeConfig | None = None,
                         subsample_factor: int | None = None) -> Hypothesis:
    """Half-overlap baseline: same merge machinery with ``overlap = W // 2``."""
    s = subsample_factor or params.config.time_subsample_factor
    return doi_decode(params, features, fixed_overlap_config(window_frames, s),
                      merge_config, beam_config)
