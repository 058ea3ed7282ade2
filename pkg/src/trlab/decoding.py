"""Greedy and beam-search decoding with per-label frame alignments.

Also houses two diagnostics for long-form failures: the blank-probability
profile across truncated inputs, and the beam trace that records when the
empty hypothesis takes over the beam.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .lattice import log_softmax
from .model import ModelParams, encode, predict_step


@dataclass
class Hypothesis:
    labels: list = field(default_factory=list)
    frame_of: list = field(default_factory=list)
    log_score: float = 0.0

    def __len__(self):
        return len(self.labels)


@dataclass
class BeamConfig:
    beam_size: int = 4
    max_emissions_per_frame: int = 8
    merge_duplicate_prefixes: bool = True

    def __post_init__(self):
        if self.beam_size < 1 or self.max_emissions_per_frame < 1:
            raise ValueError("beam_size and max_emissions_per_frame must be >= 1")


@dataclass
class BeamTrace:
    """Beam contents after each encoder frame.

    ``steps[i]`` is a list of ``(labels, frame_of, log_score)`` tuples sorted
    best first.
    """

    steps: list = field(default_factory=list)
    dominance_step: int | None = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "rank", "log_score", "labels", "frames"])
            for i, beam in enumerate(self.steps):
                for rank, (labels, frames, score) in enumerate(beam):
                    w.writerow([i, rank, repr(float(score)),
                                " ".join(map(str, labels)), " ".join(map(str, frames))])


@dataclass
class BlankProfile:
    rows: list = field(default_factory=list)  # (length, step, blank_probability)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["length", "step", "blank_prob"])
            for length, step, p in self.rows:
                w.writerow([length, step, repr(float(p))])

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.float64).reshape(-1, 3)


class TransducerScorer:
    """Joint-network scorer bound to one encoded input.

    The encoder projection is computed once; prediction-network outputs are
    cached per label prefix so beam hypotheses sharing a prefix share work.
    """

    def __init__(self, params: ModelParams, features=None, encoded=None):
        self.params = params
        jp = params.joint
        if encoded is None:
            encoded = encode(params, features)
        self.encoded = encoded
        self.enc_proj = encoded @ jp["enc_W"] + jp["b"]
        self.blank = params.config.blank
        self._cache = {}

    @property
    def num_frames(self) -> int:
        return len(self.enc_proj)

    def prediction(self, labels: tuple):
        """``(pred_proj, lstm_state)`` after feeding ``labels`` (cached)."""
        hit = self._cache.get(labels)
        if hit is not None:
            return hit
        if labels:
            _, state = self.prediction(labels[:-1])
            prev = labels[-1]
        else:
            state, prev = None, None
        vec, new_state = predict_step(self.params, state, prev)
        entry = (vec @ self.params.joint["pred_W"], new_state)
        self._cache[labels] = entry
        return entry

    def log_probs(self, t: int, prefixes) -> np.ndarray:
        """``(len(prefixes), V+1)`` log-probabilities at frame ``t``."""
        jp = self.params.joint
        pred = np.stack([self.prediction(p)[0] for p in prefixes])
        hidden = np.tanh(self.enc_proj[t] + pred)
        return log_softmax(hidden @ jp["out_W"] + jp["out_b"])


def greedy_decode(params: ModelParams, features, max_emissions_per_frame: int = 8,
                  scorer: TransducerScorer | None = None) -> Hypothesis:
    scorer = scorer or TransducerScorer(params, features)
    blank = scorer.blank
    labels, frames, score = (), [], 0.0
    for t in range(scorer.num_frames):
        for _ in range(max_emissions_per_frame):
            lp = scorer.log_probs(t, [labels])[0]
            k = int(np.argmax(lp))  # first max: lowest id wins ties, so blank loses them
            score += float(lp[k])
            if k == blank:
                break
            labels = labels + (k,)
            frames.append(t)
        else:
            score += float(scorer.log_probs(t, [labels])[0][blank])
    return Hypothesis(list(labels), frames, score)


def _rank_key(item):
    labels, frames, score = item[0], item[1], item[2]
    return (-score, labels, tuple(frames))


def beam_search(params: ModelParams, features, config: BeamConfig | None = None,
                record_trace: bool = False, scorer: TransducerScorer | None = None):
    """Frame-synchronous beam search.

    For every frame, hypotheses are repeatedly extended by one label (at most
    ``max_emissions_per_frame`` times) or closed by a blank, and the union of
    open and closed candidates is pruned to ``beam_size`` after every round.
    Closed hypotheses with identical labels are merged by log-sum-exp when
    ``merge_duplicate_prefixes`` is set (the merged entry keeps the alignment
    of its best contributor).

    Returns ``(best, nbest, trace)``; ``trace`` is ``None`` unless requested.
    """
    config = config or BeamConfig()
    scorer = scorer or TransducerScorer(params, features)
    blank = scorer.blank
    k = config.beam_size
    beam = [((), (), 0.0)]  # (labels, frame_of, score)
    trace = BeamTrace() if record_trace else None

    for t in range(scorer.num_frames):
        closed = {}  # key -> (labels, frames, score, best_path_score)
        closed_list = []
        open_ = beam
        for emitted in range(config.max_emissions_per_frame + 1):
            if not open_:
                break
            lp = scorer.log_probs(t, [h[0] for h in open_])
            grown = []
            for (labels, frames, score), row in zip(open_, lp):
                done_score = score + float(row[blank])
                if config.merge_duplicate_prefixes:
                    prev = closed.get(labels)
                    if prev is None:
                        closed[labels] = [labels, frames, done_score, done_score]
                    else:
                        prev[2] = float(np.logaddexp(prev[2], done_score))
                        if done_score > prev[3]:
                            prev[1], prev[3] = frames, done_score
                else:
                    closed_list.append((labels, frames, done_score))
                if emitted < config.max_emissions_per_frame:
                    # only a hypothesis' k best labels can survive the top-k prune
                    for sym in np.argsort(-row[:blank], kind="stable")[:k]:
                        sym = int(sym)
                        grown.append((labels + (sym,), frames + (t,), score + float(row[sym])))
            done = ([(v[0], v[1], v[2]) for v in closed.values()]
                    if config.merge_duplicate_prefixes else closed_list)
            pool = [(h, True) for h in done] + [(h, False) for h in grown]
            pool.sort(key=lambda p: _rank_key(p[0]))
            pool = pool[:k]
            keep_done = {(h[0], h[1]) for h, is_done in pool if is_done}
            if config.merge_duplicate_prefixes:
                closed = {lab: v for lab, v in closed.items() if (v[0], v[1]) in keep_done}
            else:
                closed_list = [h for h, is_done in pool if is_done]
            open_ = [h for h, is_done in pool if not is_done]
        done = ([(v[0], v[1], v[2]) for v in closed.values()]
                if config.merge_duplicate_prefixes else closed_list)
        beam = sorted(done, key=_rank_key)[:k]
        if trace is not None:
            trace.steps.append([(list(l), list(f), s) for l, f, s in beam])

    nbest = [Hypothesis(list(l), list(f), float(s)) for l, f, s in beam]
    if trace is not None:
        trace.dominance_step = dominance_diagnostics(trace)["dominance_step"]
    return nbest[0], nbest, trace


def dominance_diagnostics(trace: BeamTrace) -> dict:
    """Locate the step where the empty hypothesis takes over the beam.

    ``dominance_step`` is the first step at which the empty hypothesis ranks
    first after a non-empty hypothesis has led at an earlier step (leading
    silence, where the empty hypothesis is legitimately best, does not count).
    ``filler`` is set when the final best hypothesis shares no
    ``(label, frame)`` token with the best hypothesis just before dominance.
    """
    dominance = None
    seen_nonempty_lead = False
    for i, beam in enumerate(trace.steps):
        if not beam:
            continue
        best_labels = beam[0][0]
        if best_labels:
            seen_nonempty_lead = True
        elif seen_nonempty_lead:
            dominance = i
            break
    filler = False
    if dominance is not None and dominance > 0 and trace.steps[-1]:
        before = trace.steps[dominance - 1][0]
        final = trace.steps[-1][0]
        before_tokens = set(zip(before[0], before[1]))
        filler = not (before_tokens & set(zip(final[0], final[1])))
    return {"dominance_step": dominance, "filler": filler}


def blank_probability_profile(params: ModelParams, features, lengths, K: int = 5,
                              max_emissions_per_frame: int = 8) -> BlankProfile:
    """Blank probability over the first ``K`` greedy decisions of truncated inputs.

    Each entry of ``lengths`` truncates ``features`` to that many frames; the
    truncated input is re-encoded from scratch, so a bidirectional encoder lets
    the whole truncated segment influence the first decisions. A truncation
    that runs out of frames before ``K`` decisions contributes fewer rows.
    """
    features = np.asarray(features, dtype=np.float64)
    if K < 1:
        raise ValueError("K must be >= 1")
    blank = params.config.blank
    profile = BlankProfile()
    for length in lengths:
        length = int(length)
        if length > len(features) or length < 1:
            raise ValueError(f"length {length} outside [1, {len(features)}]")
        scorer = TransducerScorer(params, features[:length])
        labels = ()
        step = 0
        for t in range(scorer.num_frames):
            for _ in range(max_emissions_per_frame):
                lp = scorer.log_probs(t, [labels])[0]
                step += 1
                profile.rows.append((length, step, float(np.exp(lp[blank]))))
                sym = int(np.argmax(lp))
                if step >= K or sym == blank:
                    break
                labels = labels + (sym,)
            if step >= K:
                break
    return profile
