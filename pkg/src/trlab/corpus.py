"""Synthetic transduction corpora and word-error-rate bookkeeping."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace

import numpy as np


@dataclass
class TaskConfig:
    vocab_size: int = 16
    feature_dim: int = 8
    frames_per_token: tuple = (4, 8)
    silence_pad: tuple = (4, 12)
    noise_std: float = 0.3
    channel_std: float = 0.0  # per-utterance offset added to every frame
    utterance_rate: bool = False  # one frames-per-token draw shared by a whole utterance
    repeat_prob: float = 0.0  # chance each label copies its predecessor
    embedding_seed: int = 1234

    def __post_init__(self):
        self.frames_per_token = tuple(int(v) for v in self.frames_per_token)
        self.silence_pad = tuple(int(v) for v in self.silence_pad)
        r_min, r_max = self.frames_per_token
        if r_min < 1 or r_max < r_min:
            raise ValueError("frames_per_token must satisfy 1 <= r_min <= r_max")
        if self.silence_pad[0] < 0 or self.silence_pad[1] < self.silence_pad[0]:
            raise ValueError("silence_pad must be a non-negative range")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.noise_std < 0 or self.channel_std < 0:
            raise ValueError("noise_std and channel_std must be >= 0")
        if not 0 <= self.repeat_prob <= 1:
            raise ValueError("repeat_prob must lie in [0, 1]")

    def embeddings(self) -> np.ndarray:
        return np.random.default_rng(self.embedding_seed).normal(
            size=(self.vocab_size, self.feature_dim))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Utterance:
    id: str
    features: np.ndarray
    labels: np.ndarray
    token_frames: np.ndarray | None = None  # first frame of each label's span, when known

    @property
    def num_frames(self) -> int:
        return len(self.features)


def _silence(n: int, task: TaskConfig, rng) -> np.ndarray:
    return rng.normal(0.0, task.noise_std, size=(n, task.feature_dim)) if task.noise_std else \
        np.zeros((n, task.feature_dim))


def generate_utterance(task: TaskConfig, num_tokens: int, rng, utt_id: str = "",
                       embeddings: np.ndarray | None = None) -> Utterance:
    """Silence, then each label's embedding held for a random number of frames, then silence."""
    if num_tokens < 0:
        raise ValueError("num_tokens must be >= 0")
    emb = task.embeddings() if embeddings is None else embeddings
    r_min, r_max = task.frames_per_token
    labels = rng.integers(0, task.vocab_size, size=num_tokens)
    if task.repeat_prob and num_tokens > 1:
        copy = rng.random(num_tokens - 1) < task.repeat_prob
        for i in np.flatnonzero(copy) + 1:
            labels[i] = labels[i - 1]
    rate = int(rng.integers(r_min, r_max + 1)) if task.utterance_rate else None
    parts = [_silence(int(rng.integers(task.silence_pad[0], task.silence_pad[1] + 1)), task, rng)]
    starts = []
    for y in labels:
        starts.append(sum(len(x) for x in parts))
        r = rate if rate is not None else int(rng.integers(r_min, r_max + 1))
        frames = np.repeat(emb[y][None], r, axis=0)
        if task.noise_std:
            frames = frames + rng.normal(0.0, task.noise_std, size=frames.shape)
        parts.append(frames)
    parts.append(_silence(int(rng.integers(task.silence_pad[0], task.silence_pad[1] + 1)), task, rng))
    features = np.concatenate(parts)
    if len(features) == 0:
        features = _silence(1, task, rng)
    if task.channel_std:
        features = features + rng.normal(0.0, task.channel_std, size=task.feature_dim)
    return Utterance(utt_id, features, labels.astype(np.int64), np.array(starts, dtype=np.int64))


def generate_corpus(task: TaskConfig, num_utterances: int, token_range, seed: int,
                    max_frames: int | None = None, prefix: str = "utt") -> list:
    """``num_utterances`` utterances with token counts uniform in ``token_range``.

    Each utterance draws from its own stream seeded by ``(seed, index)``.
    Utterances longer than ``max_frames`` are redrawn from the same stream, so
    the cap acts as a length filter.
    """
    emb = task.embeddings()
    lo, hi = token_range
    out = []
    for i in range(num_utterances):
        rng = np.random.default_rng([seed, i])
        while True:
            utt = generate_utterance(task, int(rng.integers(lo, hi + 1)), rng,
                                     f"{prefix}{i:05d}", emb)
            if max_frames is None or utt.num_frames <= max_frames:
                break
        out.append(utt)
    return out


def concat_utterances(utterances, inter_silence: int = 0, noise_std: float = 0.0,
                      rng=None, utt_id: str | None = None) -> Utterance:
    """Join utterances in order with ``inter_silence`` frames of (noisy) silence between."""
    if not utterances:
        raise ValueError("need at least one utterance")
    d = utterances[0].features.shape[1]
    if any(u.features.shape[1] != d for u in utterances):
        raise ValueError("feature dimension mismatch")
    parts, starts = [], []
    offset = 0
    for i, u in enumerate(utterances):
        if i and inter_silence:
            gap = np.zeros((inter_silence, d))
            if noise_std:
                gap = gap + rng.normal(0.0, noise_std, size=gap.shape)
            parts.append(gap)
            offset += inter_silence
        parts.append(u.features)
        if starts is not None and u.token_frames is not None:
            starts.append(np.asarray(u.token_frames) + offset)
        else:
            starts = None
        offset += len(u.features)
    labels = np.concatenate([np.asarray(u.labels, dtype=np.int64) for u in utterances])
    token_frames = np.concatenate(starts).astype(np.int64) if starts is not None else None
    return Utterance(utt_id if utt_id is not None else "+".join(u.id for u in utterances),
                     np.concatenate(parts), labels, token_frames)


def long_form_corpus(task: TaskConfig, num_utterances: int, pieces, token_range, seed: int,
                     max_frames: int | None = None, inter_silence: int = 0,
                     shared_channel: bool = True) -> list:
    """Long-form probes: each is a concatenation of ``pieces`` (lo, hi) short utterances.

    With ``shared_channel`` the pieces are drawn without their own channel
    offsets and one offset is applied to the whole recording.
    """
    piece_task = replace(task, channel_std=0.0) if shared_channel else task
    out = []
    for i in range(num_utterances):
        rng = np.random.default_rng([seed, 1_000_000 + i])
        k = int(rng.integers(pieces[0], pieces[1] + 1))
        parts = generate_corpus(piece_task, k, token_range, seed=int(rng.integers(2**31)),
                                max_frames=max_frames, prefix=f"long{i:04d}_")
        utt = concat_utterances(parts, inter_silence, task.noise_std, rng, f"long{i:04d}")
        if shared_channel and task.channel_std:
            utt.features = utt.features + rng.normal(0.0, task.channel_std, size=task.feature_dim)
        out.append(utt)
    return out


# ---------------------------------------------------------------------------
# WER


@dataclass
class WerBreakdown:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / max(self.reference_length, 1)

    def rate(self, count: int) -> float:
        return count / max(self.reference_length, 1)

    def __add__(self, other: "WerBreakdown") -> "WerBreakdown":
        return WerBreakdown(self.substitutions + other.substitutions,
                            self.deletions + other.deletions,
                            self.insertions + other.insertions,
                            self.reference_length + other.reference_length)

    def __str__(self):
        return (f"{100 * self.wer:.1f} ({100 * self.rate(self.deletions):.1f}/"
                f"{100 * self.rate(self.insertions):.1f}/{100 * self.rate(self.substitutions):.1f})")


def _table(ref, hyp) -> list:
    M = len(hyp)
    rows = [list(range(M + 1))]
    for i, r in enumerate(ref, 1):
        prev, row = rows[-1], [i]
        for j in range(1, M + 1):
            row.append(min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1))
        rows.append(row)
    return rows


def edit_table(reference, hypothesis) -> np.ndarray:
    """Levenshtein table ``D[i, j]`` between the first i reference and j hypothesis tokens."""
    return np.array(_table(list(reference), list(hypothesis)), dtype=np.int64)


_PREFERENCE = ("match", "sub", "del", "ins")


def wer(reference, hypothesis, preference=_PREFERENCE) -> WerBreakdown:
    """Levenshtein alignment with unit costs, counted from the backtrace.

    Backtrace ties follow ``preference`` (default: match, substitution,
    deletion, insertion). An empty reference with a non-empty hypothesis
    yields only insertions; ``wer`` then divides by 1.
    """
    ref, hyp = [int(x) for x in reference], [int(x) for x in hypothesis]
    D = _table(ref, hyp)
    i, j = len(ref), len(hyp)
    S = Dl = I = 0
    while i or j:
        d = D[i][j]
        for move in preference:
            if move == "match" and i and j and ref[i - 1] == hyp[j - 1] and D[i - 1][j - 1] == d:
                i, j = i - 1, j - 1
                break
            if move == "sub" and i and j and ref[i - 1] != hyp[j - 1] and D[i - 1][j - 1] + 1 == d:
                S += 1
                i, j = i - 1, j - 1
                break
            if move == "del" and i and D[i - 1][j] + 1 == d:
                Dl += 1
                i -= 1
                break
            if move == "ins" and j and D[i][j - 1] + 1 == d:
                I += 1
                j -= 1
                break
        else:  # pragma: no cover - a consistent table always offers a move
            raise AssertionError("inconsistent edit table")
    return WerBreakdown(S, Dl, I, len(ref))


def error_curve(results) -> list:
    """Pool ``(key, WerBreakdown)`` pairs per key.

    Returns rows ``(key, wer, del_rate, ins_rate, sub_rate, n_ref)`` in first-seen
    key order; rates are pooled over reference words.
    """
    pooled = {}
    for key, b in results:
        pooled[key] = pooled.get(key, WerBreakdown()) + b
    if not pooled:
        raise ValueError("error_curve needs at least one result")
    return [(k, b.wer, b.rate(b.deletions), b.rate(b.insertions), b.rate(b.substitutions),
             b.reference_length) for k, b in pooled.items()]


def pooled(breakdowns) -> WerBreakdown:
    total = WerBreakdown()
    for b in breakdowns:
        total = total + b
    return total


# ---------------------------------------------------------------------------
# file formats


def write_corpus(path, utterances) -> None:
    with open(path, "w") as fh:
        for u in utterances:
            fh.write(json.dumps({"id": u.id, "features": np.asarray(u.features).tolist(),
                                 "labels": [int(x) for x in u.labels]}) + "\n")


def read_corpus(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                feats = np.asarray(rec["features"], dtype=np.float64)
                out.append(Utterance(rec["id"], feats.reshape(len(feats), -1),
                                     np.asarray(rec["labels"], dtype=np.int64)))
    return out


def write_results(path, records) -> None:
    """``records``: iterable of ``(id, Hypothesis)``."""
    with open(path, "w") as fh:
        for utt_id, hyp in records:
            fh.write(json.dumps({"id": utt_id, "hyp": [int(x) for x in hyp.labels],
                                 "frames": [int(x) for x in hyp.frame_of],
                                 "score": float(hyp.log_score)}) + "\n")


def read_results(path) -> dict:
    with open(path) as fh:
        return {rec["id"]: rec for rec in map(json.loads, filter(str.strip, fh))}


def write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "wer", "del", "ins", "sub", "n_ref"])
        for key, w_, d, i, s, n in rows:
            w.writerow([key, f"{w_:.6f}", f"{d:.6f}", f"{i:.6f}", f"{s:.6f}", n])
