import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trlab.corpus import (TaskConfig, WerBreakdown, concat_utterances, error_curve,
                          generate_corpus, long_form_corpus, read_corpus, read_results, wer,
                          write_corpus, write_metrics, write_results)
from trlab.decoding import Hypothesis


def brute_edit_distance(a, b):
    """Plain recursive Levenshtein with memoisation, independent of the table code."""
    memo = {}

    def go(i, j):
        if (i, j) not in memo:
            if i == len(a):
                memo[i, j] = len(b) - j
            elif j == len(b):
                memo[i, j] = len(a) - i
            else:
                memo[i, j] = min(go(i + 1, j + 1) + (a[i] != b[j]), go(i + 1, j) + 1,
                                 go(i, j + 1) + 1)
        return memo[i, j]

    return go(0, 0)


def test_wer_examples():
    assert wer([1, 2, 3], [1, 2, 3]) == WerBreakdown(0, 0, 0, 3)
    assert wer([1, 2, 3], [1, 3]) == WerBreakdown(0, 1, 0, 3)
    assert wer([1, 2], [1, 4, 2]) == WerBreakdown(0, 0, 1, 2)
    assert wer([1, 2], [5, 2]) == WerBreakdown(1, 0, 0, 2)
    b = wer([], [4, 4])
    assert (b.insertions, b.wer) == (2, 2.0)
    assert wer([], []).wer == 0.0


def test_wer_str_shows_del_ins_sub():
    assert str(WerBreakdown(1, 2, 0, 10)) == "30.0 (20.0/0.0/10.0)"


def _all_sequences(max_len, alphabet=3):
    for n in range(max_len + 1):
        yield from itertools.product(range(alphabet), repeat=n)


def test_wer_matches_brute_force_on_all_small_pairs():
    seqs = list(_all_sequences(6))
    rng = np.random.default_rng(0)
    # every pair is 1093^2 ~ 1.2M; the acceptance suite does the full sweep, here a large sample
    idx = rng.integers(0, len(seqs), size=(20_000, 2))
    for i, j in idx:
        a, b = seqs[i], seqs[j]
        br = wer(a, b)
        assert br.errors == brute_edit_distance(a, b)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=9), st.lists(st.integers(0, 4), max_size=9))
def test_breakdown_sums_to_edit_distance_for_any_tie_break(a, b):
    d = brute_edit_distance(a, b)
    for pref in itertools.permutations(("match", "sub", "del", "ins")):
        br = wer(a, b, pref)
        assert br.errors == d
        assert br.reference_length == len(a)
        assert br.deletions - br.insertions == len(a) - len(b)


def test_error_curve_pools_by_key():
    rows = error_curve([(100, WerBreakdown(1, 0, 0, 10)), (200, WerBreakdown(0, 2, 0, 5)),
                        (100, WerBreakdown(0, 0, 1, 10))])
    assert rows[0] == (100, pytest.approx(0.1), 0.0, pytest.approx(0.05), pytest.approx(0.05), 20)
    assert rows[1][0] == 200 and rows[1][1] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        error_curve([])


def test_corpus_reproducible_and_capped():
    task = TaskConfig()
    a = generate_corpus(task, 20, (3, 12), seed=4, max_frames=60)
    b = generate_corpus(task, 20, (3, 12), seed=4, max_frames=60)
    for x, y in zip(a, b):
        assert x.id == y.id
        np.testing.assert_array_equal(x.features, y.features)
        np.testing.assert_array_equal(x.labels, y.labels)
    assert all(u.num_frames <= 60 for u in a)
    assert all(3 <= len(u.labels) <= 12 for u in a)
    c = generate_corpus(task, 20, (3, 12), seed=5)
    assert any(len(x.labels) != len(y.labels) or np.any(x.labels != y.labels) for x, y in zip(a, c))


def test_noise_free_utterance_structure():
    task = TaskConfig(noise_std=0.0, vocab_size=5, feature_dim=4)
    emb = task.embeddings()
    (u,) = generate_corpus(task, 1, (4, 4), seed=0)
    for y, f in zip(u.labels, u.token_frames):
        np.testing.assert_array_equal(u.features[f], emb[y])
    assert not u.features[0].any() and not u.features[-1].any()


def test_utterance_rate_and_repeats():
    task = TaskConfig(noise_std=0.0, frames_per_token=(3, 9), utterance_rate=True,
                      repeat_prob=0.5)
    repeats = 0
    for u in generate_corpus(task, 50, (6, 10), seed=4):
        spans = np.diff(u.token_frames)
        assert len(set(spans)) <= 1  # every token lasts the utterance's one rate
        repeats += int(np.sum(u.labels[1:] == u.labels[:-1]))
    n_pairs = sum(len(u.labels) - 1 for u in generate_corpus(task, 50, (6, 10), seed=4))
    assert 0.4 < repeats / n_pairs < 0.65  # copies plus chance matches (1/16)
    # the knobs leave default streams untouched
    a = generate_corpus(TaskConfig(), 3, (2, 5), seed=1)
    b = generate_corpus(TaskConfig(utterance_rate=False, repeat_prob=0.0), 3, (2, 5), seed=1)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))


def test_concat_and_long_form():
    task = TaskConfig()
    parts = generate_corpus(task, 3, (2, 4), seed=1)
    joined = concat_utterances(parts, inter_silence=5, noise_std=0.0)
    assert joined.num_frames == sum(u.num_frames for u in parts) + 10
    np.testing.assert_array_equal(joined.labels, np.concatenate([u.labels for u in parts]))
    off = parts[0].num_frames + 5
    np.testing.assert_array_equal(joined.token_frames[len(parts[0].labels)],
                                  parts[1].token_frames[0] + off)
    longs = long_form_corpus(task, 3, (5, 10), (3, 12), seed=2, max_frames=120)
    assert all(u.num_frames >= 5 * 20 for u in longs)
    again = long_form_corpus(task, 3, (5, 10), (3, 12), seed=2, max_frames=120)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(longs, again))


def test_jsonl_round_trips(tmp_path):
    utts = generate_corpus(TaskConfig(), 4, (1, 5), seed=9)
    write_corpus(tmp_path / "c.jsonl", utts)
    back = read_corpus(tmp_path / "c.jsonl")
    for x, y in zip(utts, back):
        assert x.id == y.id
        np.testing.assert_array_equal(x.features, y.features)
        np.testing.assert_array_equal(x.labels, y.labels)
    write_results(tmp_path / "r.jsonl", [("a", Hypothesis([1, 2], [0, 3], -1.5))])
    assert read_results(tmp_path / "r.jsonl") == {
        "a": {"id": "a", "hyp": [1, 2], "frames": [0, 3], "score": -1.5}}
    write_metrics(tmp_path / "m.csv", error_curve([("x", WerBreakdown(1, 1, 1, 6))]))
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "key,wer,del,ins,sub,n_ref"
    assert lines[1] == "x,0.500000,0.166667,0.166667,0.166667,6"


def test_task_config_validation():
    with pytest.raises(ValueError):
        TaskConfig(frames_per_token=(0, 3))
    with pytest.raises(ValueError):
        TaskConfig(noise_std=-1)
    with pytest.raises(ValueError):
        TaskConfig(repeat_prob=1.5)
