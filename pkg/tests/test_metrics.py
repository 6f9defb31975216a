import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import levenshtein
from promptshift.errors import InvalidArgument
from promptshift.metrics import collapse, corpus_wer, edit_distance, greedy_decode, word_errors, word_error_rate
from promptshift.model import Vocab

V = Vocab()


def onehot_rows(tokens):
    p = np.full((len(tokens), len(V)), 1e-3)
    for i, t in enumerate(tokens):
        p[i, V.blank_index if t is None else V.index(t)] = 1.0
    return p / p.sum(1, keepdims=True)


def test_repeat_across_blank_survives():
    assert greedy_decode(onehot_rows(["c", "a", "a", None, "a", "t"]), V) == "caat"


def test_all_blank_is_empty():
    assert greedy_decode(onehot_rows([None, None, None]), V) == ""


def test_single_frame():
    assert greedy_decode(onehot_rows(["x"]), V) == "x"


def test_separator_maps_to_space():
    assert greedy_decode(onehot_rows(["a", "|", "|", "b"]), V) == "a b"


def test_collapse_rule():
    assert collapse([1, 1, 0, 1, 2, 2, 0, 0, 2], 0) == [1, 1, 2, 2]
    assert collapse([], 0) == []


@given(st.lists(st.integers(0, 31), min_size=1, max_size=30), st.integers(0, 2**31 - 1))
def test_decode_depends_only_on_argmax(ids, seed):
    rng = np.random.default_rng(seed)
    p = rng.random((len(ids), len(V)))
    p[np.arange(len(ids)), ids] = p.max() + 1.0
    q = p * rng.uniform(0.5, 1.0, p.shape)
    q[np.arange(len(ids)), ids] = p[np.arange(len(ids)), ids]
    assert greedy_decode(p / p.sum(1, keepdims=True), V) == greedy_decode(q / q.sum(1, keepdims=True), V)


def test_wer_examples():
    assert word_error_rate("the cat sat", "the cat sat") == 0.0
    assert word_error_rate("the cat sat", "the cat sat on") == 0.25
    assert word_error_rate("a b c d e", "x") == 5.0


def test_empty_reference_rejected():
    with pytest.raises(InvalidArgument):
        word_error_rate("a", "  ")


words = st.lists(st.sampled_from(["a", "b", "c", "dd"]), max_size=8)


@given(words, words, words)
def test_edit_distance_triangle(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)
    assert edit_distance(a, a) == 0


def test_wer_matches_naive_oracle_on_1000_pairs():
    rng = np.random.default_rng(0)
    vocab = ["the", "cat", "sat", "on", "mat", "a", "dog"]
    for _ in range(1000):
        hyp = list(rng.choice(vocab, size=rng.integers(0, 9)))
        ref = list(rng.choice(vocab, size=rng.integers(1, 9)))
        errors, n = word_errors(" ".join(hyp), " ".join(ref))
        assert errors == levenshtein(hyp, ref)
        assert n == len(ref)


def test_corpus_wer_pools_edit_distances():
    pairs = [("a b", "a b c d"), ("x", "y")]
    assert corpus_wer(pairs) == (2 + 1) / (4 + 1)
    assert corpus_wer([]) == 0.0
