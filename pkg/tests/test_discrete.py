"""Vocabulary and token-filter tests, including exact sampling probabilities."""

import itertools

import numpy as np
import pytest

from asakit.rng import stream
from asakit.spaces import discrete_set
from asakit.trie import TokenFilterTrie, UnreachablePrefix
from asakit.vocab import NOOP, NotDiscrete, build_vocabulary

from oracles import exact_sequence_probability

THREE = discrete_set(["pick apple", "pick pear", "go stop"])


def test_semantic_vocabulary_construction():
    v = build_vocabulary(THREE, "semantic")
    assert set(v.words) == {"pick", "apple", "pear", "go", "stop", "<end>"}
    seq = v.encode("pick apple")
    assert [v.words[t] for t in seq] == ["pick", "apple", "<end>"]


def test_numeric_vocabulary_matches_canonical_assignment():
    # first-appearance order: pick->0, apple->1, pear->2, go->3, stop->4
    v = build_vocabulary(THREE, "numeric")
    pa = [v.words[t] for t in v.encode("pick apple")]
    pp = [v.words[t] for t in v.encode("pick pear")]
    assert pa == ["0", "1", "<end>"]
    assert pp == ["0", "2", "<end>"]


def test_numeric_extends_past_ten_words():
    names = [f"act w{i}" for i in range(12)]
    v = build_vocabulary(discrete_set(names), "numeric")
    lengths = v.sequence_lengths()
    assert all(n == 3 for n in lengths)  # multi-digit strings stay one token


def test_length_profiles_match_between_styles():
    space = discrete_set(["pick apple", "go stop now", "drop", "toggle the lever"])
    sem = build_vocabulary(space, "semantic")
    num = build_vocabulary(space, "numeric")
    assert sem.sequence_lengths() == num.sequence_lengths()


def test_sequential_two_token_emission_structure():
    # a two-word action needs its two word tokens emitted in order, then end
    v = build_vocabulary(THREE, "semantic")
    seq = v.encode("pick apple")
    assert len(seq) == 3 and seq[-1] == v.end_id


def test_decode_bijection_and_noop():
    v = build_vocabulary(THREE, "semantic")
    for name in THREE.actions:
        assert v.decode(v.encode(name)) == name
    apple, pick = v.word_id("apple"), v.word_id("pick")
    assert v.decode([apple, pick, v.end_id]) is NOOP  # wrong order
    assert v.decode([pick]) is NOOP  # truncated
    assert v.decode([pick, apple]) is NOOP  # missing end


def test_not_discrete_rejected():
    from asakit.spaces import continuous_box

    with pytest.raises(NotDiscrete):
        build_vocabulary(continuous_box([(-1, 1)]), "semantic")


# -- trie ---------------------------------------------------------------------


def test_filter_masks_enumerate_children():
    v = build_vocabulary(THREE, "semantic")
    trie = TokenFilterTrie.from_vocabulary(v)
    root_words = {v.words[t] for t in np.nonzero(trie.mask(()))[0]}
    assert root_words == {"pick", "go"}
    after_pick = {v.words[t] for t in np.nonzero(trie.mask([v.word_id("pick")]))[0]}
    assert after_pick == {"apple", "pear"}
    tail = trie.mask([v.word_id("pick"), v.word_id("apple")])
    assert np.nonzero(tail)[0].tolist() == [v.end_id]


def test_unreachable_prefix_raises():
    v = build_vocabulary(THREE, "semantic")
    trie = TokenFilterTrie.from_vocabulary(v)
    with pytest.raises(UnreachablePrefix):
        trie.mask([v.word_id("apple")])


def test_masks_nonempty_and_reach_leaf():
    v = build_vocabulary(THREE, "semantic")
    trie = TokenFilterTrie.from_vocabulary(v)
    rng = stream(0, "test-walk")
    for _ in range(500):
        prefix = []
        for _ in range(trie.max_depth):
            m = trie.mask(prefix)
            assert m.any()
            choices = np.nonzero(m)[0]
            prefix.append(int(rng.choice(choices)))
            if trie.is_complete(prefix):
                break
        assert trie.is_complete(prefix)
        assert v.decode(prefix) is not NOOP


def test_filtered_sampling_never_noops():
    v = build_vocabulary(THREE, "semantic")
    trie = TokenFilterTrie.from_vocabulary(v)
    rng = stream(1, "test-filtered")
    for _ in range(10_000):
        prefix = []
        while not trie.is_complete(prefix):
            m = trie.mask(prefix)
            logits = rng.normal(size=v.size)
            logits[~m] = -np.inf
            p = np.exp(logits - logits.max())
            p /= p.sum()
            prefix.append(int(rng.choice(v.size, p=p)))
        assert v.decode(prefix) is not NOOP


def test_unfiltered_uniform_validity_matches_enumeration():
    # uniform sampling of fixed-length sequences vs exact counting, V<=16, m<=3
    names = ["a x", "a y", "b x", "c z"]
    v = build_vocabulary(discrete_set(names), "semantic")
    V, m = v.size, 3
    valid = set(v.sequences)
    count = sum(1 for seq in itertools.product(range(V), repeat=m) if seq in valid)
    exact = count / V**m
    # oracle agrees with trie-free enumeration of the uniform measure
    prob = exact_sequence_probability(valid, lambda prefix: np.full(V, 1.0 / V))
    assert prob == pytest.approx(exact)
    rng = stream(2, "test-uniform")
    draws = rng.integers(0, V, size=(200_000, m))
    hits = sum(1 for row in draws if tuple(row) in valid)
    assert hits / draws.shape[0] == pytest.approx(exact, rel=0.1)


def test_vocabulary_dump_load_bit_exact(tmp_path):
    for style in ("semantic", "numeric"):
        v = build_vocabulary(THREE, style)
        p1, p2 = tmp_path / f"{style}1.vocab", tmp_path / f"{style}2.vocab"
        v.dump(p1)
        w = type(v).load(p1)
        w.dump(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert w == v


def test_padded_vocab_mask_width():
    v = build_vocabulary(THREE, "semantic")
    trie = TokenFilterTrie.from_vocabulary(v, vocab_size=64)
    m = trie.mask(())
    assert m.shape == (64,)
    assert not m[v.size :].any()
