import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgae.metrics import (DocumentFrequency, bleu, build_df, cider_d, clean, corpus_scores,
                          modified_precision)

import oracles

CORPUS5 = [
    "a man riding a red bike".split(),
    "a man on a bike near a tree".split(),
    "a small dog near a tree".split(),
    "two dogs playing with a ball".split(),
    "a woman holding a small dog".split(),
]

words = st.sampled_from(["a", "b", "c", "d", "e"])
sents = st.lists(words, min_size=1, max_size=8)


class TestBleu:
    def test_identity(self):
        s = "the cat sat on the mat".split()
        assert bleu(s, [s]) == 1.0

    def test_clipping_two_sevenths(self):
        cand = ["the"] * 7
        ref = "the cat is on the mat".split()
        assert modified_precision(cand, [ref], 1) == (2, 7)
        assert bleu(cand, [ref], max_n=1) == pytest.approx(2 / 7)

    def test_brevity(self):
        ref = "the cat is on the mat today".split()
        cand = "the cat is on".split()
        assert bleu(cand, [ref]) < 1.0
        assert bleu(cand, [ref]) == pytest.approx(math.exp(1 - 7 / 4))

    def test_empty_candidate(self):
        assert bleu([], [["a"]]) == 0.0

    def test_matches_oracle(self):
        cand = "a man riding a bike near a tree".split()
        for n in range(1, 5):
            assert bleu(cand, CORPUS5[:2], n) == pytest.approx(oracles.brute_bleu(cand, CORPUS5[:2], n), abs=1e-12)

    def test_reserved_stripped(self):
        assert bleu([0, 5, 6, 7, 8, 1], [[5, 6, 7, 8]]) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(sents, st.lists(sents, min_size=1, max_size=3))
    def test_range_and_oracle(self, c, refs):
        b = bleu(c, refs)
        assert 0.0 <= b <= 1.0 + 1e-12
        assert b == pytest.approx(oracles.brute_bleu(c, refs), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(words, min_size=4, max_size=8), st.lists(sents, max_size=3))
    def test_self_reference(self, c, refs):
        # only defined when every n-gram order exists in c
        assert bleu(c, refs + [c]) == pytest.approx(1.0)

    @settings(max_examples=100, deadline=None)
    @given(sents, st.lists(sents, min_size=1, max_size=3))
    def test_relabeling(self, c, refs):
        m = {w: f"x{i}" for i, w in enumerate("abcde")}
        relabel = lambda s: [m[w] for w in s]  # noqa: E731
        assert bleu(c, refs) == bleu(relabel(c), [relabel(r) for r in refs])


class TestCider:
    def test_matches_oracle_on_five_sentences(self):
        groups = [[s] for s in CORPUS5]
        df = build_df(groups)
        cands = CORPUS5 + ["a man near a dog".split(), "tree".split(), "zebra zebra".split()]
        for cand in cands:
            for refs in (CORPUS5[:1], CORPUS5[1:3], CORPUS5):
                got = cider_d(cand, refs, df)
                assert abs(got - oracles.brute_cider_d(cand, refs, groups)) <= 1e-9

    def test_no_overlap_zero(self):
        df = build_df([[s] for s in CORPUS5])
        assert cider_d("zebra giraffe".split(), CORPUS5[:2], df) == 0.0

    def test_empty_df(self):
        with pytest.raises(ValueError):
            cider_d(["a"], [["a"]], DocumentFrequency())

    def test_reference_permutation(self):
        df = build_df([[s] for s in CORPUS5])
        cand = "a man near a tree".split()
        vals = {round(cider_d(cand, list(p), df), 12) for p in itertools.permutations(CORPUS5[:3])}
        assert len(vals) == 1

    def test_identical_is_maximal(self):
        vocab = ["a", "b", "c"]
        corpus = [["a", "b", "c"], ["b", "b", "a"], ["c", "a", "a"]]
        df = build_df([[s] for s in corpus])
        target = corpus[0]
        best = max(cider_d(list(c), [target], df) for c in itertools.product(vocab, repeat=3))
        assert cider_d(target, [target], df) == pytest.approx(best)

    def test_sigma_penalty(self):
        df = build_df([[s] for s in CORPUS5])
        ref = CORPUS5[0]
        longer = ref + ["today"]
        ratio = cider_d(longer, [ref], df, sigma=6.0) / cider_d(longer, [ref], df, sigma=1e9)
        assert ratio == pytest.approx(math.exp(-1 / 72))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.lists(sents, min_size=1, max_size=2), min_size=1, max_size=4), sents)
    def test_nonnegative_and_relabel(self, groups, cand):
        df = build_df(groups)
        refs = groups[0]
        v = cider_d(cand, refs, df)
        assert v >= 0
        m = {w: f"x{i}" for i, w in enumerate("abcde")}
        rl = lambda s: [m[w] for w in s]  # noqa: E731
        df2 = build_df([[rl(r) for r in g] for g in groups])
        assert cider_d(rl(cand), [rl(r) for r in refs], df2) == pytest.approx(v, abs=1e-12)
        assert v == pytest.approx(oracles.brute_cider_d(cand, refs, groups), abs=1e-9)


class TestDf:
    def test_idf_values(self):
        df = build_df([[["a", "b"]], [["a", "c"]], [["a"]]])
        assert df.idf(("a",)) == 0.0
        assert df.idf(("b",)) == pytest.approx(math.log(3))
        assert df.idf(("zzz",)) == pytest.approx(math.log(3))

    def test_roundtrip(self):
        df = build_df([[s] for s in CORPUS5])
        again = DocumentFrequency.from_json(df.to_json())
        assert again == df

    def test_reserved_excluded(self):
        df = build_df([[[0, 5, 6, 1, 3]]])
        assert all(not set(g) & {0, 1, 3} for g in df.counts)
        assert clean([0, 5, 1, 3, 2]) == (5, 2)


def test_corpus_scores():
    hyps = {"a": "a man riding a red bike".split(), "b": "a dog".split()}
    refs = {"a": [CORPUS5[0]], "b": [CORPUS5[2]]}
    out = corpus_scores(hyps, refs)
    assert [r["id"] for r in out["items"]] == ["a", "b"]
    assert out["items"][0]["bleu4"] == 1.0
    assert out["mean"]["cider_d"] == pytest.approx((out["items"][0]["cider_d"] + out["items"][1]["cider_d"]) / 2)
    with pytest.raises(KeyError):
        corpus_scores({"a": ["x"]}, {"b": [["x"]]})
