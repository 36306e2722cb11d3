import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcforge.metrics import BleuConfig, bleu, lcs_length, rouge_l

# ---------------------------------------------------------------------------
# Independent oracles. The BLEU oracle counts n-grams with plain dicts and
# takes the product form of the geometric mean; the LCS oracle fills the full
# DP table. Expected values below were computed with these oracles and frozen.
# ---------------------------------------------------------------------------


def oracle_bleu(cand, ref, max_order=4):
    if not cand:
        return 0.0
    order = min(max_order, len(cand))
    prod = 1.0
    for n in range(1, order + 1):
        cgrams = {}
        for i in range(len(cand) - n + 1):
            g = tuple(cand[i:i + n])
            cgrams[g] = cgrams.get(g, 0) + 1
        rgrams = {}
        for i in range(len(ref) - n + 1):
            g = tuple(ref[i:i + n])
            rgrams[g] = rgrams.get(g, 0) + 1
        clipped = sum(min(c, rgrams.get(g, 0)) for g, c in cgrams.items())
        if clipped == 0:
            return 0.0
        prod *= clipped / (len(cand) - n + 1)
    return prod ** (1.0 / order)


def oracle_lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def oracle_rouge(cand, ref):
    if not cand or not ref:
        return 0.0
    lcs = oracle_lcs(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


BLEU_CASES = [
    (['a', 'b', 'c', 'd'], ['a', 'b', 'c', 'd'], 1.0),
    (['a', 'b'], ['a', 'b'], 1.0),
    (['a', 'b', 'c', 'd'], ['a', 'b', 'c', 'e'], 0.0),
    (['a'], ['b'], 0.0),
    (['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'], ['a', 'b', 'c', 'd', 'e', 'x', 'g', 'h'], 0.5946035575013605),
    (['a', 'a'], ['a', 'a', 'a'], 1.0),
    (['the', 'cat', 'sat', 'on', 'the', 'mat'], ['the', 'cat', 'sat', 'on', 'a', 'mat', 'the', 'mat'], 0.6042750794713536),
    (['a', 'b', 'c', 'd', 'e'], ['c', 'd', 'e', 'a', 'b', 'c', 'd'], 0.8408964152537145),
    (['a', 'b', 'a', 'b', 'a', 'b'], ['a', 'b', 'a', 'b'], 0.5081327481546147),
    (['m', 'n', 'o'], ['m', 'n', 'o', 'p', 'q', 'r'], 1.0),
    (['one', 'two', 'three', 'four', 'five'], ['one', 'two', 'three', 'four', 'six'], 0.668740304976422),
    (['u', 'v', 'w', 'x', 'y', 'z'], ['u', 'v', 'w', 'x', 'a', 'w', 'x', 'y', 'z'], 0.9036020036098448),
    (['p', 'q', 'r', 's', 'p', 'q', 'r', 's'], ['p', 'q', 'r', 's'], 0.345720784641941),
    (['a', 'b', 'c', 'd', 'e', 'f'], ['b', 'c', 'd', 'e'], 0.5081327481546147),
    (['x', 'y'], ['x', 'z'], 0.0),
    (['s', 't', 'u'], ['s', 't', 'v', 't', 'u'], 0.0),
    (['a', 'b', 'c', 'd', 'a', 'b', 'c', 'd', 'x'], ['a', 'b', 'c', 'd', 'y', 'a', 'b', 'c'], 0.4316700106852252),
    (['w', 'w', 'w', 'w', 'w'], ['w', 'w'], 0.0),
    (['h', 'i', 'j', 'k', 'l', 'm', 'n'], ['h', 'i', 'j', 'k', 'l', 'm', 'n'], 1.0),
    (['g', 'a', 'p'], ['g', 'a', 'p', 'g', 'a', 'p'], 1.0),
]

ROUGE_CASES = [
    (['a', 'b', 'c', 'd'], ['a', 'b', 'c', 'd'], 1.0),
    (['a', 'b', 'c', 'd'], ['a', 'c', 'b', 'd'], 0.75),
    (['a', 'b'], ['c', 'd'], 0.0),
    (['a'], ['a', 'b', 'c'], 0.5),
    (['a', 'b', 'c'], ['c', 'b', 'a'], 0.3333333333333333),
    (['x', 'a', 'y', 'b', 'z'], ['a', 'b'], 0.5714285714285715),
    (['the', 'cat', 'sat'], ['the', 'dog', 'sat'], 0.6666666666666666),
    (['p', 'q', 'r', 's', 't'], ['q', 's'], 0.5714285714285715),
    (['m', 'm', 'm'], ['m'], 0.5),
    (['a', 'b', 'c', 'd', 'e', 'f'], ['b', 'd', 'f'], 0.6666666666666666),
    (['one', 'two', 'three'], ['one', 'two', 'three', 'four'], 0.8571428571428571),
    (['u', 'v'], ['v', 'u'], 0.5),
    (['h', 'e', 'l', 'l', 'o'], ['h', 'o', 'l', 'e'], 0.4444444444444445),
    (['s', 'u', 'b', 's', 'e', 'q'], ['s', 'e', 'q', 'u', 'e', 'n', 'c', 'e'], 0.42857142857142855),
    (['a', 'x', 'b', 'y', 'c'], ['a', 'b', 'c'], 0.7499999999999999),
    (['long', 'longer', 'longest'], ['longest', 'longer', 'long'], 0.3333333333333333),
    (['r', 'o', 'u', 'g', 'e'], ['g', 'a', 'u', 'g', 'e'], 0.6),
    (['t'], ['t'], 1.0),
    (['d', 'c', 'b', 'a'], ['a', 'b', 'c', 'd'], 0.25),
    (['w', 'x', 'y', 'z'], ['w', 'x', 'q', 'y', 'z'], 0.888888888888889),
]

TOKENS = st.lists(st.sampled_from("a b c d e".split()), max_size=12)


class TestBleu:
    @pytest.mark.parametrize("cand,ref,expected", BLEU_CASES)
    def test_frozen_oracle_cases(self, cand, ref, expected):
        assert bleu(cand, ref) == pytest.approx(expected, abs=1e-9)
        assert oracle_bleu(cand, ref) == pytest.approx(expected, abs=1e-9)

    def test_spec_hand_computation(self):
        # precisions 3/4, 2/3, 1/2, 0/1 -> zero fourth-order precision
        assert bleu(["a", "b", "c", "d"], ["a", "b", "c", "e"]) == 0.0

    def test_order_cap_at_candidate_length(self):
        assert bleu(["a", "b"], ["a", "b"], BleuConfig(max_order=4)) == 1.0

    def test_empty_candidate(self):
        assert bleu([], ["a", "b"]) == 0.0

    def test_max_order_bounds(self):
        with pytest.raises(ValueError):
            BleuConfig(max_order=0)
        with pytest.raises(ValueError):
            BleuConfig(max_order=10)

    def test_classic_brevity_penalty_optional(self):
        cfg = BleuConfig(brevity_penalty_fixed_to_one=False)
        short = bleu(["a", "b"], ["a", "b", "c", "d"], cfg)
        assert short == pytest.approx(math.exp(1 - 4 / 2), abs=1e-12)

    @given(TOKENS, TOKENS)
    @settings(max_examples=200, deadline=None)
    def test_range_and_oracle_agreement(self, cand, ref):
        got = bleu(cand, ref)
        assert 0.0 <= got <= 1.0
        assert got == pytest.approx(oracle_bleu(cand, ref), abs=1e-9)

    @given(st.lists(st.sampled_from("a b c".split()), min_size=1, max_size=10))
    @settings(max_examples=100, deadline=None)
    def test_identity_scores_one(self, tokens):
        assert bleu(tokens, tokens) == pytest.approx(1.0, abs=1e-12)

    def test_invariant_to_max_order_when_short_and_equal(self):
        for order in (2, 3, 4, 9):
            assert bleu(["x", "y"], ["x", "y"], BleuConfig(max_order=order)) == 1.0


class TestRougeL:
    @pytest.mark.parametrize("cand,ref,expected", ROUGE_CASES)
    def test_frozen_oracle_cases(self, cand, ref, expected):
        assert rouge_l(cand, ref) == pytest.approx(expected, abs=1e-9)
        assert oracle_rouge(cand, ref) == pytest.approx(expected, abs=1e-9)

    def test_identity(self):
        assert rouge_l(["a", "b", "c"], ["a", "b", "c"]) == 1.0

    def test_disjoint(self):
        assert rouge_l(["a", "b"], ["x", "y"]) == 0.0

    def test_empty_sides(self):
        assert rouge_l([], ["a"]) == 0.0
        assert rouge_l(["a"], []) == 0.0

    @given(TOKENS, TOKENS)
    @settings(max_examples=200, deadline=None)
    def test_lcs_matches_full_table_oracle(self, a, b):
        assert lcs_length(a, b) == oracle_lcs(a, b)

    @given(TOKENS, TOKENS)
    @settings(max_examples=100, deadline=None)
    def test_range(self, a, b):
        assert 0.0 <= rouge_l(a, b) <= 1.0

    def test_symmetric_value_when_equal_lengths(self):
        a, b = ["a", "b", "c"], ["b", "c", "d"]
        assert rouge_l(a, b) == pytest.approx(rouge_l(b, a), abs=1e-12)
