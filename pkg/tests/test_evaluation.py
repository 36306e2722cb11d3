import math

import numpy as np
import pytest
import scipy.stats

from mcforge.dataset import McDataset, McInstance, McOption, assign_splits
from mcforge.evaluation import (
    EvalReport, Prediction, accuracy, argmax_lowest, balanced_acc_errorbar,
    baseline_bleu, baseline_pv, baseline_random, format_report_table,
)


def make_instance(i, options, gold_index, article="article text"):
    return McInstance(
        id=f"e{i}", article=article,
        options=tuple(McOption(f"o{i}.{j}", t) for j, t in enumerate(options)),
        gold_index=gold_index, decoy_scores=(), variant="rnd")


class TestArgmax:
    def test_basic(self):
        assert argmax_lowest([0.1, 0.7, 0.3, 0.2, 0.6]) == 1

    def test_ties_take_lowest(self):
        assert argmax_lowest([0.5, 0.5, 0.5]) == 0
        assert argmax_lowest([0.0, 0.0]) == 0

    def test_agrees_with_scan_oracle(self):
        gen = np.random.default_rng(3)
        for _ in range(1000):
            scores = list(gen.integers(0, 5, size=7).astype(float))
            best = max(scores)
            first = next(i for i, s in enumerate(scores) if s == best)
            assert argmax_lowest(scores) == first


class TestRandomBaseline:
    def test_degenerate_single_option(self):
        inst = make_instance(0, ["only"], 0)
        (pred,) = list(baseline_random([inst], seed=0))
        assert pred.chosen_index == 0

    def test_deterministic_per_seed(self):
        insts = [make_instance(i, list("abcde"), 0) for i in range(20)]
        a = [p.chosen_index for p in baseline_random(insts, seed=4)]
        b = [p.chosen_index for p in baseline_random(insts, seed=4)]
        assert a == b

    def test_five_way_accuracy_near_one_fifth(self):
        # expected accuracy on 5-option data is 20%; check a binomial window
        insts = [make_instance(i, list("abcde"), i % 5) for i in range(5000)]
        rep = accuracy(baseline_random(insts, seed=1), insts)
        assert abs(rep.accuracy - 0.2) < 0.02


class TestBleuBaseline:
    def test_article_prefix_option_dominates(self):
        art = "alpha beta gamma delta epsilon zeta"
        inst = make_instance(0, ["alpha beta gamma delta", "zzz yyy", "qqq www"],
                             0, article=art)
        (pred,) = list(baseline_bleu([inst]))
        assert pred.chosen_index == 0

    def test_all_zero_scores_tie_to_index_zero(self):
        inst = make_instance(0, ["xx yy", "zz ww"], 1, article="aa bb cc")
        (pred,) = list(baseline_bleu([inst]))
        assert pred.chosen_index == 0
        assert pred.option_scores == (0.0, 0.0)


class TestPvBaseline:
    def test_article_equal_to_option_chosen(self, trained_disjoint):
        corpus, model = trained_disjoint
        instances = []
        for i in range(50):
            gold = corpus.docs[i]
            others = [corpus.docs[(i + k) % 100].title for k in (7, 21, 40, 63)]
            options = [gold.title] + others
            instances.append(make_instance(i, options, 0, article=gold.title))
        preds = list(baseline_pv(instances, model, infer_steps=30))
        hits = sum(p.chosen_index == 0 for p in preds)
        assert hits >= 45  # >= 90% of 50

    def test_deterministic(self, trained_disjoint):
        corpus, model = trained_disjoint
        inst = make_instance(0, [corpus.docs[0].title, corpus.docs[1].title], 0,
                             article=corpus.docs[0].title)
        a = list(baseline_pv([inst], model, infer_steps=10))
        b = list(baseline_pv([inst], model, infer_steps=10))
        assert a == b


class TestAccuracy:
    def test_all_correct(self):
        insts = [make_instance(i, list("ab"), 1) for i in range(5)]
        preds = [Prediction(f"e{i}", 1, (0.0, 1.0)) for i in range(5)]
        assert accuracy(preds, insts).accuracy == 1.0

    def test_one_in_five(self):
        insts = [make_instance(i, list("ab"), 1) for i in range(5)]
        preds = [Prediction(f"e{i}", 1 if i == 0 else 0, (0.0, 1.0))
                 for i in range(5)]
        assert accuracy(preds, insts).accuracy == pytest.approx(0.2)

    def test_missing_prediction_rejected(self):
        insts = [make_instance(i, list("ab"), 1) for i in range(2)]
        with pytest.raises(ValueError):
            accuracy([Prediction("e0", 0, (1.0, 0.0))], insts)

    def test_unknown_prediction_rejected(self):
        insts = [make_instance(0, list("ab"), 1)]
        with pytest.raises(KeyError):
            accuracy([Prediction("zz", 0, (1.0, 0.0))], insts)

    def test_report_roundtrip(self):
        rep = EvalReport(n=10, accuracy=0.7, errorbar=0.04, method_tag="bleu")
        assert EvalReport.from_json(rep.to_json()) == rep


class TestBalancedAccErrorbar:
    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            balanced_acc_errorbar([0], [0], samples=2000)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            balanced_acc_errorbar([5], [10], samples=999)

    def test_closed_form_beta_std_single_class(self):
        # all correct: posterior Beta(1+n, 1); compare to the exact std
        n = 9999
        got = balanced_acc_errorbar([n], [n], samples=200_000, seed=3)
        a, b = 1 + n, 1
        exact = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
        assert got < 0.001
        assert got == pytest.approx(exact, rel=0.05)

    def test_matches_independent_monte_carlo(self):
        # five classes, 80/100 each; oracle uses scipy's Beta sampler
        correct, total = [80] * 5, [100] * 5
        got = balanced_acc_errorbar(correct, total, samples=100_000, seed=1)
        rng = np.random.default_rng(12345)
        draws = np.stack([
            scipy.stats.beta.rvs(1 + c, 1 + (t - c), size=100_000, random_state=rng)
            for c, t in zip(correct, total)
        ], axis=1)
        oracle = draws.mean(axis=1).std()
        assert got == pytest.approx(oracle, rel=0.10)


def test_accuracy_with_errorbar_and_table():
    insts = [make_instance(i, list("abcde"), i % 5) for i in range(500)]
    preds = list(baseline_random(insts, seed=2))
    rep = accuracy(preds, insts, method_tag="random", errorbar_samples=5000, seed=0)
    assert rep.errorbar is not None and 0 < rep.errorbar < 0.1
    table = format_report_table([rep])
    assert "random" in table and "Accuracy" in table
