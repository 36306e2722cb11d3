"""Accuracy protocol, reference baselines, and posterior error bars.

Baselines are stateless maps over instances: uniform random choice, highest
BLEU of option-vs-article, and highest cosine between inferred paragraph
vectors of article and option. Error bars are the standard deviation of the
posterior of the balanced accuracy, with classes taken to be the gold
positions and a uniform Beta(1,1) prior per class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .corpus import tokenize
from .metrics import DEFAULT_BLEU, BleuConfig, bleu
from .pv import PvModel, cosine


def argmax_lowest(scores) -> int:
    """Index of the maximum score; ties resolve to the lowest index."""
    best, best_idx = None, 0
    for i, s in enumerate(scores):
        if best is None or s > best:
            best, best_idx = s, i
    return best_idx


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    chosen_index: int
    option_scores: tuple[float, ...]

    @classmethod
    def from_scores(cls, instance_id: str, scores) -> "Prediction":
        scores = tuple(float(s) for s in scores)
        return cls(instance_id=instance_id, chosen_index=argmax_lowest(scores),
                   option_scores=scores)


def baseline_random(instances, seed: int = 0):
    """Uniform choice per instance, keyed by (seed, instance id)."""
    for inst in instances:
        gen = rngmod.generator(seed, "baseline-random", inst.id)
        choice = int(gen.integers(len(inst.options)))
        scores = [0.0] * len(inst.options)
        scores[choice] = 1.0
        yield Prediction(instance_id=inst.id, chosen_index=choice,
                         option_scores=tuple(scores))


def baseline_bleu(instances, cfg: BleuConfig = DEFAULT_BLEU):
    """Pick the option with the highest BLEU against the article."""
    for inst in instances:
        article = tokenize(inst.article)
        scores = [bleu(tokenize(opt.text), article, cfg) for opt in inst.options]
        yield Prediction.from_scores(inst.id, scores)


def baseline_pv(instances, pv: PvModel, infer_steps: int = 20):
    """Pick the option whose inferred vector is closest to the article's.

    Inference is deterministic per token content, so repeated texts are
    memoized across instances.
    """
    cache: dict[tuple[str, ...], np.ndarray] = {}

    def vec(tokens: list[str]) -> np.ndarray:
        key = tuple(tokens)
        if key not in cache:
            cache[key] = pv.infer_vector(tokens, steps=infer_steps).vector
        return cache[key]

    for inst in instances:
        article_vec = vec(tokenize(inst.article))
        scores = []
        for opt in inst.options:
            v = vec(tokenize(opt.text))
            try:
                scores.append(cosine(article_vec, v))
            except ValueError:
                scores.append(-1.0)
        yield Prediction.from_scores(inst.id, scores)


@dataclass
class EvalReport:
    n: int
    accuracy: float
    errorbar: float | None = None
    per_difficulty: dict | None = None
    method_tag: str = ""
    prior: str = "beta(1,1)"

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n, "accuracy": self.accuracy, "errorbar": self.errorbar,
            "per_difficulty": self.per_difficulty, "method_tag": self.method_tag,
            "prior": self.prior,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def accuracy(predictions, instances, method_tag: str = "",
             errorbar_samples: int = 0, seed: int = 0) -> EvalReport:
    """Fraction of predictions matching the gold index, with optional error bar."""
    golds = {inst.id: inst for inst in instances}
    n_classes = max((len(inst.options) for inst in golds.values()), default=5)
    per_correct = [0] * n_classes
    per_total = [0] * n_classes
    n = correct = 0
    preds = list(predictions)
    for pred in preds:
        if pred.instance_id not in golds:
            raise KeyError(f"prediction for unknown instance {pred.instance_id!r}")
        inst = golds.pop(pred.instance_id)
        n += 1
        hit = int(pred.chosen_index == inst.gold_index)
        correct += hit
        per_correct[inst.gold_index] += hit
        per_total[inst.gold_index] += 1
    if golds:
        missing = next(iter(golds))
        raise ValueError(f"missing prediction for instance {missing!r}")
    if n == 0:
        raise ValueError("cannot compute accuracy over zero instances")
    err = None
    if errorbar_samples:
        used = [(c, t) for c, t in zip(per_correct, per_total) if t > 0]
        err = balanced_acc_errorbar([c for c, _ in used], [t for _, t in used],
                                    samples=errorbar_samples, seed=seed)
    return EvalReport(n=n, accuracy=correct / n, errorbar=err, method_tag=method_tag)


def balanced_acc_errorbar(per_class_correct, per_class_total,
                          samples: int = 10_000, seed: int = 0) -> float:
    """Posterior std of the balanced accuracy, Monte Carlo over Beta posteriors."""
    if samples < 1000:
        raise ValueError("need at least 1000 Monte Carlo samples")
    correct = np.asarray(per_class_correct, dtype=np.int64)
    total = np.asarray(per_class_total, dtype=np.int64)
    if correct.shape != total.shape or correct.size == 0:
        raise ValueError("per-class counts must align and be non-empty")
    if np.any(total <= 0):
        raise ValueError("every class needs at least one observation")
    if np.any(correct < 0) or np.any(correct > total):
        raise ValueError("correct counts must lie in [0, total]")
    gen = rngmod.generator(seed, "balanced-acc")
    draws = gen.beta(1.0 + correct, 1.0 + (total - correct),
                     size=(samples, correct.size))
    return float(draws.mean(axis=1).std())


def format_report_table(reports: list[EvalReport]) -> str:
    """Aligned text table: one row per method, accuracy in percent."""
    rows = [("Method", "n", "Accuracy")]
    for r in reports:
        acc = f"{100 * r.accuracy:.1f}"
        if r.errorbar is not None:
            acc += f" ± {100 * r.errorbar:.1f}"
        rows.append((r.method_tag or "?", str(r.n), acc))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 4))
    return "\n".join(lines)
