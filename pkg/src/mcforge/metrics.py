"""Surface similarity metrics: BLEU (brevity penalty fixed to 1) and ROUGE-L.

Both are pure functions of token lists. BLEU uses uniform-weight geometric
mean of clipped n-gram precisions with the effective order capped at the
candidate length, no smoothing: any zero precision gives score 0. A
precomputed-reference variant exists because the dataset builder scores
millions of candidate/reference pairs against a fixed reference set.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class BleuConfig:
    max_order: int = 4
    brevity_penalty_fixed_to_one: bool = True

    def __post_init__(self):
        if not 1 <= self.max_order <= 9:
            raise ValueError(f"max_order must be in 1..9, got {self.max_order}")


DEFAULT_BLEU = BleuConfig()


def ngram_counts(tokens, max_order: int) -> list[Counter]:
    """Counters of n-grams for n = 1..max_order (index 0 holds unigrams)."""
    out = []
    for n in range(1, max_order + 1):
        out.append(Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)))
    return out


def bleu_from_counts(cand_counts: list[Counter], cand_len: int,
                     ref_counts: list[Counter], cfg: BleuConfig = DEFAULT_BLEU,
                     ref_len: int | None = None) -> float:
    """BLEU kernel over precomputed n-gram counters."""
    if cand_len == 0:
        return 0.0
    effective = min(cfg.max_order, cand_len)
    log_sum = 0.0
    for n in range(1, effective + 1):
        counts = cand_counts[n - 1]
        total = cand_len - n + 1
        clipped = sum(min(c, ref_counts[n - 1][g]) for g, c in counts.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    score = math.exp(log_sum / effective)
    if not cfg.brevity_penalty_fixed_to_one and ref_len is not None and cand_len < ref_len:
        score *= math.exp(1.0 - ref_len / cand_len)
    return min(score, 1.0)


def bleu(candidate, reference, cfg: BleuConfig = DEFAULT_BLEU) -> float:
    """Sentence BLEU of `candidate` against a single `reference`."""
    candidate = list(candidate)
    reference = list(reference)
    if not candidate:
        return 0.0
    order = min(cfg.max_order, len(candidate))
    return bleu_from_counts(ngram_counts(candidate, order), len(candidate),
                            ngram_counts(reference, order), cfg,
                            ref_len=len(reference))


def lcs_length(a, b) -> int:
    """Longest common subsequence length, two-row dynamic program."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """ROUGE-L F-measure with beta=1 (harmonic mean of LCS precision/recall)."""
    candidate = list(candidate)
    reference = list(reference)
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2.0 * p * r / (p + r)
