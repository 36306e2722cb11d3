"""Synthetic (title, article) corpus generator for tests and demos.

Documents are grouped into topics sharing a noun/verb pool, so titles inside
a topic are embedding-confusable; each document gets rare entity tokens, and
the title's core phrase is copied verbatim into the article with some
probability, so surface matching carries real signal. Entity tokens are rare
enough to fall under typical frequency cutoffs, keeping them invisible to
the paragraph-vector model.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import rng as rngmod
from .corpus import Corpus, Document

_VOWELS = "aeiou"
_CONSONANTS = "bcdfghjklmnprstvz"

_FILLERS = (
    "the a of in on for with as at to after over amid new talks plan deal "
    "report chief says set off back against under across again first last"
).split()


def _pseudo_word(gen, syllables: int) -> str:
    out = []
    for _ in range(syllables):
        out.append(_CONSONANTS[gen.integers(len(_CONSONANTS))])
        out.append(_VOWELS[gen.integers(len(_VOWELS))])
    if gen.random() < 0.4:
        out.append(_CONSONANTS[gen.integers(len(_CONSONANTS))])
    return "".join(out)


@dataclass(frozen=True)
class SynthConfig:
    n_docs: int = 22_000
    n_topics: int = 40
    nouns_per_topic: int = 30
    verbs_per_topic: int = 8
    entity_pool_factor: float = 2.0
    core_phrase_prob: float = 0.75
    seed: int = 0


def _word_pools(cfg: SynthConfig):
    gen = rngmod.generator(cfg.seed, "synth", "pools")
    seen: set[str] = set(_FILLERS)

    def fresh(syllables: int) -> str:
        while True:
            w = _pseudo_word(gen, syllables)
            if w not in seen:
                seen.add(w)
                return w

    nouns = [[fresh(2) for _ in range(cfg.nouns_per_topic)] for _ in range(cfg.n_topics)]
    verbs = [[fresh(2) for _ in range(cfg.verbs_per_topic)] for _ in range(cfg.n_topics)]
    n_entities = max(8, int(cfg.n_docs * cfg.entity_pool_factor))
    entities = [fresh(3) for _ in range(n_entities)]
    return nouns, verbs, entities


def synthesize(cfg: SynthConfig = SynthConfig()) -> Corpus:
    """Generate a deterministic corpus of templated topical documents."""
    nouns, verbs, entities = _word_pools(cfg)
    docs = []
    for i in range(cfg.n_docs):
        gen = rngmod.generator(cfg.seed, "synth", "doc", i)
        topic = int(gen.integers(cfg.n_topics))
        tn, tv = nouns[topic], verbs[topic]
        e1, e2 = (entities[j] for j in gen.choice(len(entities), size=2, replace=False))

        # Title: rare-entity core phrase plus a few topical/filler tokens.
        core = [e1, tv[gen.integers(len(tv))], tn[gen.integers(len(tn))],
                tn[gen.integers(len(tn))]]
        extra = [tn[gen.integers(len(tn))] if gen.random() < 0.7
                 else _FILLERS[gen.integers(len(_FILLERS))]
                 for _ in range(int(gen.integers(4, 8)))]
        cut = int(gen.integers(len(extra) + 1))
        title_tokens = extra[:cut] + core + extra[cut:]

        # Article: topical sentences; one may embed the title core verbatim.
        n_sent = int(gen.integers(4, 8))
        phrase_sent = int(gen.integers(n_sent)) if gen.random() < cfg.core_phrase_prob else -1
        sentences = []
        for s in range(n_sent):
            length = int(gen.integers(7, 13))
            words = []
            for _ in range(length):
                r = gen.random()
                if r < 0.55:
                    words.append(tn[gen.integers(len(tn))])
                elif r < 0.65:
                    words.append(tv[gen.integers(len(tv))])
                elif r < 0.75:
                    words.append(e1 if gen.random() < 0.5 else e2)
                else:
                    words.append(_FILLERS[gen.integers(len(_FILLERS))])
            if s == phrase_sent:
                at = int(gen.integers(len(words) + 1))
                words = words[:at] + core + words[at:]
            sentences.append(" ".join(words) + " .")

        docs.append(Document(
            id=f"syn{i:06d}",
            title=" ".join(title_tokens),
            article=" ".join(sentences),
        ))
    return Corpus(docs, source_tag=f"synth(seed={cfg.seed},n={cfg.n_docs})")
