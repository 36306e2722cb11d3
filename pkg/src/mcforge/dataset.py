"""Build multiple-choice datasets by mining decoy titles.

For every document, the candidate decoys are the title's nearest paragraph-
vector neighbors; each candidate is scored by a weighted blend of embedding
cosine and surface similarity to the true title and to the article, with a
guard that zeroes candidates too surface-similar to the true title. A
document emits one 5-way instance when at least `nr_decoys` candidates score
positive. Variants: `pv` (mined decoys), `rnd` (uniform random decoys), and
`combined` (1 gold + 8 decoys, training only).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from . import rng as rngmod
from .corpus import TOKENIZER_SPEC, Corpus, tokenize
from .metrics import DEFAULT_BLEU, BleuConfig, bleu, bleu_from_counts, ngram_counts
from .pv import PvModel, cosine

SPLITS = ("train", "dev", "test")
VARIANTS = ("pv", "rnd", "combined")


@dataclass(frozen=True)
class McCreateConfig:
    neighborhood: int = 100          # how many PV neighbors to score per title
    nr_decoys: int = 4
    lambda_e: float = 1.0
    lambda_s: float = 0.5
    surface_guard: float = 0.5       # candidates with BLEU-vs-gold >= this score 0
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    bleu: BleuConfig = DEFAULT_BLEU

    def __post_init__(self):
        if self.neighborhood < self.nr_decoys:
            raise ValueError("neighborhood must be >= nr_decoys")
        if not (0.0 < self.surface_guard <= 1.0):
            raise ValueError("surface_guard must be in (0, 1]")
        if not (0.0 <= self.lambda_s <= 1.0):
            raise ValueError("lambda_s must be in [0, 1]")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9 or any(r < 0 for r in self.split_ratios):
            raise ValueError("split_ratios must be non-negative and sum to 1")

    def to_dict(self) -> dict:
        return {
            "neighborhood": self.neighborhood, "nr_decoys": self.nr_decoys,
            "lambda_e": self.lambda_e, "lambda_s": self.lambda_s,
            "surface_guard": self.surface_guard, "seed": self.seed,
            "split_ratios": list(self.split_ratios),
            "bleu_max_order": self.bleu.max_order,
        }


@dataclass(frozen=True)
class McOption:
    doc_id: str
    text: str


@dataclass(frozen=True)
class McInstance:
    id: str
    article: str
    options: tuple[McOption, ...]
    gold_index: int
    decoy_scores: tuple[float, ...]   # descending; empty for variant="rnd"
    split: str = "train"
    variant: str = "pv"

    def gold(self) -> McOption:
        return self.options[self.gold_index]

    def decoys(self) -> list[McOption]:
        return [o for i, o in enumerate(self.options) if i != self.gold_index]


@dataclass
class McDataset:
    instances: list[McInstance]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def split(self, name: str) -> list[McInstance]:
        return [inst for inst in self.instances if inst.split == name]

    def by_id(self) -> dict[str, McInstance]:
        return {inst.id: inst for inst in self.instances}

    # -- serialization ----------------------------------------------------

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for inst in self.instances:
                fh.write(json.dumps({
                    "id": inst.id,
                    "article": inst.article,
                    "options": [o.text for o in inst.options],
                    "option_ids": [o.doc_id for o in inst.options],
                    "label": inst.gold_index,
                    "decoy_scores": list(inst.decoy_scores),
                    "split": inst.split,
                    "variant": inst.variant,
                }, sort_keys=True, separators=(",", ":"), ensure_ascii=False))
                fh.write("\n")
        with open(str(path) + ".provenance.json", "w", encoding="utf-8") as fh:
            json.dump(self.provenance, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load_jsonl(cls, path) -> "McDataset":
        instances = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                opts = tuple(McOption(doc_id=i, text=t)
                             for i, t in zip(obj["option_ids"], obj["options"]))
                instances.append(McInstance(
                    id=obj["id"], article=obj["article"], options=opts,
                    gold_index=obj["label"],
                    decoy_scores=tuple(obj["decoy_scores"]),
                    split=obj["split"], variant=obj["variant"]))
        provenance = {}
        try:
            with open(str(path) + ".provenance.json", "r", encoding="utf-8") as fh:
                provenance = json.load(fh)
        except FileNotFoundError:
            pass
        return cls(instances, provenance)


def corpus_fingerprint(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for doc in corpus:
        h.update(doc.id.encode("utf-8"))
        h.update(b"\x1f")
        h.update(doc.title.encode("utf-8"))
        h.update(b"\x1f")
        h.update(doc.article.encode("utf-8"))
        h.update(b"\x1e")
    return h.hexdigest()


def model_fingerprint(pv: PvModel) -> str:
    h = hashlib.sha256()
    h.update(pv.doc_vectors.astype("<f4").tobytes())
    h.update(pv.word_output_vectors.astype("<f4").tobytes())
    return h.hexdigest()


# -- scoring ---------------------------------------------------------------

def score(candidate_id: str, target_id: str, pv: PvModel, corpus: Corpus,
          cfg: McCreateConfig = McCreateConfig()) -> float:
    """Decoy quality of a stored candidate title for a (title, article) target.

    Returns 0 when the candidate is too surface-similar to the true title;
    otherwise a weighted blend of embedding cosine and surface similarity,
    floored at 0 so "positive score" keeps its meaning when cosine < 0.
    """
    for doc_id in (candidate_id, target_id):
        if doc_id not in pv.doc_index:
            raise KeyError(f"title {doc_id!r} is not stored in the model")
    cand = corpus[candidate_id].title_tokens()
    target = corpus[target_id]
    sim_title = bleu(cand, target.title_tokens(), cfg.bleu)
    if sim_title >= cfg.surface_guard:
        return 0.0
    cos = cosine(pv.vector_for(candidate_id), pv.vector_for(target_id))
    sim_article = bleu(cand, target.article_tokens(), cfg.bleu)
    raw = cfg.lambda_e * cos + cfg.lambda_s * sim_title + (1.0 - cfg.lambda_s) * sim_article
    return max(0.0, raw)


class _ScoreKernel:
    """Precomputed n-gram tables so millions of candidate scores stay cheap."""

    def __init__(self, corpus: Corpus, cfg: McCreateConfig):
        self.cfg = cfg
        order = cfg.bleu.max_order
        self.title_tokens: dict[str, list[str]] = {}
        self.title_counts: dict[str, list[Counter]] = {}
        self.article_counts: dict[str, list[Counter]] = {}
        for doc in corpus:
            toks = doc.title_tokens()
            self.title_tokens[doc.id] = toks
            self.title_counts[doc.id] = ngram_counts(toks, order)
            self.article_counts[doc.id] = ngram_counts(doc.article_tokens(), order)

    def __call__(self, candidate_id: str, target_id: str, cos: float) -> float:
        cfg = self.cfg
        cand_counts = self.title_counts[candidate_id]
        cand_len = len(self.title_tokens[candidate_id])
        sim_title = bleu_from_counts(cand_counts, cand_len,
                                     self.title_counts[target_id], cfg.bleu)
        if sim_title >= cfg.surface_guard:
            return 0.0
        sim_article = bleu_from_counts(cand_counts, cand_len,
                                       self.article_counts[target_id], cfg.bleu)
        raw = cfg.lambda_e * cos + cfg.lambda_s * sim_title + (1.0 - cfg.lambda_s) * sim_article
        return max(0.0, raw)


# -- dataset construction ---------------------------------------------------

@dataclass
class BuildStats:
    docs: int = 0
    emitted: int = 0
    too_few_candidates: int = 0
    duplicate_option_skips: int = 0


def _assemble(doc_id: str, article: str, gold_text: str,
              ranked: list[tuple[float, str]], texts: dict[str, str],
              cfg: McCreateConfig, variant: str) -> McInstance | None:
    """Pick distinct-text decoys off the ranked list and shuffle options."""
    chosen: list[tuple[float, str]] = []
    seen = {gold_text}
    for sc, cand_id in ranked:
        text = texts[cand_id]
        if text in seen:
            continue
        seen.add(text)
        chosen.append((sc, cand_id))
        if len(chosen) == cfg.nr_decoys:
            break
    if len(chosen) < cfg.nr_decoys:
        return None
    options = [McOption(doc_id, gold_text)] + [McOption(c, texts[c]) for _, c in chosen]
    gen = rngmod.generator(cfg.seed, "mc-shuffle", doc_id)
    perm = list(gen.permutation(len(options)))
    shuffled = tuple(options[i] for i in perm)
    return McInstance(
        id=doc_id, article=article, options=shuffled,
        gold_index=perm.index(0),
        decoy_scores=tuple(sc for sc, _ in chosen),
        variant=variant)


def build_dataset(corpus: Corpus, pv: PvModel, cfg: McCreateConfig = McCreateConfig(),
                  workers: int = 1) -> McDataset:
    """Run the decoy-mining algorithm over a corpus.

    Deterministic given (corpus, pv, cfg): per-document work is independent
    and results are assembled in corpus order regardless of worker count.
    """
    missing = [d.id for d in corpus if d.id not in pv.doc_index]
    if missing:
        raise ValueError(f"{len(missing)} corpus ids missing from the PV model "
                         f"(first: {missing[0]!r})")
    kernel = _ScoreKernel(corpus, cfg)
    texts = {d.id: d.title for d in corpus}
    articles = {d.id: d.article for d in corpus}
    stats = BuildStats(docs=len(corpus))

    def handle(doc_id: str, neighbor_entries):
        candidates = []
        for cand_id, cos in neighbor_entries:
            sc = kernel(cand_id, doc_id, cos)
            if sc > 0.0:
                candidates.append((sc, cand_id))
        if len(candidates) < cfg.nr_decoys:
            return "too_few", None
        candidates.sort(key=lambda sc_id: (-sc_id[0], sc_id[1]))
        inst = _assemble(doc_id, articles[doc_id], texts[doc_id], candidates,
                         texts, cfg, "pv")
        return ("dup_skip", None) if inst is None else ("ok", inst)

    instances: list[McInstance] = []

    def collect(outcome):
        kind, inst = outcome
        if kind == "ok":
            instances.append(inst)
        elif kind == "too_few":
            stats.too_few_candidates += 1
        else:
            stats.duplicate_option_skips += 1

    neighbor_iter = pv.iter_neighbors(cfg.neighborhood)
    if workers <= 1:
        for doc_id, nl in neighbor_iter:
            collect(handle(doc_id, nl.entries))
    else:
        # results are gathered via ordered pool.map, so output order (and the
        # dataset bytes) do not depend on worker scheduling
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batch: list[tuple[str, list]] = []

            def flush():
                for outcome in pool.map(lambda args: handle(*args), batch):
                    collect(outcome)
                batch.clear()

            for doc_id, nl in neighbor_iter:
                batch.append((doc_id, nl.entries))
                if len(batch) >= 64 * workers:
                    flush()
            flush()
    stats.emitted = len(instances)

    ds = McDataset(instances, provenance={
        "builder": "mcforge.build_dataset/1",
        "variant": "pv",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "tokenizer": TOKENIZER_SPEC,
        "corpus_sha256": corpus_fingerprint(corpus),
        "pv_sha256": model_fingerprint(pv),
        "stats": {"docs": stats.docs, "emitted": stats.emitted,
                  "too_few_candidates": stats.too_few_candidates,
                  "duplicate_option_skips": stats.duplicate_option_skips},
    })
    return assign_splits(ds, cfg.split_ratios, cfg.seed)


def build_rnd_dataset(corpus: Corpus, base: McDataset, seed: int,
                      cfg: McCreateConfig | None = None) -> McDataset:
    """Replace each base instance's decoys with uniform random distinct titles."""
    cfg = cfg or McCreateConfig(**_config_from(base))
    all_ids = corpus.ids()
    if len(all_ids) < cfg.nr_decoys + 1:
        raise ValueError("corpus too small to sample random decoys")
    bleu_cfg = cfg.bleu
    instances = []
    for inst in base:
        gold = inst.gold()
        gold_tokens = tokenize(gold.text)
        gen = rngmod.generator(seed, "rnd-decoys", inst.id)
        chosen: list[McOption] = []
        seen = {gold.text}
        attempts = 0
        while len(chosen) < cfg.nr_decoys:
            attempts += 1
            if attempts > 200 * cfg.nr_decoys:
                raise ValueError(f"cannot sample distinct random decoys for {inst.id!r}")
            cand_id = all_ids[int(gen.integers(len(all_ids)))]
            if cand_id == inst.id:
                continue
            text = corpus[cand_id].title
            if text in seen:
                continue
            if bleu(tokenize(text), gold_tokens, bleu_cfg) >= cfg.surface_guard:
                continue
            seen.add(text)
            chosen.append(McOption(cand_id, text))
        options = [gold] + chosen
        perm = list(gen.permutation(len(options)))
        instances.append(replace(
            inst,
            options=tuple(options[i] for i in perm),
            gold_index=perm.index(0),
            decoy_scores=(),
            variant="rnd"))
    provenance = dict(base.provenance)
    provenance.update({"variant": "rnd", "rnd_seed": seed, "base_variant": "pv"})
    return McDataset(instances, provenance)


def combine(base: McDataset, rnd: McDataset, seed: int | None = None) -> McDataset:
    """Merge pv and rnd decoys into 1-gold / 8-decoy training instances.

    Instances whose decoy texts collide across the two sources are dropped
    (and tallied) to keep options textually distinct.
    """
    if seed is None:
        seed = int(base.provenance.get("seed", 0))
    rnd_by_id = rnd.by_id()
    if set(rnd_by_id) != {inst.id for inst in base}:
        raise ValueError("base and rnd datasets cover different instance ids")
    instances = []
    dropped = 0
    for inst in base:
        other = rnd_by_id[inst.id]
        if other.gold().text != inst.gold().text:
            raise ValueError(f"gold mismatch for instance {inst.id!r}")
        options = [inst.gold()] + inst.decoys() + other.decoys()
        texts = [o.text for o in options]
        if len(set(texts)) != len(texts):
            dropped += 1
            continue
        gen = rngmod.generator(seed, "combine-shuffle", inst.id)
        perm = list(gen.permutation(len(options)))
        instances.append(replace(
            inst,
            options=tuple(options[i] for i in perm),
            gold_index=perm.index(0),
            decoy_scores=inst.decoy_scores,
            variant="combined"))
    provenance = dict(base.provenance)
    provenance.update({"variant": "combined", "combine_dropped": dropped})
    return McDataset(instances, provenance)


def assign_splits(ds: McDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> McDataset:
    """Assign splits by keyed hash of instance id: stable under reordering."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative and sum to 1")
    train_cut = ratios[0]
    dev_cut = ratios[0] + ratios[1]
    instances = []
    for inst in ds:
        u = rngmod.unit_hash(seed, "split", inst.id)
        split = "train" if u < train_cut else ("dev" if u < dev_cut else "test")
        instances.append(replace(inst, split=split))
    provenance = dict(ds.provenance)
    provenance["split_ratios"] = list(ratios)
    provenance["split_seed"] = seed
    return McDataset(instances, provenance)


@dataclass(frozen=True)
class Pair:
    title: str
    article: str
    label: int


def export_pairs(ds: McDataset, order: str = "grouped", seed: int = 0):
    """Stream (title, article, label) pairs, instance-contiguous or shuffled."""
    if order not in ("grouped", "shuffled"):
        raise ValueError(f"order must be grouped|shuffled, got {order!r}")
    if len(ds) == 0:
        raise ValueError("cannot export pairs from an empty dataset")
    pairs = [Pair(opt.text, inst.article, int(i == inst.gold_index))
             for inst in ds for i, opt in enumerate(inst.options)]
    if order == "shuffled":
        gen = rngmod.generator(seed, "pairs-shuffle")
        pairs = [pairs[i] for i in gen.permutation(len(pairs))]
    yield from pairs


# -- validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    checked: int = 0
    passed: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.checked > 0 and not self.failures

    def add_failure(self, inst_id: str, why: str) -> None:
        self.failures.append(f"{inst_id}: {why}")


def validate_dataset(ds: McDataset, corpus: Corpus, pv: PvModel | None,
                     cfg: McCreateConfig, tol: float = 1e-6) -> ValidationReport:
    """Re-check every instance invariant; pv may be None for rnd-only checks."""
    report = ValidationReport()
    for inst in ds:
        report.checked += 1
        bad = len(report.failures)
        n_expected = 9 if inst.variant == "combined" else 5
        if len(inst.options) != n_expected:
            report.add_failure(inst.id, f"expected {n_expected} options, got {len(inst.options)}")
        if not (0 <= inst.gold_index < len(inst.options)):
            report.add_failure(inst.id, "gold index out of range")
            continue
        texts = [o.text for o in inst.options]
        if len(set(texts)) != len(texts):
            report.add_failure(inst.id, "duplicate option text")
        if inst.id not in corpus:
            report.add_failure(inst.id, "unknown document id")
            continue
        doc = corpus[inst.id]
        if inst.gold().text != doc.title or inst.gold().doc_id != inst.id:
            report.add_failure(inst.id, "gold option does not match the source title")
        if inst.split not in SPLITS or inst.variant not in VARIANTS:
            report.add_failure(inst.id, "bad split or variant tag")
        gold_tokens = doc.title_tokens()
        for opt in inst.decoys():
            if bleu(tokenize(opt.text), gold_tokens, cfg.bleu) >= cfg.surface_guard:
                report.add_failure(inst.id, f"decoy {opt.doc_id!r} violates the surface guard")
        if inst.variant in ("pv", "combined"):
            scores = list(inst.decoy_scores)
            if len(scores) != cfg.nr_decoys:
                report.add_failure(inst.id, "wrong decoy_scores arity")
            if any(s <= 0 for s in scores):
                report.add_failure(inst.id, "non-positive decoy score")
            if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
                report.add_failure(inst.id, "decoy scores not non-increasing")
            if inst.variant == "pv" and pv is not None:
                recomputed = sorted(
                    (score(opt.doc_id, inst.id, pv, corpus, cfg) for opt in inst.decoys()),
                    reverse=True)
                if len(recomputed) == len(scores) and any(
                        abs(a - b) > tol for a, b in zip(recomputed, scores)):
                    report.add_failure(inst.id, "stored decoy scores do not recompute")
        if len(report.failures) == bad:
            report.passed += 1
    return report


def dataset_stats(ds: McDataset) -> dict:
    """Instance counts and token averages per split (articles and gold answers)."""
    out = {}
    for split in SPLITS:
        insts = ds.split(split)
        if not insts:
            out[split] = {"instances": 0, "avg_tokens_article": 0.0, "avg_tokens_answer": 0.0}
            continue
        art = sum(len(tokenize(i.article)) for i in insts) / len(insts)
        ans = sum(len(tokenize(i.gold().text)) for i in insts) / len(insts)
        out[split] = {"instances": len(insts),
                      "avg_tokens_article": round(art, 1),
                      "avg_tokens_answer": round(ans, 1)}
    return out


def _config_from(ds: McDataset) -> dict:
    cfg = dict(ds.provenance.get("config", {}))
    cfg.pop("bleu_max_order", None)
    if "split_ratios" in cfg:
        cfg["split_ratios"] = tuple(cfg["split_ratios"])
    return cfg
