import json
from collections import Counter

import numpy as np
import pytest
import scipy.stats

from mcforge.corpus import Corpus, Document, tokenize
from mcforge.dataset import (
    McCreateConfig, McDataset, McInstance, McOption, assign_splits,
    build_dataset, build_rnd_dataset, combine, dataset_stats, export_pairs,
    score, validate_dataset,
)
from mcforge.pv import PvConfig, train_pv
from mcforge import rng as rngmod


# ---------------------------------------------------------------------------
# A 30-document micro-corpus with three topical clusters plus shared fillers,
# including one exact duplicate title pair inside a cluster.
# ---------------------------------------------------------------------------

def micro_corpus() -> Corpus:
    gen = np.random.default_rng(77)
    topics = [[f"t{k}w{j}" for j in range(8)] for k in range(3)]
    fillers = ["over", "new", "talks", "plan"]
    docs = []
    for i in range(30):
        k = i % 3
        words = list(gen.choice(topics[k], size=5)) + [fillers[int(gen.integers(4))]]
        title = " ".join(words)
        if i == 28:
            title = docs[25].title  # duplicate title in cluster 1
        article_words = list(gen.choice(topics[k], size=20)) + words[:3]
        docs.append(Document(f"m{i:02d}", title, " ".join(article_words)))
    return Corpus(docs)


@pytest.fixture(scope="module")
def micro():
    corpus = micro_corpus()
    model = train_pv(corpus, PvConfig(dim=16, epochs=40, min_count=1,
                                      negative_samples=5, initial_lr=0.05, seed=31))
    cfg = McCreateConfig(neighborhood=12, nr_decoys=4, seed=5,
                         split_ratios=(1.0, 0.0, 0.0))
    return corpus, model, cfg


@pytest.fixture(scope="module")
def micro_dataset(micro):
    corpus, model, cfg = micro
    return build_dataset(corpus, model, cfg)


# ---------------------------------------------------------------------------
# Straight-line reference implementation of the dataset-construction
# algorithm, kept deliberately naive: raw cosine math, dict-based BLEU,
# no shared code with the package beyond the model's stored vectors.
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


def oracle_mc_create(corpus, model, neighborhood, nr_decoys, lam_e, lam_s, guard):
    # mirror the model's float32 normalization so cosines agree bit-for-bit
    units = (model.doc_vectors
             / np.linalg.norm(model.doc_vectors, axis=1, keepdims=True)).astype(np.float32)
    row = model.doc_index
    out = {}
    for doc in corpus:
        sims = units @ units[row[doc.id]]
        ranked = sorted(((float(sims[row[c.id]]), c.id) for c in corpus if c.id != doc.id),
                        key=lambda sc: (-sc[0], sc[1]))[:neighborhood]
        scored = []
        for cos, cand_id in ranked:
            cand_tokens = tokenize(corpus[cand_id].title)
            sim_title = oracle_bleu(cand_tokens, tokenize(doc.title))
            if sim_title >= guard:
                s = 0.0
            else:
                sim_article = oracle_bleu(cand_tokens, tokenize(doc.article))
                s = max(0.0, lam_e * cos + lam_s * sim_title + (1 - lam_s) * sim_article)
            if s > 0.0:
                scored.append((s, cand_id))
        if len(scored) >= nr_decoys:
            ordered = sorted(scored, key=lambda sc: (-sc[0], sc[1]))
            out[doc.id] = ordered[:nr_decoys]
    return out


class TestScore:
    def test_identical_title_guarded(self, micro):
        corpus, model, cfg = micro
        # m25 and m28 share the same title text
        assert score("m28", "m25", model, corpus, cfg) == 0.0

    def test_linear_combination_arithmetic(self):
        # cos=0.8, bleu(title)=0.2, bleu(article)=0.4 with default weights -> 1.1
        lam_e, lam_s = 1.0, 0.5
        assert lam_e * 0.8 + lam_s * 0.2 + (1 - lam_s) * 0.4 == pytest.approx(1.1)

    def test_negative_floor(self, micro):
        corpus, model, cfg = micro
        # force a negative combination: lambda_e scaled hugely negative
        weird = McCreateConfig(neighborhood=12, nr_decoys=4, lambda_e=-100.0, seed=5)
        values = [score(c.id, "m00", model, corpus, weird)
                  for c in corpus if c.id != "m00"]
        assert min(values) == 0.0

    def test_unknown_title_rejected(self, micro):
        corpus, model, cfg = micro
        with pytest.raises(KeyError):
            score("nope", "m00", model, corpus, cfg)


class TestBuildDataset:
    def test_matches_straight_line_oracle(self, micro, micro_dataset):
        corpus, model, cfg = micro
        expected = oracle_mc_create(corpus, model, cfg.neighborhood, cfg.nr_decoys,
                                    cfg.lambda_e, cfg.lambda_s, cfg.surface_guard)
        got = {inst.id: inst for inst in micro_dataset}
        assert set(got) == set(expected)
        for doc_id, ranked in expected.items():
            inst = got[doc_id]
            # decoys in the instance are stored shuffled; recover descending
            # order through the stored scores
            by_text = {opt.doc_id: opt for opt in inst.decoys()}
            assert list(inst.decoy_scores) == pytest.approx(
                [s for s, _ in ranked], abs=1e-9)
            assert set(by_text) == {cand for _, cand in ranked}

    def test_duplicate_title_never_a_decoy_for_its_twin(self, micro_dataset):
        got = {inst.id: inst for inst in micro_dataset}
        if "m25" in got:
            assert "m28" not in {o.doc_id for o in got["m25"].decoys()}
        if "m28" in got:
            assert "m25" not in {o.doc_id for o in got["m28"].decoys()}

    def test_too_few_positives_emits_nothing(self, micro):
        corpus, model, _ = micro
        # an impossible guard forces every candidate score to zero
        cfg = McCreateConfig(neighborhood=12, nr_decoys=4, lambda_e=-1000.0, seed=5)
        ds = build_dataset(corpus, model, cfg)
        assert len(ds) == 0
        assert ds.provenance["stats"]["too_few_candidates"] == len(corpus)

    def test_deterministic_rebuild(self, micro, micro_dataset, tmp_path):
        corpus, model, cfg = micro
        again = build_dataset(corpus, model, cfg)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        micro_dataset.save_jsonl(p1)
        again.save_jsonl(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_worker_count_does_not_change_output(self, micro, micro_dataset):
        corpus, model, cfg = micro
        parallel = build_dataset(corpus, model, cfg, workers=4)
        assert parallel.instances == micro_dataset.instances

    def test_validator_passes(self, micro, micro_dataset):
        corpus, model, cfg = micro
        report = validate_dataset(micro_dataset, corpus, model, cfg)
        assert report.ok, report.failures[:5]
        assert report.passed == report.checked == len(micro_dataset)

    def test_jsonl_roundtrip(self, micro_dataset, tmp_path):
        path = tmp_path / "ds.jsonl"
        micro_dataset.save_jsonl(path)
        loaded = McDataset.load_jsonl(path)
        assert loaded.instances == micro_dataset.instances
        assert loaded.provenance == json.loads(
            (tmp_path / "ds.jsonl.provenance.json").read_text())

    def test_decoy_scores_positive_descending(self, micro_dataset):
        for inst in micro_dataset:
            scores = inst.decoy_scores
            assert all(s > 0 for s in scores)
            assert all(scores[i] >= scores[i + 1] for i in range(len(scores) - 1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            McCreateConfig(neighborhood=2, nr_decoys=4)
        with pytest.raises(ValueError):
            McCreateConfig(surface_guard=0.0)
        with pytest.raises(ValueError):
            McCreateConfig(split_ratios=(0.5, 0.2, 0.2))


class TestRndDataset:
    def test_deterministic(self, micro, micro_dataset):
        corpus, _, _ = micro
        a = build_rnd_dataset(corpus, micro_dataset, seed=9)
        b = build_rnd_dataset(corpus, micro_dataset, seed=9)
        assert a.instances == b.instances

    def test_decoys_differ_from_gold(self, micro, micro_dataset):
        corpus, _, _ = micro
        ds = build_rnd_dataset(corpus, micro_dataset, seed=9)
        for inst in ds:
            gold = inst.gold()
            assert all(o.text != gold.text for o in inst.decoys())
            assert inst.variant == "rnd"
            assert inst.decoy_scores == ()

    def test_decoy_multisets_mostly_change(self, micro, micro_dataset):
        corpus, _, _ = micro
        ds = build_rnd_dataset(corpus, micro_dataset, seed=9)
        base = {i.id: Counter(o.text for o in i.decoys()) for i in micro_dataset}
        changed = sum(Counter(o.text for o in inst.decoys()) != base[inst.id]
                      for inst in ds)
        assert changed >= 0.95 * len(ds)

    def test_small_corpus_rejected(self, micro_dataset):
        tiny = Corpus([Document("z0", "only title", "body")])
        with pytest.raises(ValueError):
            build_rnd_dataset(tiny, micro_dataset, seed=1)


class TestCombine:
    def test_nine_options_one_gold(self, micro, micro_dataset):
        corpus, _, _ = micro
        rnd = build_rnd_dataset(corpus, micro_dataset, seed=9)
        both = combine(micro_dataset, rnd)
        base_by_id = micro_dataset.by_id()
        rnd_by_id = rnd.by_id()
        for inst in both:
            assert len(inst.options) == 9
            assert inst.variant == "combined"
            expected = Counter([base_by_id[inst.id].gold().text]
                               + [o.text for o in base_by_id[inst.id].decoys()]
                               + [o.text for o in rnd_by_id[inst.id].decoys()])
            assert Counter(o.text for o in inst.options) == expected

    def test_id_mismatch_rejected(self, micro, micro_dataset):
        corpus, _, _ = micro
        rnd = build_rnd_dataset(corpus, micro_dataset, seed=9)
        rnd.instances.pop()
        with pytest.raises(ValueError):
            combine(micro_dataset, rnd)

    def test_gold_position_uniform_chi2(self):
        # synthetic combine over 5000 instances: gold index ~ uniform over 0..8
        base_insts, rnd_insts = [], []
        for i in range(5000):
            gold = McOption(f"g{i}", f"gold title {i}")
            pv_decoys = [McOption(f"p{i}.{j}", f"pv decoy {i} {j}") for j in range(4)]
            rnd_decoys = [McOption(f"r{i}.{j}", f"rnd decoy {i} {j}") for j in range(4)]
            base_insts.append(McInstance(
                id=f"i{i}", article="a", options=(gold, *pv_decoys), gold_index=0,
                decoy_scores=(4.0, 3.0, 2.0, 1.0), variant="pv"))
            rnd_insts.append(McInstance(
                id=f"i{i}", article="a", options=(gold, *rnd_decoys), gold_index=0,
                decoy_scores=(), variant="rnd"))
        both = combine(McDataset(base_insts, {"seed": 3}), McDataset(rnd_insts))
        counts = Counter(inst.gold_index for inst in both)
        freq = [counts.get(k, 0) for k in range(9)]
        _, p = scipy.stats.chisquare(freq)
        assert p > 0.01


class TestSplits:
    def test_all_train(self, micro_dataset):
        ds = assign_splits(micro_dataset, (1.0, 0.0, 0.0), seed=1)
        assert {i.split for i in ds} == {"train"}

    def test_stable_under_reordering(self, micro_dataset):
        ds = assign_splits(micro_dataset, (0.6, 0.2, 0.2), seed=1)
        reordered = McDataset(list(reversed(ds.instances)), ds.provenance)
        again = assign_splits(reordered, (0.6, 0.2, 0.2), seed=1)
        by_id = {i.id: i.split for i in again}
        assert all(by_id[i.id] == i.split for i in ds)

    def test_ratio_accuracy_on_10k_ids(self):
        insts = [McInstance(id=f"x{i}", article="a",
                            options=(McOption("g", "t"), McOption("d", "u")),
                            gold_index=0, decoy_scores=(), variant="rnd")
                 for i in range(10_000)]
        ds = assign_splits(McDataset(insts), (0.8, 0.1, 0.1), seed=2)
        counts = Counter(i.split for i in ds)
        assert abs(counts["train"] / 10_000 - 0.8) < 0.01
        assert abs(counts["dev"] / 10_000 - 0.1) < 0.01
        assert abs(counts["test"] / 10_000 - 0.1) < 0.01


class TestExportPairs:
    def test_grouped_layout(self, micro_dataset):
        pairs = list(export_pairs(micro_dataset, "grouped"))
        n_opts = len(micro_dataset.instances[0].options)
        for i, inst in enumerate(micro_dataset):
            block = pairs[i * n_opts:(i + 1) * n_opts]
            assert all(p.article == inst.article for p in block)
            assert sum(p.label for p in block) == 1

    def test_same_multiset(self, micro_dataset):
        grouped = Counter(list(export_pairs(micro_dataset, "grouped")))
        shuffled = Counter(list(export_pairs(micro_dataset, "shuffled", seed=6)))
        assert grouped == shuffled

    def test_shuffle_reproducible(self, micro_dataset):
        a = list(export_pairs(micro_dataset, "shuffled", seed=6))
        b = list(export_pairs(micro_dataset, "shuffled", seed=6))
        assert a == b

    def test_unknown_order_rejected(self, micro_dataset):
        with pytest.raises(ValueError):
            list(export_pairs(micro_dataset, "sorted"))


def test_dataset_stats_shape(micro_dataset):
    stats = dataset_stats(assign_splits(micro_dataset, (0.6, 0.2, 0.2), seed=1))
    assert set(stats) == {"train", "dev", "test"}
    total = sum(stats[s]["instances"] for s in stats)
    assert total == len(micro_dataset)
    assert stats["train"]["avg_tokens_article"] > 0


def test_gold_index_uniform_across_instances():
    # instance option shuffling is keyed by instance id: positions are uniform
    counts = Counter()
    for i in range(2000):
        gen = rngmod.generator(0, "mc-shuffle", f"doc{i}")
        perm = list(gen.permutation(5))
        counts[perm.index(0)] += 1
    _, p = scipy.stats.chisquare([counts[k] for k in range(5)])
    assert p > 0.01
