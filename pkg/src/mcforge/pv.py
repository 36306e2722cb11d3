"""Paragraph vectors over corpus titles (PV-DBOW) with negative sampling.

A per-title document vector is trained to predict the title's tokens against
negatives drawn from the unigram^0.75 noise distribution; the window is the
whole title and no word-input matrix is trained. Queries are exact
brute-force cosine scans. Training is deterministic in single-worker mode;
multi-worker mode does unsynchronized (hogwild) updates and is documented as
nondeterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import rng as rngmod
from .blobio import read_blob, write_blob
from .corpus import SENTINELS, Corpus, Vocabulary, build_vocab

PV_MAGIC = b"MCFORGE/PV/1\n"


@dataclass(frozen=True)
class PvConfig:
    dim: int = 256
    epochs: int = 5
    min_count: int = 5
    negative_samples: int = 10
    initial_lr: float = 0.025
    final_lr: float = 0.0001
    seed: int = 0
    window_is_whole_title: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negative_samples < 1:
            raise ValueError("negative_samples must be >= 1")
        if not (self.initial_lr > 0 and self.final_lr > 0):
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "epochs": self.epochs, "min_count": self.min_count,
            "negative_samples": self.negative_samples, "initial_lr": self.initial_lr,
            "final_lr": self.final_lr, "seed": self.seed,
            "window_is_whole_title": self.window_is_whole_title,
        }


@dataclass(frozen=True)
class InferredVector:
    """Inferred document vector plus inference metadata."""
    vector: np.ndarray
    all_unk: bool
    steps: int


@dataclass
class NeighborList:
    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp only over non-positive arguments, so large |x| cannot overflow
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class PvModel:
    def __init__(self, doc_vectors: np.ndarray, word_output_vectors: np.ndarray,
                 vocab: Vocabulary, config: PvConfig, doc_ids: list[str],
                 epoch_losses: list[float] | None = None):
        self.doc_vectors = doc_vectors
        self.word_output_vectors = word_output_vectors
        self.vocab = vocab
        self.config = config
        self.doc_ids = list(doc_ids)
        self.doc_index = {d: i for i, d in enumerate(self.doc_ids)}
        self.epoch_losses = list(epoch_losses or [])
        if len(self.doc_index) != len(self.doc_ids):
            raise ValueError("doc ids must be unique")
        if doc_vectors.shape[0] != len(self.doc_ids):
            raise ValueError("doc_vectors rows must match doc ids")
        self._unit_docs: np.ndarray | None = None
        self._doc_rank: np.ndarray | None = None

    # -- queries ----------------------------------------------------------

    def vector_for(self, doc_id: str) -> np.ndarray:
        return self.doc_vectors[self.doc_index[doc_id]]

    def _units(self) -> np.ndarray:
        if self._unit_docs is None:
            norms = np.linalg.norm(self.doc_vectors, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            self._unit_docs = (self.doc_vectors / norms).astype(np.float32)
        return self._unit_docs

    def _ranks(self) -> np.ndarray:
        # rank of each row's doc id in lexicographic order, for tie-breaking
        if self._doc_rank is None:
            order = sorted(range(len(self.doc_ids)), key=lambda i: self.doc_ids[i])
            rank = np.empty(len(order), dtype=np.int64)
            for r, i in enumerate(order):
                rank[i] = r
            self._doc_rank = rank
        return self._doc_rank

    def _top_rows(self, sims: np.ndarray, exclude_row: int, n: int) -> list[int]:
        """Exact top-n rows by (cosine desc, doc_id asc), excluding one row."""
        total = sims.shape[0]
        n = min(n, total - 1)
        if n <= 0:
            return []
        k = min(n + 1, total)  # +1 covers the excluded query row
        kth = np.partition(sims, total - k)[total - k]
        cand = np.flatnonzero(sims >= kth)
        rank = self._ranks()
        order = sorted(cand, key=lambda i: (-float(sims[i]), int(rank[i])))
        return [i for i in order if i != exclude_row][:n]

    def neighbors(self, query_id: str, n: int) -> NeighborList:
        """Exact brute-force top-n cosine neighbors of a stored title."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if query_id not in self.doc_index:
            raise KeyError(f"unknown document id {query_id!r}")
        row = self.doc_index[query_id]
        units = self._units()
        sims = units @ units[row]
        top = self._top_rows(sims, row, n)
        return NeighborList(query_id=query_id,
                            entries=[(self.doc_ids[i], float(sims[i])) for i in top])

    def iter_neighbors(self, n: int, chunk: int = 512):
        """Yield (doc_id, NeighborList) for every stored title, in row order."""
        units = self._units()
        total = units.shape[0]
        for start in range(0, total, chunk):
            block = units[start:start + chunk] @ units.T  # (chunk, total)
            for off in range(block.shape[0]):
                row = start + off
                top = self._top_rows(block[off], row, n)
                yield self.doc_ids[row], NeighborList(
                    query_id=self.doc_ids[row],
                    entries=[(self.doc_ids[i], float(block[off, i])) for i in top])

    # -- inference --------------------------------------------------------

    def _usable_ids(self, tokens) -> np.ndarray:
        ids = [self.vocab.token_to_id.get(t, 1) for t in tokens]
        return np.asarray([i for i in ids if i >= len(SENTINELS)], dtype=np.int64)

    def infer_vector(self, tokens, steps: int = 50, seed: int | None = None) -> InferredVector:
        """Optimize a fresh document vector with word parameters frozen.

        Deterministic given (tokens, seed): the RNG is keyed by the token
        content, so call order does not matter. Tokens absent from the
        vocabulary carry no signal; if none remain the seeded initialization
        is returned with all_unk set.
        """
        cfg = self.config
        base = cfg.seed if seed is None else seed
        digest = hashlib.blake2b("\x1f".join(tokens).encode("utf-8"), digest_size=8)
        gen = rngmod.generator(base, "pv-infer", int.from_bytes(digest.digest(), "little"))
        vec = ((gen.random(cfg.dim) - 0.5) / cfg.dim).astype(np.float32)
        ids = self._usable_ids(tokens)
        if ids.size == 0 or steps <= 0:
            return InferredVector(vector=vec, all_unk=ids.size == 0, steps=max(steps, 0))
        noise_ids, noise_cum = _noise_table(self.vocab)
        k = cfg.negative_samples
        for step in range(steps):
            lr = cfg.initial_lr - (cfg.initial_lr - cfg.final_lr) * (step / steps)
            negs = noise_ids[np.searchsorted(noise_cum, gen.random((ids.size, k)), side="right")]
            vec += _title_step(vec, ids, negs, self.word_output_vectors, lr,
                               update_words=False)[0]
        return InferredVector(vector=vec, all_unk=False, steps=steps)

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "config": self.config.to_dict(),
            "n_docs": len(self.doc_ids),
            "dim": self.config.dim,
            "doc_ids": self.doc_ids,
            "vocab": [[t, self.vocab.counts.get(t, 0)] for t in self.vocab.id_to_token[len(SENTINELS):]],
            "vocab_min_count": self.vocab.min_count,
            "vocab_max_types": self.vocab.max_types,
            "epoch_losses": self.epoch_losses,
        }
        write_blob(path, PV_MAGIC, header, {
            "doc_vectors": self.doc_vectors.astype(np.float32),
            "word_output_vectors": self.word_output_vectors.astype(np.float32),
        })

    @classmethod
    def load(cls, path) -> "PvModel":
        header, arrays = read_blob(path, PV_MAGIC)
        vocab = Vocabulary([(t, c) for t, c in header["vocab"]],
                           min_count=header["vocab_min_count"],
                           max_types=header["vocab_max_types"])
        return cls(arrays["doc_vectors"], arrays["word_output_vectors"], vocab,
                   PvConfig(**header["config"]), header["doc_ids"],
                   epoch_losses=header.get("epoch_losses"))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1]; zero vectors are an error."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine is undefined for zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _noise_table(vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Unigram^0.75 sampling table over non-sentinel vocabulary ids."""
    ids = np.arange(len(SENTINELS), len(vocab), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("vocabulary has no trainable tokens")
    weights = np.array([vocab.counts[vocab.id_to_token[i]] for i in ids], dtype=np.float64)
    weights **= 0.75
    cum = np.cumsum(weights / weights.sum())
    cum[-1] = 1.0
    return ids, cum


def _title_step(doc_vec: np.ndarray, pos_ids: np.ndarray, neg_ids: np.ndarray,
                words: np.ndarray, lr: float, update_words: bool) -> tuple[np.ndarray, float]:
    """One negative-sampling update over a whole title; returns (doc grad, loss)."""
    u_pos = words[pos_ids]                       # (L, dim)
    u_neg = words[neg_ids]                       # (L, k, dim)
    s_pos = u_pos @ doc_vec                      # (L,)
    s_neg = u_neg @ doc_vec                      # (L, k)
    neg_ok = (neg_ids != pos_ids[:, None])       # drop accidental true-word negatives
    loss = float(-np.sum(_log_sigmoid(s_pos)) - np.sum(_log_sigmoid(-s_neg)[neg_ok]))
    g_pos = (1.0 - _sigmoid(s_pos)) * lr         # label 1
    g_neg = (-_sigmoid(s_neg)) * lr * neg_ok     # label 0
    grad_doc = g_pos @ u_pos + np.einsum("lk,lkd->d", g_neg, u_neg)
    if update_words:
        np.add.at(words, pos_ids, g_pos[:, None] * doc_vec)
        np.add.at(words, neg_ids.reshape(-1),
                  (g_neg[..., None] * doc_vec).reshape(-1, doc_vec.shape[0]))
    return grad_doc.astype(np.float32), loss


def train_pv(corpus: Corpus, cfg: PvConfig = PvConfig(), workers: int = 1) -> PvModel:
    """Train PV-DBOW over corpus titles.

    workers=1 is bitwise deterministic given cfg.seed; workers>1 runs hogwild
    threads over shared tables and is nondeterministic by design.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    vocab = build_vocab(corpus, fields="title", min_count=cfg.min_count,
                        max_types=10_000_000)
    noise_ids, noise_cum = _noise_table(vocab)
    title_ids = []
    for doc in corpus:
        ids = [vocab.token_to_id[t] for t in doc.title_tokens() if t in vocab.token_to_id]
        title_ids.append(np.asarray(ids, dtype=np.int64))

    # both tables get small random inits: a zero word matrix stalls in a
    # sigmoid(0) plateau for many epochs at desk-scale corpus sizes
    init_gen = rngmod.generator(cfg.seed, "pv-init")
    docs = ((init_gen.random((len(corpus), cfg.dim)) - 0.5) / cfg.dim).astype(np.float32)
    words = ((init_gen.random((len(vocab), cfg.dim)) - 0.5)
             / np.sqrt(cfg.dim)).astype(np.float32)

    total_tokens = max(1, sum(len(t) for t in title_ids) * cfg.epochs)
    lr_span = cfg.initial_lr - cfg.final_lr
    k = cfg.negative_samples
    epoch_losses: list[float] = []

    def run_rows(rows, epoch, worker, processed_base, stride):
        # stride scales token progress so hogwild shards pace the lr decay
        # roughly like the single-worker schedule.
        gen = rngmod.generator(cfg.seed, "pv-epoch", epoch, worker)
        processed = processed_base
        loss_sum, loss_n = 0.0, 0
        for row in rows:
            ids = title_ids[row]
            if ids.size == 0:
                continue
            lr = cfg.initial_lr - lr_span * min(1.0, processed / total_tokens)
            negs = noise_ids[np.searchsorted(noise_cum, gen.random((ids.size, k)), side="right")]
            grad, loss = _title_step(docs[row], ids, negs, words, lr, update_words=True)
            docs[row] += grad
            processed += ids.size * stride
            loss_sum += loss
            loss_n += ids.size
        return loss_sum, loss_n

    for epoch in range(cfg.epochs):
        base = epoch * (total_tokens // cfg.epochs)
        if workers <= 1:
            loss_sum, loss_n = run_rows(range(len(corpus)), epoch, 0, base, 1)
        else:
            shards = [list(range(w, len(corpus), workers)) for w in range(workers)]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(
                    lambda args: run_rows(*args),
                    [(shards[w], epoch, w, base, workers) for w in range(workers)]))
            loss_sum = sum(p[0] for p in parts)
            loss_n = sum(p[1] for p in parts)
        epoch_losses.append(loss_sum / max(1, loss_n))

    if not (np.isfinite(docs).all() and np.isfinite(words).all()):
        raise FloatingPointError("paragraph-vector training produced non-finite values")
    return PvModel(docs, words, vocab, cfg, corpus.ids(), epoch_losses=epoch_losses)
