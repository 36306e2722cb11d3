"""Corpus ingestion, tokenization, and frequency-filtered vocabularies.

Input format is UTF-8 JSON Lines, one {"id", "title", "article"} object per
line. The tokenizer (lowercase, Unicode-whitespace split, leading/trailing
ASCII punctuation peeled into separate tokens) is deliberately simple and is
recorded in dataset provenance so outputs stay comparable.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SENTINELS = ("<pad>", "<unk>", "<bos>", "<eos>")

_ASCII_PUNCT = frozenset(string.punctuation)

TOKENIZER_SPEC = "lowercase|unicode-ws-split|peel-ascii-edge-punct|v1"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, peel edge ASCII punctuation.

    Interior punctuation (e.g. "pm's") is kept; each peeled punctuation
    character becomes its own token, in original text order.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        while chunk and chunk[0] in _ASCII_PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and chunk[-1] in _ASCII_PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    article: str

    def title_tokens(self) -> list[str]:
        return tokenize(self.title)

    def article_tokens(self) -> list[str]:
        return tokenize(self.article)


class Corpus:
    """Ordered, duplicate-free collection of documents."""

    def __init__(self, docs, source_tag: str = ""):
        self.docs: tuple[Document, ...] = tuple(docs)
        self.source_tag = source_tag
        self._by_id: dict[str, Document] = {}
        for doc in self.docs:
            if doc.id in self._by_id:
                raise ValueError(f"duplicate document id {doc.id!r}")
            self._by_id[doc.id] = doc

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)

    def __getitem__(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def ids(self) -> list[str]:
        return [d.id for d in self.docs]


@dataclass
class IngestStats:
    lines_read: int = 0
    docs_kept: int = 0
    skipped: Counter = field(default_factory=Counter)

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())


def _validate_line(line: str, seen_ids: set) -> tuple[Document | None, str | None]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None, "malformed_json"
    if not isinstance(obj, dict):
        return None, "malformed_json"
    for key in ("id", "title", "article"):
        if not isinstance(obj.get(key), str):
            return None, "missing_field"
    if not obj["id"]:
        return None, "missing_field"
    if obj["id"] in seen_ids:
        return None, "duplicate_id"
    if not tokenize(obj["title"]):
        return None, "empty_title"
    if not tokenize(obj["article"]):
        return None, "empty_article"
    return Document(id=obj["id"], title=obj["title"], article=obj["article"]), None


def ingest(path, limit: int | None = None) -> tuple[Corpus, IngestStats]:
    """Read a JSONL corpus, skipping and tallying invalid lines.

    An unreadable file raises; bad lines are skipped per-line. `limit` caps
    the number of *valid* documents kept, preserving file order.
    """
    stats = IngestStats()
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if limit is not None and len(docs) >= limit:
                break
            if not line.strip():
                continue
            stats.lines_read += 1
            doc, reason = _validate_line(line, seen)
            if doc is None:
                stats.skipped[reason] += 1
                continue
            seen.add(doc.id)
            docs.append(doc)
    stats.docs_kept = len(docs)
    return Corpus(docs, source_tag=str(path)), stats


def write_jsonl(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(
                {"id": doc.id, "title": doc.title, "article": doc.article},
                sort_keys=True, separators=(",", ":"), ensure_ascii=False))
            fh.write("\n")


class Vocabulary:
    """Token/id maps with ids 0..3 reserved for PAD/UNK/BOS/EOS."""

    def __init__(self, tokens_with_counts, min_count: int, max_types: int):
        self.min_count = min_count
        self.max_types = max_types
        self.id_to_token: list[str] = list(SENTINELS)
        self.counts: dict[str, int] = {}
        for token, count in tokens_with_counts:
            self.id_to_token.append(token)
            self.counts[token] = count
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens) -> list[int]:
        """Map tokens to ids; out-of-vocabulary tokens map to UNK."""
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, token in enumerate(self.id_to_token):
                fh.write(f"{token}\t{i}\t{self.counts.get(token, 0)}\n")

    @classmethod
    def load_tsv(cls, path, min_count: int = 1, max_types: int | None = None):
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                token, idx, count = line.rstrip("\n").split("\t")
                rows.append((int(idx), token, int(count)))
        rows.sort()
        tokens = [(t, c) for i, t, c in rows if i >= len(SENTINELS)]
        vocab = cls(tokens, min_count=min_count,
                    max_types=max_types if max_types is not None else len(tokens))
        for i, t, _ in rows[: len(SENTINELS)]:
            if vocab.id_to_token[i] != t:
                raise ValueError(f"sentinel mismatch in {path}")
        return vocab


def _doc_tokens(doc: Document, fields: str) -> list[str]:
    if fields == "title":
        return doc.title_tokens()
    if fields == "article":
        return doc.article_tokens()
    if fields == "both":
        return doc.title_tokens() + doc.article_tokens()
    raise ValueError(f"unknown fields selector {fields!r}")


def count_tokens(corpus: Corpus, fields: str = "title", workers: int = 1) -> Counter:
    """Token frequencies over the chosen fields; chunk-parallel, order-free merge."""
    if workers <= 1 or len(corpus) < 2 * workers:
        counts: Counter = Counter()
        for doc in corpus:
            counts.update(_doc_tokens(doc, fields))
        return counts
    chunks = [corpus.docs[i::workers] for i in range(workers)]

    def _count(chunk):
        c: Counter = Counter()
        for doc in chunk:
            c.update(_doc_tokens(doc, fields))
        return c

    total: Counter = Counter()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for partial in pool.map(_count, chunks):
            total.update(partial)
    return total


def build_vocab(corpus: Corpus, fields: str = "title", min_count: int = 5,
                max_types: int = 100_000, workers: int = 1) -> Vocabulary:
    """Most-frequent tokens, ties broken lexicographically, truncated to max_types."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    if len(corpus) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = count_tokens(corpus, fields=fields, workers=workers)
    kept = sorted(
        ((t, c) for t, c in counts.items() if c >= min_count),
        key=lambda tc: (-tc[1], tc[0]),
    )[:max_types]
    return Vocabulary(kept, min_count=min_count, max_types=max_types)
