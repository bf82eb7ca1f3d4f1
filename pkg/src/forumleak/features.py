"""Bag-of-words and context features for thread-starting posts."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from forumleak.graphs import CentralityTable, InteractionGraph, centrality_table
from forumleak.model import DAY, ForumDataset
from forumleak.text import STOPWORDS, get_stemmer, tokenize

CHANNELS = ("title", "body", "subforum")
CONTEXT_FEATURES = (
    "tagged_sell", "tagged_buy", "hour_of_day", "day_of_week", "time_on_forum_days",
    "reply_count", "reputation", "views", "clustering", "degree", "eigenvector", "betweenness",
)
REPLY_HORIZON = DAY

_BUY_RE = re.compile(r"\[\s*b\s*\]", re.IGNORECASE)
_SELL_RE = re.compile(r"\[\s*s\s*\]", re.IGNORECASE)


def detect_trade_tags(title: str) -> tuple:
    """``(tagged_buy, tagged_sell)`` from bracketed ``[B]`` / ``[S]`` markers."""
    return int(bool(_BUY_RE.search(title))), int(bool(_SELL_RE.search(title)))


@dataclass
class Vocabulary:
    terms: dict  # channel -> {term: column within channel}
    stopwords: str = "english+german"
    stemmer: str = "english"
    min_tf: int = 3

    def __post_init__(self):
        self._stop = STOPWORDS[self.stopwords]
        self._stem = get_stemmer(self.stemmer)

    def analyze(self, text: str) -> list:
        return [self._stem(t) for t in tokenize(text) if t not in self._stop]

    @property
    def sizes(self) -> dict:
        return {ch: len(self.terms.get(ch, {})) for ch in CHANNELS}

    @property
    def offsets(self) -> dict:
        out, pos = {}, 0
        for ch in CHANNELS:
            out[ch] = pos
            pos += len(self.terms.get(ch, {}))
        return out

    @property
    def n_text(self) -> int:
        return sum(self.sizes.values())

    @property
    def n_features(self) -> int:
        return self.n_text + len(CONTEXT_FEATURES)

    @property
    def is_empty(self) -> bool:
        return self.n_text == 0

    def feature_names(self) -> list:
        names = []
        for ch in CHANNELS:
            vocab = self.terms.get(ch, {})
            names.extend(f"{ch}:{t}" for t, _ in sorted(vocab.items(), key=lambda kv: kv[1]))
        names.extend(CONTEXT_FEATURES)
        return names

    def to_json(self) -> str:
        payload = {
            "terms": {ch: self.terms.get(ch, {}) for ch in CHANNELS},
            "stopwords": self.stopwords,
            "stemmer": self.stemmer,
            "min_tf": self.min_tf,
        }
        return json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        d = json.loads(text)
        return cls(d["terms"], d["stopwords"], d["stemmer"], d["min_tf"])


def _channel_texts(post, dataset: ForumDataset) -> dict:
    thread = dataset.thread_index[post.thread_id]
    return {"title": thread.title, "body": post.body, "subforum": thread.subforum}


def build_vocabulary(posts, dataset: ForumDataset, min_tf: int = 3, stopwords: str = "english+german",
                     stemmer: str = "english") -> Vocabulary:
    """Learn per-channel stem vocabularies from training posts.

    Terms occurring fewer than ``min_tf`` times across the corpus are dropped.
    Columns follow alphabetical term order.
    """
    posts = list(posts)
    if not posts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    vocab = Vocabulary({}, stopwords, stemmer, min_tf)
    counts = {ch: Counter() for ch in CHANNELS}
    for p in posts:
        for ch, text in _channel_texts(p, dataset).items():
            counts[ch].update(vocab.analyze(text))
    for ch in CHANNELS:
        kept = sorted(t for t, n in counts[ch].items() if n >= min_tf)
        vocab.terms[ch] = {t: i for i, t in enumerate(kept)}
    return vocab


def vocabulary_from_texts(texts, min_tf: int = 3, stopwords: str = "english+german",
                          stemmer: str = "english", channel: str = "body") -> Vocabulary:
    """Single-channel vocabulary from raw strings."""
    texts = list(texts)
    if not texts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    vocab = Vocabulary({}, stopwords, stemmer, min_tf)
    counts = Counter()
    for t in texts:
        counts.update(vocab.analyze(t))
    kept = sorted(t for t, n in counts.items() if n >= min_tf)
    vocab.terms = {ch: {} for ch in CHANNELS}
    vocab.terms[channel] = {t: i for i, t in enumerate(kept)}
    return vocab


@dataclass
class FeatureVector:
    post_id: str
    text: dict = field(default_factory=dict)  # channel -> {column within channel: count}
    context: np.ndarray = field(default_factory=lambda: np.zeros(len(CONTEXT_FEATURES)))

    def dense(self, vocab: Vocabulary) -> np.ndarray:
        row = np.zeros(vocab.n_features)
        offsets = vocab.offsets
        for ch, cols in self.text.items():
            for j, v in cols.items():
                row[offsets[ch] + j] = v
        row[vocab.n_text:] = self.context
        return row

    def sparse_items(self, vocab: Vocabulary) -> list:
        offsets = vocab.offsets
        items = [(offsets[ch] + j, float(v)) for ch, cols in self.text.items() for j, v in cols.items()]
        items += [(vocab.n_text + k, float(v)) for k, v in enumerate(self.context) if v != 0]
        return sorted(items)


def reply_count(post, dataset: ForumDataset, horizon: int = REPLY_HORIZON) -> int:
    cutoff = post.ts + horizon
    return sum(1 for p in dataset.posts_by_thread.get(post.thread_id, ()) if p.ts <= cutoff) - 1


def featurize(post, dataset: ForumDataset, vocabulary: Vocabulary, public_graph,
              reply_horizon: int = REPLY_HORIZON) -> FeatureVector:
    """Feature vector for one thread-starting post.

    ``public_graph`` is an :class:`InteractionGraph` or a precomputed
    :class:`CentralityTable`. Terms missing from the vocabulary are ignored.
    """
    user = dataset.user_index.get(post.author_id)
    if user is None:
        raise KeyError(f"unknown creator {post.author_id!r}")
    table = public_graph if isinstance(public_graph, CentralityTable) else centrality_table(public_graph)
    thread = dataset.thread_index[post.thread_id]

    text = {}
    for ch, raw in _channel_texts(post, dataset).items():
        vocab = vocabulary.terms.get(ch, {})
        hits = Counter(vocabulary._stem(t) for t in tokenize(raw) if t not in vocabulary._stop)
        text[ch] = {vocab[t]: n for t, n in hits.items() if t in vocab}

    buy, sell = detect_trade_tags(thread.title)
    when = datetime.fromtimestamp(post.ts, tz=timezone.utc)
    context = np.array([
        sell,
        buy,
        when.hour,
        when.weekday(),
        max(0.0, (post.ts - user.join_ts) / DAY),
        reply_count(post, dataset, reply_horizon),
        user.reputation,
        thread.views,
        *table.lookup(post.author_id),
    ], dtype=float)
    return FeatureVector(post.post_id, text, context)


def feature_matrix(posts, dataset: ForumDataset, vocabulary: Vocabulary, public_graph,
                   reply_horizon: int = REPLY_HORIZON) -> tuple:
    """Dense ``(n_posts, n_features)`` matrix plus the per-post vectors."""
    if isinstance(public_graph, InteractionGraph):
        public_graph = centrality_table(public_graph)
    vectors = [featurize(p, dataset, vocabulary, public_graph, reply_horizon) for p in posts]
    X = np.zeros((len(vectors), vocabulary.n_features))
    for i, v in enumerate(vectors):
        X[i] = v.dense(vocabulary)
    return X, vectors


def feature_set_columns(vocabulary: Vocabulary, feature_set: str) -> np.ndarray:
    """Column indices for ``nlp``, ``context`` or ``all``."""
    n_text = vocabulary.n_text
    if feature_set == "nlp":
        return np.arange(n_text)
    if feature_set == "context":
        return np.arange(n_text, vocabulary.n_features)
    if feature_set == "all":
        return np.arange(vocabulary.n_features)
    raise ValueError(f"unknown feature set {feature_set!r}")


def write_sparse(path, vectors, vocabulary: Vocabulary) -> None:
    """One line per post: ``post_id`` then ``index:value`` pairs, tab separated."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_features={vocabulary.n_features}\n")
        for v in vectors:
            pairs = " ".join(f"{j}:{val!r}" for j, val in v.sparse_items(vocabulary))
            fh.write(f"{v.post_id}\t{pairs}\n")


def read_sparse(path) -> tuple:
    """Inverse of :func:`write_sparse`: ``(post_ids, dense matrix)``."""
    ids, rows, n_features = [], [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                n_features = int(line.split("=", 1)[1])
                continue
            if not line:
                continue
            pid, _, rest = line.partition("\t")
            ids.append(pid)
            rows.append([(int(j), float(v)) for j, v in (tok.split(":") for tok in rest.split())])
    if n_features is None:
        raise ValueError(f"{path}: missing n_features header")
    X = np.zeros((len(rows), n_features))
    for i, items in enumerate(rows):
        for j, v in items:
            X[i, j] = v
    return ids, X

