"""Random-forest classifier, ROC/AUC, accuracy and information-gain ranking."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

FORMAT_NAME = "forumleak-forest"
FORMAT_VERSION = 1


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: Optional[int] = 25
    min_leaf: int = 5
    features_per_split: Optional[int] = None  # None -> ceil(sqrt(F))
    seed: int = 0
    n_jobs: int = 1

    def resolved_features(self, n_features: int) -> int:
        if self.features_per_split is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return max(1, min(self.features_per_split, n_features))


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf; rows with
    ``x[feature] <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    pos: np.ndarray  # positive bootstrap rows reaching the node
    neg: np.ndarray
    oob: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def vote(self) -> np.ndarray:
        """Per-node vote: 1 for positive majority, 0 for negative, 0.5 on a tie."""
        return np.where(self.pos > self.neg, 1.0, np.where(self.pos < self.neg, 0.0, 0.5))

    def leaves(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r, n = rows[inner], node[inner]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def predict_vote(self, X: np.ndarray) -> np.ndarray:
        return self.vote[self.leaves(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "pos": self.pos.tolist(),
            "neg": self.neg.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["pos"], dtype=np.int64),
            np.asarray(d["neg"], dtype=np.int64),
        )


def _live_columns(X, Xs_csr, idx) -> np.ndarray:
    """Mask of columns that are not constant over rows ``idx``."""
    m = len(idx)
    nnz = np.bincount(Xs_csr[idx].indices, minlength=X.shape[1])
    live = (nnz > 0) & (nnz < m)
    full = np.flatnonzero(nnz == m)
    if full.size:
        sub = X[idx[:, None], full]
        live[full] = sub.max(axis=0) > sub.min(axis=0)
    return live


def _best_split(X, Xs_csr, y, idx, rng, n_try, min_leaf):
    """Best Gini split over ``n_try`` non-constant features drawn at random.

    Returns ``(feature, threshold)`` or None.
    """
    m = len(idx)
    perm = rng.permutation(X.shape[1])
    cand = perm[_live_columns(X, Xs_csr, idx)[perm]][:n_try]
    if cand.size == 0:
        return None
    yi = y[idx]
    Xs = X[idx[:, None], cand]
    order = np.argsort(Xs, axis=0, kind="stable")
    sv = np.take_along_axis(Xs, order, axis=0)
    left_pos = np.cumsum(yi[order], axis=0)[:-1]
    n_left = np.arange(1, m, dtype=float)[:, None]
    n_right = m - n_left
    right_pos = yi.sum() - left_pos
    # minimising weighted Gini == maximising sum(pos^2 / n) over both sides
    score = left_pos**2 / n_left + right_pos**2 / n_right
    valid = sv[:-1] < sv[1:]
    valid[: min_leaf - 1] = False
    valid[m - min_leaf:] = False
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    i, j = divmod(int(np.argmax(score)), score.shape[1])
    lo, hi = sv[i, j], sv[i + 1, j]
    thr = (lo + hi) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(cand[j]), float(thr)


def build_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, n_try: int,
               max_depth: Optional[int], min_leaf: int, X_csr=None) -> Tree:
    feature, threshold, left, right, pos, neg = [], [], [], [], [], []

    def new_node(idx):
        p = int(y[idx].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos.append(p)
        neg.append(len(idx) - p)
        return len(feature) - 1

    if X_csr is None:
        X_csr = sp.csr_matrix(X)
    root_idx = np.arange(len(y))
    stack = [(new_node(root_idx), root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if pos[node] == 0 or neg[node] == 0:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if len(idx) < 2 * min_leaf:
            continue
        split = _best_split(X, X_csr, y, idx, rng, n_try, min_leaf)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
        np.asarray(pos, dtype=np.int64), np.asarray(neg, dtype=np.int64),
    )


@dataclass
class TrainedForest:
    trees: list
    params: ForestParams
    n_features: int
    positive_fraction: float
    n_train: int = 0

    def to_json(self) -> str:
        payload = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": self.params.__dict__,
            "n_features": self.n_features,
            "positive_fraction": self.positive_fraction,
            "n_train": self.n_train,
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "TrainedForest":
        d = json.loads(text)
        if d.get("format") != FORMAT_NAME:
            raise ValueError("not a forest model file")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest model version {d.get('version')}")
        return cls(
            [Tree.from_dict(t) for t in d["trees"]],
            ForestParams(**d["params"]),
            d["n_features"],
            d["positive_fraction"],
            d.get("n_train", 0),
        )


def _fit_one(X, X_csr, y, seed_seq, n_try, params):
    rng = np.random.default_rng(seed_seq)
    n = len(y)
    boot = rng.integers(0, n, size=n)
    tree = build_tree(X[boot], y[boot], rng, n_try, params.max_depth, params.min_leaf,
                      X_csr[boot])
    in_bag = np.zeros(n, dtype=bool)
    in_bag[boot] = True
    tree.oob = np.flatnonzero(~in_bag)
    return tree


def train(X, y, params: Optional[ForestParams] = None) -> TrainedForest:
    """Bagged Gini trees with per-node feature subsampling.

    Tree ``i`` draws its bootstrap and feature subsets from the ``i``-th child
    of ``SeedSequence(params.seed)``, so results do not depend on ``n_jobs``.
    """
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty feature matrix")
    if len(y) != X.shape[0]:
        raise ValueError("labels and rows differ in length")
    if len(np.unique(y)) < 2:
        raise ValueError("training data holds a single class")
    if params.n_trees < 1:
        raise ValueError("n_trees must be positive")
    n_try = params.resolved_features(X.shape[1])
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    X_csr = sp.csr_matrix(X)
    if params.n_jobs and params.n_jobs > 1:
        with ThreadPoolExecutor(params.n_jobs) as pool:
            trees = list(pool.map(lambda s: _fit_one(X, X_csr, y, s, n_try, params), seeds))
    else:
        trees = [_fit_one(X, X_csr, y, s, n_try, params) for s in seeds]
    return TrainedForest(trees, params, X.shape[1], float(y.mean()), len(y))


def predict_scores(forest: TrainedForest, X) -> np.ndarray:
    """Fraction of trees voting positive for each row."""
    if not forest.trees:
        raise ValueError("forest has no trees")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    total = np.zeros(len(X))
    for t in forest.trees:
        total += t.predict_vote(X)
    return total / len(forest.trees)


def predict_score(forest: TrainedForest, vector) -> float:
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a single feature vector")
    return float(predict_scores(forest, v[None, :])[0])


def oob_accuracy(forest: TrainedForest, X, y) -> float:
    """Out-of-bag accuracy at the 0.5 vote threshold."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    votes = np.zeros(len(y))
    seen = np.zeros(len(y))
    for t in forest.trees:
        if t.oob is None:
            raise ValueError("out-of-bag rows are only known for freshly trained forests")
        votes[t.oob] += t.predict_vote(X[t.oob])
        seen[t.oob] += 1
    ok = seen > 0
    pred = (votes[ok] / seen[ok]) > 0.5
    return float(np.mean(pred == y[ok].astype(bool)))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("threshold,fpr,tpr\n")
            for f, t, th in self.points():
                fh.write(f"{th!r},{f!r},{t!r}\n")


def roc(scores, labels) -> RocCurve:
    """ROC sweep over distinct scores, highest first, starting at ``(0, 0)``.

    The trapezoid area is accumulated in integers, so it equals the
    probability that a random positive outscores a random negative with
    ties counted one half.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    distinct = np.flatnonzero(np.diff(s)) if len(s) > 1 else np.array([], dtype=int)
    ends = np.r_[distinct, len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tp_all = np.r_[0, tp].astype(np.int64)
    fp_all = np.r_[0, fp].astype(np.int64)
    area2 = int(np.sum(np.diff(fp_all) * (tp_all[1:] + tp_all[:-1])))
    auc = area2 / (2 * P * N)
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(fp_all / N, tp_all / P, thresholds, auc)


def concordance_auc(scores, labels) -> float:
    """Brute-force pairwise AUC; ties count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Share of correct predictions; a row is predicted positive when its score
    exceeds ``threshold``. A threshold of 0 or below predicts every row positive."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.size == 0:
        raise ValueError("no scores")
    pred = np.ones_like(y) if threshold <= 0 else s > threshold
    return float(np.mean(pred == y))


def entropy(labels) -> float:
    y = np.asarray(labels)
    if y.size == 0:
        return 0.0
    _, counts = np.unique(y, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def equal_frequency_bins(values, n_bins: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    edges = np.unique(np.quantile(v, np.linspace(0, 1, n_bins + 1)[1:-1]))
    return np.searchsorted(edges, v, side="left")


def info_gain(features, labels, n_bins: int = 10) -> list:
    """``(column, gain_bits)`` pairs, highest gain first (column order on ties)."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).astype(np.int64)
    if len(y) != X.shape[0]:
        raise ValueError("labels and rows differ in length")
    h = entropy(y)
    n = len(y)
    gains = []
    for j in range(X.shape[1]):
        bins = equal_frequency_bins(X[:, j], n_bins)
        nb = int(bins.max()) + 1
        totals = np.bincount(bins, minlength=nb)
        positives = np.bincount(bins, weights=y, minlength=nb)
        cond = 0.0
        for tot, p in zip(totals, positives):
            if tot == 0:
                continue
            q = p / tot
            hq = 0.0
            for r in (q, 1.0 - q):
                if r > 0:
                    hq -= r * math.log2(r)
            cond += tot / n * hq
        gains.append((j, max(0.0, h - cond)))
    gains.sort(key=lambda jg: (-jg[1], jg[0]))
    return gains
