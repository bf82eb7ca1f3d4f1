"""Post filters and aggregated-likelihood labelling."""

from __future__ import annotations

import bisect
import csv
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from forumleak.delay import DelayModel, evaluate_f
from forumleak.model import DAY, HOUR, ForumDataset, TimeWindow

ISOLATION_GAP = 12 * HOUR
TAIL_MARGIN = DAY


def filter_isolated_posts(posts: Iterable, gap: int = ISOLATION_GAP) -> list:
    """Keep posts with no other post by the same author within ``gap`` seconds.

    Both members of a violating pair are removed. Posts exactly ``gap`` apart
    count as violating.
    """
    by_user = defaultdict(list)
    for p in posts:
        by_user[p.author_id].append(p)
    keep = []
    for user_posts in by_user.values():
        user_posts.sort(key=lambda p: (p.ts, p.post_id))
        n = len(user_posts)
        for i, p in enumerate(user_posts):
            close_prev = i > 0 and p.ts - user_posts[i - 1].ts <= gap
            close_next = i + 1 < n and user_posts[i + 1].ts - p.ts <= gap
            if not (close_prev or close_next):
                keep.append(p)
    keep.sort(key=lambda p: (p.ts, p.post_id))
    return keep


def filter_leak_tail(posts: Iterable, leak_window: TimeWindow, margin: int = TAIL_MARGIN) -> list:
    """Drop posts whose later messages would mostly fall after the leak ends."""
    cutoff = leak_window.end - margin
    return [p for p in posts if p.ts <= cutoff]


def aggregated_likelihood(post, messages, model: DelayModel) -> float:
    """Sum of the post-related density over every later message to the creator.

    ``messages`` is an iterable of message records or timestamps. The curve is
    not truncated at ``tau_max``.
    """
    stamps = np.array([getattr(m, "ts", m) for m in messages], dtype=float)
    taus = stamps[stamps > post.ts] - post.ts
    if taus.size == 0:
        return 0.0
    return float(np.sum(evaluate_f(model, taus / HOUR)))


def _inbox_likelihood(post, stamps: list, model: DelayModel) -> float:
    i = bisect.bisect_right(stamps, post.ts)
    if i == len(stamps):
        return 0.0
    taus = (np.asarray(stamps[i:], dtype=float) - post.ts) / HOUR
    return float(np.sum(evaluate_f(model, taus)))


@dataclass(frozen=True)
class LabeledPost:
    post_id: str
    creator_id: str
    post_ts: int
    likelihood: float
    label: int
    theta: float


@dataclass
class Labeling:
    posts: list
    theta: float

    @property
    def positive_fraction(self) -> float:
        if not self.posts:
            return 0.0
        return sum(p.label for p in self.posts) / len(self.posts)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.posts], dtype=int)

    @property
    def likelihoods(self) -> np.ndarray:
        return np.array([p.likelihood for p in self.posts], dtype=float)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["post_id", "creator_id", "post_ts", "likelihood", "label", "theta"])
            for p in self.posts:
                w.writerow([p.post_id, p.creator_id, p.post_ts, repr(p.likelihood), p.label, repr(p.theta)])


def read_labels(path) -> dict:
    """post_id -> label from a labels CSV."""
    with open(path, newline="") as fh:
        return {row["post_id"]: int(row["label"]) for row in csv.DictReader(fh)}


def likelihoods(posts, dataset: ForumDataset, model: Optional[DelayModel]) -> list:
    if model is None:
        raise ValueError("a fitted delay model is required")
    inbox = dataset.inbox
    return [_inbox_likelihood(p, inbox.get(p.author_id, []), model) for p in posts]


def quantile_theta(weights, q: float) -> float:
    """Absolute threshold putting roughly the top ``1 - q`` of weights positive."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile must be in [0, 1]")
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return 0.0
    return float(np.quantile(w, q))


def label_posts(posts, dataset: ForumDataset, model: Optional[DelayModel], theta: float) -> Labeling:
    """Label posts positive when their aggregated likelihood exceeds ``theta``.

    ``dataset`` supplies the private messages; pass the leak-window slice so
    only in-window messages count.
    """
    if theta < 0:
        raise ValueError("theta must be non-negative")
    posts = list(posts)
    weights = likelihoods(posts, dataset, model)
    out = [
        LabeledPost(p.post_id, p.author_id, p.ts, w, int(w > theta), float(theta))
        for p, w in zip(posts, weights)
    ]
    return Labeling(out, float(theta))
