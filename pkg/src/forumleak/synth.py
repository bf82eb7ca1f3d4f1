"""Synthetic forums with planted post-triggered private messages."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from forumleak import ConfigError
from forumleak.model import (
    DAY, HOUR, WEEK, ForumDataset, PostRecord, PrivateMessage, ThreadRecord, UserRecord,
    export_dataset, make_dataset,
)

GROUNDTRUTH_FILE = "groundtruth.jsonl"
DEFAULT_TRIGGER_TERMS = ("dumps", "cvv", "fullz", "escrow", "btc", "jabber")
DEFAULT_SUBFORUMS = ("carding", "accounts", "software", "marketplace", "offtopic", "tutorials")

_CONSONANTS = "bdfgklmnprtvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 5000
    span_weeks: float = 26
    start_ts: int = 1262304000  # 2010-01-01 UTC
    post_rate: float = 0.02  # thread starts per user per day
    reply_mean: float = 2.0
    pm_background_rate: float = 0.02  # background messages received per user per day
    trigger_base: float = 0.05
    trigger_term_prob: float = 0.35  # chance a post mentions trigger vocabulary
    trigger_boost: float = 0.9
    tag_prob: float = 0.2  # chance of a [S] or [B] title tag
    tag_boost: float = 0.5
    triggered_pms_mean: float = 2.0  # mean messages per triggered post, at least one
    fast_weight: float = 0.8
    fast_rate: float = 2.0  # per hour
    slow_rate: float = 0.05  # per hour
    trigger_terms: tuple = DEFAULT_TRIGGER_TERMS
    vocab_prefix: str = "w"
    vocab_size: int = 1500
    zipf_exponent: float = 1.1
    subforums: tuple = DEFAULT_SUBFORUMS
    seed: int = 0

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be at least 1")
        if self.span_weeks <= 0:
            raise ConfigError("span_weeks must be positive")
        for name in ("post_rate", "reply_mean", "pm_background_rate", "trigger_base", "trigger_boost",
                     "tag_boost", "fast_rate", "slow_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("trigger_term_prob", "tag_prob", "fast_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.triggered_pms_mean < 1:
            raise ConfigError("triggered_pms_mean must be at least 1")
        if self.vocab_size < 1 or not self.subforums:
            raise ConfigError("vocabulary and subforum list must be non-empty")

    @property
    def span_seconds(self) -> int:
        return int(round(self.span_weeks * WEEK))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth settings: {sorted(unknown)}")
        d = dict(d)
        for key in ("trigger_terms", "subforums"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trigger_terms"] = list(self.trigger_terms)
        d["subforums"] = list(self.subforums)
        return d


def trigger_probability(config: SynthConfig, has_term: bool, tagged: bool) -> float:
    p = config.trigger_base + config.trigger_boost * has_term + config.tag_boost * tagged
    return min(1.0, max(0.0, p))


def mean_trigger_probability(config: SynthConfig) -> float:
    q, t = config.trigger_term_prob, config.tag_prob
    return sum(
        pw * trigger_probability(config, term, tag)
        for term, tag, pw in (
            (False, False, (1 - q) * (1 - t)), (True, False, q * (1 - t)),
            (False, True, (1 - q) * t), (True, True, q * t),
        )
    )


def null_config(config: SynthConfig) -> SynthConfig:
    """Same expected trigger rate, but independent of text and tags."""
    return replace(config, trigger_base=mean_trigger_probability(config), trigger_boost=0.0, tag_boost=0.0)


def mixture_pdf(config: SynthConfig, tau_hours):
    tau = np.asarray(tau_hours, dtype=float)
    w = config.fast_weight
    return w * config.fast_rate * np.exp(-config.fast_rate * tau) + \
        (1 - w) * config.slow_rate * np.exp(-config.slow_rate * tau)


def planted_density(config: SynthConfig, tau_hours):
    """Expected post-relative message density (messages/hour) at delay ``tau``.

    Steady-state approximation: edge effects at the ends of the span are ignored.
    The constant part combines background messages with messages triggered by
    the creator's other posts.
    """
    tau = np.asarray(tau_hours, dtype=float)
    if np.any(tau < 0):
        raise ValueError("delay must be non-negative")
    n_posts = config.n_users * config.post_rate * config.span_seconds / DAY
    triggered = mean_trigger_probability(config) * config.triggered_pms_mean
    background = n_posts * (config.pm_background_rate + config.post_rate * triggered) / 24.0
    out = n_posts * triggered * mixture_pdf(config, tau) + background
    return float(out) if out.ndim == 0 else out


def sample_mixture_delays(n: int, a1: float, b1: float, a2: float, b2: float, c: float,
                          horizon_hours: float, seed: int = 0) -> np.ndarray:
    """Delays in seconds drawn from the density proportional to
    ``a1 exp(-b1 x) + a2 exp(-b2 x) + c`` on ``(0, horizon]`` hours."""
    rng = np.random.default_rng(seed)
    T = horizon_hours
    w = np.array([a1 / b1 * -math.expm1(-b1 * T), a2 / b2 * -math.expm1(-b2 * T), c * T])
    comp = rng.choice(3, size=n, p=w / w.sum())
    u = rng.random(n)
    x = np.empty(n)
    for k, b in ((0, b1), (1, b2)):
        m = comp == k
        x[m] = -np.log1p(-u[m] * -math.expm1(-b * T)) / b
    x[comp == 2] = u[comp == 2] * T
    return np.maximum(1, np.ceil(x * HOUR)).astype(np.int64)


def _word(prefix: str, idx: int) -> str:
    syll = []
    idx += 1
    while idx:
        idx, r = divmod(idx, len(_CONSONANTS) * len(_VOWELS))
        syll.append(_CONSONANTS[r // len(_VOWELS)] + _VOWELS[r % len(_VOWELS)])
    # trailing 'x' keeps the suffix stripper away from generated words
    return prefix + "".join(syll) + "x"


@dataclass
class GroundTruth:
    triggers: dict  # msg_id -> triggering post_id or None
    triggered_posts: frozenset = field(default_factory=frozenset)
    planted_delays: list = field(default_factory=list)  # (post_id, tau seconds)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for mid in sorted(self.triggers):
                fh.write(json.dumps({"msg_id": mid, "triggering_post_id": self.triggers[mid]},
                                    sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "GroundTruth":
        triggers = {}
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    triggers[d["msg_id"]] = d["triggering_post_id"]
        posts = frozenset(p for p in triggers.values() if p is not None)
        return cls(triggers, posts)


def generate(config: SynthConfig) -> tuple:
    """Build ``(ForumDataset, GroundTruth)``; the seed fixes everything."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    start, span = config.start_ts, config.span_seconds
    span_days = span / DAY
    n = config.n_users

    user_ids = [f"u{i:06d}" for i in range(n)]
    home = rng.integers(0, len(config.subforums), size=n)
    reputation = rng.poisson(20, size=n)
    join = start - rng.integers(0, 52 * WEEK, size=n)

    ranks = np.arange(1, config.vocab_size + 1, dtype=float)
    zipf = ranks ** -config.zipf_exponent
    zipf /= zipf.sum()
    words = [_word(config.vocab_prefix, i) for i in range(config.vocab_size)]
    triggers = list(config.trigger_terms)

    def background_tokens(k):
        return [words[j] for j in rng.choice(config.vocab_size, size=k, p=zipf)]

    threads, posts, messages = [], [], []
    planted = []
    gt = {}
    members = [[] for _ in config.subforums]
    first_activity = {}

    n_threads = rng.poisson(config.post_rate * span_days, size=n)
    thread_plan = []
    for u in range(n):
        for ts in np.sort(rng.integers(start, start + span, size=n_threads[u])):
            sf = home[u] if rng.random() < 0.7 else rng.integers(0, len(config.subforums))
            thread_plan.append((int(ts), u, int(sf)))
            members[sf].append(u)
    thread_plan.sort()

    post_counter = 0
    triggered_posts = []
    for t_idx, (ts, u, sf) in enumerate(thread_plan):
        tid = f"t{t_idx:07d}"
        has_term = bool(triggers) and rng.random() < config.trigger_term_prob
        tag = None
        if rng.random() < config.tag_prob:
            tag = "[S]" if rng.random() < 0.5 else "[B]"
        title_tokens = background_tokens(int(rng.integers(3, 7)))
        body_tokens = background_tokens(int(rng.integers(10, 31)))
        if has_term:
            for _ in range(int(rng.integers(1, 3))):
                body_tokens.insert(int(rng.integers(0, len(body_tokens) + 1)), triggers[rng.integers(len(triggers))])
            if rng.random() < 0.5:
                title_tokens.append(triggers[rng.integers(len(triggers))])
        title = " ".join(([tag] if tag else []) + title_tokens)
        n_replies = int(rng.poisson(config.reply_mean))
        threads.append(ThreadRecord(tid, config.subforums[sf], title, user_ids[u], ts,
                                    int(rng.poisson(40 + 5 * n_replies))))
        start_id = f"p{post_counter:08d}"
        post_counter += 1
        posts.append(PostRecord(start_id, tid, user_ids[u], ts, " ".join(body_tokens), None))

        pool = members[sf]
        parent, rts = start_id, ts
        for _ in range(n_replies):
            author = pool[rng.integers(len(pool))]
            if author == u and n > 1:
                author = (u + 1 + int(rng.integers(n - 1))) % n
            rts = rts + 1 + int(rng.exponential(6 * HOUR))
            pid = f"p{post_counter:08d}"
            post_counter += 1
            posts.append(PostRecord(pid, tid, user_ids[author], rts, " ".join(background_tokens(8)), parent))
            parent = pid

        if rng.random() < trigger_probability(config, has_term, tag is not None):
            triggered_posts.append((start_id, ts, u, sf))

    senders_pool = [sorted(set(m)) for m in members]
    for post_id, ts, u, sf in triggered_posts:
        k = 1 + int(rng.poisson(config.triggered_pms_mean - 1))
        fast = rng.random(k) < config.fast_weight
        rates = np.where(fast, config.fast_rate, config.slow_rate)
        delays = np.maximum(1, np.ceil(rng.exponential(1.0, size=k) / rates * HOUR)).astype(np.int64)
        for d in delays:
            pool = senders_pool[sf]
            sender = pool[rng.integers(len(pool))] if pool else u
            if sender == u and n > 1:
                sender = (u + 1 + int(rng.integers(n - 1))) % n
            messages.append((ts + int(d), sender, u, post_id))
            planted.append((post_id, int(d)))

    n_bg = rng.poisson(config.pm_background_rate * span_days, size=n)
    for u in range(n):
        for ts in rng.integers(start, start + span, size=n_bg[u]):
            sender = (u + 1 + int(rng.integers(n - 1))) % n if n > 1 else u
            messages.append((int(ts), sender, u, None))

    messages.sort(key=lambda m: (m[0], m[2], m[1], m[3] or ""))
    pm_records = []
    for i, (ts, s, r, trig) in enumerate(messages):
        mid = f"m{i:08d}"
        pm_records.append(PrivateMessage(mid, user_ids[s], user_ids[r], ts, ""))
        gt[mid] = trig
        for uid, t in ((s, ts), (r, ts)):
            first_activity[uid] = min(first_activity.get(uid, t), t)
    for p in posts:
        uid = int(p.author_id[1:])
        first_activity[uid] = min(first_activity.get(uid, p.ts), p.ts)

    users = [
        UserRecord(user_ids[i], f"user{i}", int(min(join[i], first_activity.get(i, join[i]))), int(reputation[i]))
        for i in range(n)
    ]
    dataset = make_dataset(users, threads, posts, pm_records)
    truth = GroundTruth(gt, frozenset(p for p, *_ in triggered_posts), planted)
    return dataset, truth


def write_synthetic(config: SynthConfig, directory) -> tuple:
    """Generate and export a dataset plus ``groundtruth.jsonl`` and ``synth_config.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dataset, truth = generate(config)
    export_dataset(dataset, directory)
    truth.write(directory / GROUNDTRUTH_FILE)
    (directory / "synth_config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n")
    return dataset, truth
