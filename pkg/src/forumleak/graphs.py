"""Public/private interaction graphs, overlap statistics and centrality scores."""

from __future__ import annotations

import csv
import enum
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from forumleak.model import ForumDataset

# above this many nodes betweenness is estimated from sampled sources
BETWEENNESS_EXACT_LIMIT = 50_000


class Strategy(str, enum.Enum):
    SAME_THREAD = "same-thread"
    THREAD_OWNER = "thread-owner"
    DIRECT_REPLY = "direct-reply"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"samethread": "same-thread", "threadowner": "thread-owner", "directreply": "direct-reply"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown public-graph strategy {value!r}") from None


def _pair(a, b) -> tuple:
    return (a, b) if a < b else (b, a)


@dataclass
class InteractionGraph:
    """Undirected weighted user graph. Edge keys are ordered pairs ``(a, b)`` with ``a < b``."""

    nodes: frozenset
    edges: dict
    kind: str
    strategy: Strategy | None = None

    @cached_property
    def adjacency(self) -> dict:
        adj = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj

    @cached_property
    def order(self) -> list:
        return sorted(self.nodes)

    @cached_property
    def index(self) -> dict:
        return {n: i for i, n in enumerate(self.order)}

    def sparse_adjacency(self) -> sp.csr_matrix:
        """Unweighted symmetric adjacency in :attr:`order`."""
        n = len(self.order)
        if not self.edges:
            return sp.csr_matrix((n, n))
        idx = self.index
        rows = np.fromiter((idx[a] for a, _ in self.edges), dtype=np.int64, count=len(self.edges))
        cols = np.fromiter((idx[b] for _, b in self.edges), dtype=np.int64, count=len(self.edges))
        data = np.ones(2 * len(rows))
        return sp.csr_matrix((data, (np.r_[rows, cols], np.r_[cols, rows])), shape=(n, n))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["user_a", "user_b", "weight"])
            for (a, b), weight in sorted(self.edges.items()):
                w.writerow([a, b, weight])


def build_public_graph(dataset: ForumDataset, strategy) -> InteractionGraph:
    """Connect users through public threads.

    same-thread
        every pair of distinct users who posted in the same thread
    thread-owner
        the thread creator and every other participant
    direct-reply
        a post's author and the author of the post it replies to

    Weights count threads (or replies, for direct-reply) producing the pair.
    """
    strategy = Strategy.parse(strategy)
    edges = defaultdict(int)
    nodes = set()
    post_author = {p.post_id: p.author_id for p in dataset.posts}
    for tid, posts in dataset.posts_by_thread.items():
        thread = dataset.thread_index.get(tid)
        participants = sorted({p.author_id for p in posts})
        nodes.update(participants)
        if strategy is Strategy.SAME_THREAD:
            for a, b in combinations(participants, 2):
                edges[(a, b)] += 1
        elif strategy is Strategy.THREAD_OWNER:
            if thread is None:
                continue
            owner = thread.creator_id
            for u in participants:
                if u != owner:
                    edges[_pair(owner, u)] += 1
        else:
            for p in posts:
                if p.reply_to is None:
                    continue
                parent = post_author.get(p.reply_to)
                if parent is not None and parent != p.author_id:
                    edges[_pair(parent, p.author_id)] += 1
    return InteractionGraph(frozenset(nodes), dict(edges), "public", strategy)


def build_private_graph(dataset: ForumDataset) -> InteractionGraph:
    edges = defaultdict(int)
    nodes = set()
    for m in dataset.messages:
        nodes.add(m.sender_id)
        nodes.add(m.recipient_id)
        edges[_pair(m.sender_id, m.recipient_id)] += 1
    return InteractionGraph(frozenset(nodes), dict(edges), "private")


@dataclass
class OverlapReport:
    public_edges: int
    private_edges: int
    public_only_edges: int
    private_only_edges: int
    private_messages_with_public_link: int
    private_messages_without_public_link: int
    tagged_threads: int
    total_threads: int
    tagged_public_edges: int
    public_only_fraction: float = field(init=False)
    private_only_fraction: float = field(init=False)
    avg_pms_with_public_link: float = field(init=False)
    avg_pms_without_public_link: float = field(init=False)
    tagged_thread_fraction: float = field(init=False)
    tagged_edge_fraction: float = field(init=False)

    def __post_init__(self):
        def ratio(num, den):
            return num / den if den else 0.0

        linked = self.private_edges - self.private_only_edges
        self.public_only_fraction = ratio(self.public_only_edges, self.public_edges)
        self.private_only_fraction = ratio(self.private_only_edges, self.private_edges)
        self.avg_pms_with_public_link = ratio(self.private_messages_with_public_link, linked)
        self.avg_pms_without_public_link = ratio(self.private_messages_without_public_link, self.private_only_edges)
        self.tagged_thread_fraction = ratio(self.tagged_threads, self.total_threads)
        self.tagged_edge_fraction = ratio(self.tagged_public_edges, self.public_edges)

    def to_dict(self) -> dict:
        return asdict(self)


def overlap_stats(public: InteractionGraph, private: InteractionGraph, dataset: ForumDataset) -> OverlapReport:
    from forumleak.features import detect_trade_tags

    pub, priv = set(public.edges), set(private.edges)
    tagged = set()
    tagged_edges = set()
    for t in dataset.threads:
        if any(detect_trade_tags(t.title)):
            tagged.add(t.thread_id)
            users = sorted({p.author_id for p in dataset.posts_by_thread.get(t.thread_id, ())})
            tagged_edges.update(combinations(users, 2))
    return OverlapReport(
        public_edges=len(pub),
        private_edges=len(priv),
        public_only_edges=len(pub - priv),
        private_only_edges=len(priv - pub),
        private_messages_with_public_link=sum(w for e, w in private.edges.items() if e in pub),
        private_messages_without_public_link=sum(w for e, w in private.edges.items() if e not in pub),
        tagged_threads=len(tagged),
        total_threads=len(dataset.threads),
        tagged_public_edges=len(pub & tagged_edges),
    )


def degree_centrality(graph: InteractionGraph, user) -> int:
    return len(graph.adjacency.get(user, ()))


def clustering_coefficient(graph: InteractionGraph, user) -> float:
    nbrs = graph.adjacency.get(user, set())
    k = len(nbrs)
    if k < 2:
        return 0.0
    adj = graph.adjacency
    links = sum(len(adj[v] & nbrs) for v in nbrs) // 2
    return 2.0 * links / (k * (k - 1))


@dataclass
class EigenvectorResult:
    scores: dict
    converged: bool
    iterations: int


def eigenvector_centrality(graph: InteractionGraph, max_iter: int = 1000, tol: float = 1e-10) -> EigenvectorResult:
    """Power iteration on the unweighted adjacency, run per connected component.

    Each component's vector is L2-normalised and then scaled by the share of
    graph edges it holds; isolated nodes score 0. Iterating on ``A + I``
    leaves the eigenvectors unchanged and avoids oscillation on bipartite
    components.
    """
    order = graph.order
    n = len(order)
    if not graph.edges:
        raise ValueError("eigenvector centrality needs at least one edge")
    A = graph.sparse_adjacency()
    n_comp, comp = connected_components(A, directed=False)
    scores = np.zeros(n)
    total_edges = len(graph.edges)
    converged, iterations = True, 0
    degree = np.asarray(A.sum(axis=1)).ravel()
    for c in range(n_comp):
        members = np.flatnonzero(comp == c)
        if len(members) < 2:
            continue
        sub = A[members][:, members]
        m_edges = int(sub.nnz // 2)
        x = np.full(len(members), 1.0 / np.sqrt(len(members)))
        ok = False
        for it in range(1, max_iter + 1):
            y = sub @ x + x
            y /= np.linalg.norm(y)
            delta = np.abs(y - x).max()
            x = y
            if delta < tol:
                ok = True
                break
        iterations = max(iterations, it)
        converged = converged and ok
        scores[members] = x * (m_edges / total_edges)
    scores[degree == 0] = 0.0
    return EigenvectorResult(dict(zip(order, scores.tolist())), converged, iterations)


def betweenness_centrality(graph: InteractionGraph, sample_size: int = 256, seed: int = 0,
                           exact_limit: int = BETWEENNESS_EXACT_LIMIT, block: int = 256) -> dict:
    """Brandes betweenness on the unweighted graph, unnormalised.

    Each unordered pair contributes once, so the middle node of a 3-path
    scores 1. Sources are processed in blocks: shortest-path counts are
    propagated level by level with sparse products, then dependencies are
    accumulated back from the deepest level. Graphs larger than
    ``exact_limit`` use ``sample_size`` uniformly drawn sources, rescaled.
    """
    order = graph.order
    n = len(order)
    if n == 0:
        return {}
    A = graph.sparse_adjacency().tocsr()
    if n > exact_limit:
        rng = np.random.default_rng(seed)
        sources = np.sort(rng.choice(n, size=min(sample_size, n), replace=False))
        scale = n / len(sources)
    else:
        sources = np.arange(n)
        scale = 1.0
    bc = np.zeros(n)
    for lo in range(0, len(sources), block):
        bc += _brandes_block(A, sources[lo:lo + block])
    bc *= scale / 2.0
    return dict(zip(order, bc.tolist()))


def _brandes_block(A: sp.csr_matrix, sources: np.ndarray) -> np.ndarray:
    n, b = A.shape[0], len(sources)
    cols = np.arange(b)
    sigma = np.zeros((n, b))
    sigma[sources, cols] = 1.0
    depth = np.full((n, b), -1, dtype=np.int32)
    depth[sources, cols] = 0
    frontier = sigma.copy()
    d = 0
    while True:
        reach = A @ frontier
        reach[depth >= 0] = 0.0
        hit = reach > 0
        if not hit.any():
            break
        d += 1
        depth[hit] = d
        sigma[hit] = reach[hit]
        frontier = np.where(hit, reach, 0.0)
    delta = np.zeros((n, b))
    for level in range(d, 0, -1):
        at = depth == level
        w = np.zeros((n, b))
        w[at] = (1.0 + delta[at]) / sigma[at]
        back = A @ w
        parent = depth == level - 1
        delta[parent] += sigma[parent] * back[parent]
    delta[sources, cols] = 0.0
    return delta.sum(axis=1)


@dataclass
class CentralityTable:
    """Per-user centrality features for one graph; absent users score 0."""

    degree: dict
    clustering: dict
    eigenvector: dict
    betweenness: dict
    eigenvector_converged: bool = True

    def lookup(self, user) -> tuple:
        return (
            self.clustering.get(user, 0.0),
            float(self.degree.get(user, 0)),
            self.eigenvector.get(user, 0.0),
            self.betweenness.get(user, 0.0),
        )


def centrality_table(graph: InteractionGraph, sample_size: int = 256, seed: int = 0) -> CentralityTable:
    degree = {u: degree_centrality(graph, u) for u in graph.nodes}
    clustering = {u: clustering_coefficient(graph, u) for u in graph.nodes}
    if graph.edges:
        eig = eigenvector_centrality(graph)
        eigen, ok = eig.scores, eig.converged
    else:
        eigen, ok = {u: 0.0 for u in graph.nodes}, True
    between = betweenness_centrality(graph, sample_size=sample_size, seed=seed)
    return CentralityTable(degree, clustering, eigen, between, ok)
