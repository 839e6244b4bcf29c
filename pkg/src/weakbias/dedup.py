"""Near-duplicate detection over feature vectors.

A hierarchical navigable-small-world graph answers approximate k-nearest-
neighbour queries under squared Euclidean distance. Pairs closer than a
caller-chosen threshold are merged with union-find; each cluster keeps one
canonical sample, picked by side majority and then lowest id. Construction
is sequential and deterministic under a fixed seed; queries only read.
"""

from __future__ import annotations

import heapq
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, SideLabel
from .errors import InputError


@dataclass
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 300
    k: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.M < 2:
            raise InputError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise InputError("ef_construction and ef_search must be >= 1")
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.ef_search < self.k:
            warnings.warn(
                f"ef_search={self.ef_search} is below k={self.k}; recall will "
                "suffer",
                stacklevel=2,
            )


class HnswIndex:
    """Layered proximity graph. Nodes are referenced by position; the public
    query API speaks sample ids."""

    def __init__(self, vectors: np.ndarray, ids: list[str], params: HnswParams):
        self.vectors = vectors
        self.ids = ids
        self.params = params
        self._id_to_idx = {sid: i for i, sid in enumerate(ids)}
        # _links[node][level] -> list of neighbour node indices
        self._links: list[list[list[int]]] = []
        self._entry = -1
        self._max_level = -1
        self._ml = 1.0 / math.log(params.M)

    def __len__(self) -> int:
        return len(self._links)

    def _distances(self, node_indices: list[int], query: np.ndarray) -> np.ndarray:
        diff = self.vectors[node_indices] - query
        return np.einsum("ij,ij->i", diff, diff)

    def _distance(self, idx: int, query: np.ndarray) -> float:
        diff = self.vectors[idx] - query
        return float(diff @ diff)

    def _max_degree(self, level: int) -> int:
        # The bottom layer holds the bulk of the graph, so it gets 2M links.
        return 2 * self.params.M if level == 0 else self.params.M

    def _search_layer(
        self, query: np.ndarray, entry_points: list[int], ef: int, level: int
    ) -> list[tuple[float, int]]:
        """Greedy beam search on one layer; ascending (distance, index)."""
        visited = set(entry_points)
        candidates: list[tuple[float, int]] = []
        results: list[tuple[float, int]] = []  # max-heap via negated distance
        for idx in entry_points:
            d = self._distance(idx, query)
            heapq.heappush(candidates, (d, idx))
            heapq.heappush(results, (-d, idx))
        while candidates:
            dist, idx = heapq.heappop(candidates)
            if dist > -results[0][0]:
                break
            fresh = [u for u in self._links[idx][level] if u not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            dists = self._distances(fresh, query)
            for u, du in zip(fresh, dists):
                du = float(du)
                if len(results) < ef or du < -results[0][0]:
                    heapq.heappush(candidates, (du, u))
                    heapq.heappush(results, (-du, u))
                    if len(results) > ef:
                        heapq.heappop(results)
        return sorted((-nd, idx) for nd, idx in results)

    def _prune(self, idx: int, level: int) -> None:
        links = self._links[idx][level]
        cap = self._max_degree(level)
        if len(links) <= cap:
            return
        dists = self._distances(links, self.vectors[idx])
        order = sorted(zip(dists, links))
        self._links[idx][level] = [u for _, u in order[:cap]]

    def _insert(self, idx: int, level: int) -> None:
        self._links.append([[] for _ in range(level + 1)])
        if self._entry < 0:
            self._entry = idx
            self._max_level = level
            return
        query = self.vectors[idx]
        ep = [self._entry]
        for lc in range(self._max_level, level, -1):
            ep = [self._search_layer(query, ep, 1, lc)[0][1]]
        for lc in range(min(level, self._max_level), -1, -1):
            nearest = self._search_layer(query, ep, self.params.ef_construction, lc)
            chosen = [u for _, u in nearest[: self.params.M]]
            self._links[idx][lc] = list(chosen)
            for u in chosen:
                self._links[u][lc].append(idx)
                self._prune(u, lc)
            ep = [u for _, u in nearest]
        if level > self._max_level:
            self._entry = idx
            self._max_level = level

    def knn_vector(
        self, query: np.ndarray, k: int, exclude: int | None = None
    ) -> list[tuple[str, float]]:
        """k nearest stored vectors to the query, ascending distance, ties by
        id. ef is raised to k+1 when ef_search is smaller so the self match
        cannot crowd out a real neighbour."""
        if self._entry < 0:
            return []
        query = np.asarray(query, dtype=self.vectors.dtype)
        ep = [self._entry]
        for lc in range(self._max_level, 0, -1):
            ep = [self._search_layer(query, ep, 1, lc)[0][1]]
        ef = max(self.params.ef_search, k + 1)
        found = self._search_layer(query, ep, ef, 0)
        out = [
            (self.ids[idx], float(d)) for d, idx in found if idx != exclude
        ]
        out.sort(key=lambda pair: (pair[1], pair[0]))
        return out[:k]


def build_index(
    features: np.ndarray, params: HnswParams, ids: list[str] | None = None
) -> HnswIndex:
    """Insert all rows of `features` in order. Levels are sampled
    geometrically with factor 1/ln(M) from the params seed."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise InputError(f"features must be 2-D, got shape {features.shape}")
    n = features.shape[0]
    if ids is None:
        ids = [str(i) for i in range(n)]
    if len(ids) != n:
        raise InputError(f"{len(ids)} ids for {n} feature rows")
    if len(set(ids)) != n:
        raise InputError("feature ids must be unique")
    index = HnswIndex(features, list(ids), params)
    rng = np.random.default_rng(params.seed)
    ml = 1.0 / math.log(params.M)
    for i in range(n):
        u = 1.0 - rng.random()  # in (0, 1], keeps log finite
        level = int(-math.log(u) * ml)
        index._insert(i, level)
    return index


def knn(index: HnswIndex, query_id: str, k: int) -> list[tuple[str, float]]:
    """Nearest stored neighbours of a stored sample, excluding itself."""
    if query_id not in index._id_to_idx:
        raise InputError(f"unknown sample id {query_id!r}")
    idx = index._id_to_idx[query_id]
    return index.knn_vector(index.vectors[idx], k, exclude=idx)


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]  # path halving
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass(frozen=True)
class DuplicateCluster:
    member_ids: frozenset[str]
    canonical_id: str


def select_canonical(member_ids, corpus: Corpus) -> str:
    """The sample to keep from one duplicate cluster.

    The side with more members wins and its lowest id is kept; a side tie
    falls back to the lowest id overall (whose side then wins by
    definition)."""
    members = sorted(member_ids)
    if not members:
        raise InputError("cannot pick a canonical sample from an empty cluster")
    left = [m for m in members if corpus.sample(m).side is SideLabel.LEFT]
    right = [m for m in members if corpus.sample(m).side is SideLabel.RIGHT]
    if len(left) > len(right):
        return left[0]
    if len(right) > len(left):
        return right[0]
    return members[0]


def cluster_duplicates(
    corpus: Corpus, params: HnswParams, threshold: float
) -> list[DuplicateCluster]:
    """Group samples whose kNN edges fall at or below the distance threshold.

    An edge in either direction merges its endpoints (neighbour lists are
    not symmetric near the cutoff k). Only components with two or more
    members are reported, ordered by lowest member id."""
    if threshold < 0:
        raise InputError(f"threshold must be >= 0, got {threshold}")
    n = len(corpus)
    if n == 0:
        return []
    ids = corpus.ids()
    index = build_index(corpus.features(), params, ids)
    uf = _UnionFind(n)
    pos = {sid: i for i, sid in enumerate(ids)}
    for i, sid in enumerate(ids):
        for other_id, dist in knn(index, sid, params.k):
            if dist <= threshold:
                uf.union(i, pos[other_id])
    groups: dict[int, list[str]] = {}
    for i, sid in enumerate(ids):
        groups.setdefault(uf.find(i), []).append(sid)
    clusters = [
        DuplicateCluster(frozenset(members), select_canonical(members, corpus))
        for members in groups.values()
        if len(members) >= 2
    ]
    clusters.sort(key=lambda c: min(c.member_ids))
    return clusters


def deduplicate(
    corpus: Corpus, params: HnswParams, threshold: float
) -> tuple[Corpus, list[DuplicateCluster]]:
    """Remove every cluster member except its canonical sample.

    Returns the reduced corpus (original order preserved) and the clusters.
    Running the result through deduplicate again is a no-op as long as the
    surviving samples are farther apart than the threshold."""
    clusters = cluster_duplicates(corpus, params, threshold)
    drop: set[str] = set()
    for cluster in clusters:
        drop.update(cluster.member_ids)
        drop.discard(cluster.canonical_id)
    kept = [s for s in corpus if s.id not in drop]
    return Corpus(corpus.feature_dim, kept), clusters


def save_cluster_report(
    clusters: list[DuplicateCluster], path: str, corpus: Corpus | None = None
) -> None:
    """One JSON line per cluster: canonical id, member ids, and side counts
    when a corpus is supplied to look them up in."""
    with open(path, "w", encoding="utf-8") as fh:
        for cluster in clusters:
            fh.write(json.dumps(cluster_report_row(cluster, corpus)) + "\n")


def cluster_report_row(cluster: DuplicateCluster, corpus: Corpus | None) -> dict:
    row = {
        "canonical": cluster.canonical_id,
        "members": sorted(cluster.member_ids),
    }
    if corpus is not None:
        left = sum(
            1 for m in cluster.member_ids if corpus.sample(m).side is SideLabel.LEFT
        )
        row["side_counts"] = {"L": left, "R": len(cluster.member_ids) - left}
    return row


def knn_distance_histogram(
    corpus: Corpus,
    params: HnswParams,
    *,
    sample_size: int = 500,
    bins: int = 50,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of kNN distances over a sample of queries.

    Useful for eyeballing a duplicate threshold: near-duplicates show up as
    a spike at the low end, well separated from the bulk. Returns
    (counts, bin_edges) as np.histogram does."""
    n = len(corpus)
    if n < 2:
        raise InputError("need at least two samples for a distance histogram")
    ids = corpus.ids()
    rng = np.random.default_rng(seed)
    if n > sample_size:
        chosen = [ids[i] for i in rng.choice(n, size=sample_size, replace=False)]
    else:
        chosen = ids
    index = build_index(corpus.features(), params, ids)
    dists: list[float] = []
    for sid in chosen:
        dists.extend(d for _, d in knn(index, sid, params.k))
    return np.histogram(np.asarray(dists), bins=bins)
