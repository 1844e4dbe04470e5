"""Greedy seeding, modified k-means and cluster-quality metrics over sparse similarities.

All means over similarity treat unstored pairs as the matrix default, so
they work on the offset representation of :class:`SimilarityMatrix`:
``mean_sim(i, c) = default + sum_{m in c, m != i} offset[i, m] / (|c| - [i in c])``.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractError
from .similarity import SimilarityMatrix

_log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    agents: list[str]
    labels: np.ndarray
    k: int
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(self.agents):
            raise ContractError("assignment must cover every agent exactly once")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.k):
            raise ContractError("cluster index outside [0, k)")

    @property
    def assignment(self) -> dict[str, int]:
        return dict(zip(self.agents, self.labels.tolist()))

    def members(self, c: int) -> list[str]:
        return [a for a, lab in zip(self.agents, self.labels) if lab == c]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def empty_clusters(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.sizes() == 0)]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ClusterAssignment)
            and self.k == other.k
            and self.agents == other.agents
            and np.array_equal(self.labels, other.labels)
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["agent_id", "cluster_index"])
            w.writerows(zip(self.agents, self.labels.tolist()))

    @classmethod
    def from_csv(cls, path: str | Path, k: int | None = None) -> ClusterAssignment:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        labels = np.array([int(r["cluster_index"]) for r in rows], dtype=int)
        k = k if k is not None else (int(labels.max()) + 1 if len(labels) else 1)
        return cls([r["agent_id"] for r in rows], labels, k)


@dataclass(frozen=True)
class ClusterQuality:
    mean_intra: float
    silhouette: float
    sample_size: int


def _offsets_for(agents: Sequence[str], S: SimilarityMatrix) -> sp.csr_matrix:
    if list(agents) == S.agents:
        return S.offsets.tocsr()
    idx = np.array([S.index[a] for a in agents])
    return S.offsets.tocsr()[idx][:, idx].tocsr()


def _one_hot(labels: np.ndarray, k: int) -> sp.csr_matrix:
    n = len(labels)
    return sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, k))


def _cluster_sums(D: sp.csr_matrix, labels: np.ndarray, k: int) -> np.ndarray:
    """n x k table of summed offsets between each agent and each cluster."""
    return np.asarray((D @ _one_hot(labels, k)).todense())


def greedy_partition(agents: Sequence[str], S: SimilarityMatrix, eta: int) -> ClusterAssignment:
    """Fixed-size greedy clusters seeded at the most central free agent.

    Clusters of exactly ``eta`` are grown while more than ``eta`` agents
    are free; the remaining free agents form a final cluster.  Ties pick
    the lowest agent index.
    """
    agents = list(agents)
    n = len(agents)
    if n < 1:
        raise ContractError("need at least one agent")
    if eta < 1:
        raise ContractError("eta must be >= 1")
    D = _offsets_for(agents, S)
    Dc = D.tocsc()
    labels = np.full(n, -1, dtype=int)
    # constant default term and (n - 1) divisor do not change the argmax
    centrality = np.asarray(D.sum(axis=1)).ravel()
    free = np.ones(n, dtype=bool)
    n_free = n
    c = 0
    while n_free > eta:
        seed = int(np.argmax(np.where(free, centrality, -np.inf)))
        labels[seed] = c
        free[seed] = False
        n_free -= 1
        acc = Dc[:, seed].toarray().ravel()
        for _ in range(eta - 1):
            nxt = int(np.argmax(np.where(free, acc, -np.inf)))
            labels[nxt] = c
            free[nxt] = False
            n_free -= 1
            acc += Dc[:, nxt].toarray().ravel()
        c += 1
    if n_free:
        labels[free] = c
        c += 1
    return ClusterAssignment(agents, labels, c)


def _assign_to_nearest(D: sp.csr_matrix, labels: np.ndarray, k: int) -> np.ndarray:
    sums = _cluster_sums(D, labels, k)
    sizes = np.bincount(labels, minlength=k).astype(float)
    denom = np.broadcast_to(sizes, sums.shape).copy()
    denom[np.arange(len(labels)), labels] -= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(denom > 0, sums / denom, -np.inf)
    return np.argmax(means, axis=1)


def cluster_kmeans_modified(
    agents: Sequence[str],
    S: SimilarityMatrix,
    k: int,
    max_iter: int = 20,
) -> ClusterAssignment:
    """Mean-similarity k-means initialised from :func:`greedy_partition`.

    Each iteration computes every agent's mean similarity to each current
    cluster (excluding itself) from one snapshot and moves it to the
    argmax, lowest index on ties.  Stops early once nothing moves.
    """
    agents = list(agents)
    n = len(agents)
    if not 1 <= k <= n:
        raise ContractError(f"k={k} must lie in [1, {n}]")
    if max_iter < 0:
        raise ContractError("max_iter must be >= 0")
    D = _offsets_for(agents, S)
    labels = initial_partition(agents, S, k).labels.copy()
    iterations = 0
    converged = False
    for _ in range(max_iter):
        new = _assign_to_nearest(D, labels, k)
        iterations += 1
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    # simultaneous reassignment can cycle, so hitting max_iter is not rare
    out = ClusterAssignment(agents, labels, k, {"iterations": iterations, "converged": converged})
    if out.empty_clusters():
        _log.info("k-means left clusters %s empty", out.empty_clusters())
        out.notes["empty_clusters"] = out.empty_clusters()
    return out


def initial_partition(agents: Sequence[str], S: SimilarityMatrix, k: int) -> ClusterAssignment:
    """Greedy partition with cluster size ``floor(n / k)``, folded to exactly ``k`` clusters.

    Greedy seeding can yield more than ``k`` clusters when ``k`` does not
    divide ``n``; agents of the surplus clusters join the first-``k``
    cluster with the highest mean similarity.
    """
    agents = list(agents)
    g = greedy_partition(agents, S, len(agents) // k)
    if g.k <= k:
        return ClusterAssignment(agents, g.labels, k)
    labels = g.labels.copy()
    surplus = labels >= k
    D = _offsets_for(agents, S)[surplus][:, ~surplus]
    sums = _cluster_sums(D, labels[~surplus], k)
    sizes = np.bincount(labels[~surplus], minlength=k).astype(float)
    labels[surplus] = np.argmax(sums / sizes, axis=1)
    return ClusterAssignment(agents, labels, k)


def random_partition(agents: Sequence[str], k: int, seed: int = 0) -> ClusterAssignment:
    agents = list(agents)
    if not 1 <= k <= len(agents):
        raise ContractError(f"k={k} must lie in [1, {len(agents)}]")
    rng = np.random.default_rng(seed)
    return ClusterAssignment(agents, rng.integers(0, k, size=len(agents)), k)


def _mean_dist_table(C: ClusterAssignment, S: SimilarityMatrix):
    """Per-agent mean distance to each cluster (self excluded) and the divisor used."""
    D = _offsets_for(C.agents, S)
    sums = _cluster_sums(D, C.labels, C.k)
    sizes = C.sizes().astype(float)
    denom = np.broadcast_to(sizes, sums.shape).copy()
    denom[np.arange(len(C.labels)), C.labels] -= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_sim = S.default + sums / denom
    return S.kind.max_sim - mean_sim, denom


def mean_intra_distance(C: ClusterAssignment, S: SimilarityMatrix) -> float:
    """Average over non-empty clusters of the members' mean distance to co-members.

    Singleton clusters contribute 0.
    """
    dist, denom = _mean_dist_table(C, S)
    rows = np.arange(len(C.labels))
    own = dist[rows, C.labels]
    own = np.where(denom[rows, C.labels] > 0, own, 0.0)
    per_cluster = [own[C.labels == c].mean() for c in range(C.k) if np.any(C.labels == c)]
    return float(np.mean(per_cluster)) if per_cluster else 0.0


def silhouette(C: ClusterAssignment, S: SimilarityMatrix, sample: int = 1000, seed: int = 0) -> float:
    """Mean silhouette over a seeded sample of agents.

    ``b`` is the smallest mean distance to another non-empty cluster;
    members of singleton clusters score 0.
    """
    nonempty = np.flatnonzero(C.sizes() > 0)
    if len(nonempty) < 2:
        _log.warning("silhouette needs at least two non-empty clusters; returning 0")
        return 0.0
    n = len(C.labels)
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=min(sample, n), replace=False))
    return float(np.mean(silhouette_samples(C, S)[picked]))


def silhouette_samples(C: ClusterAssignment, S: SimilarityMatrix) -> np.ndarray:
    dist, denom = _mean_dist_table(C, S)
    rows = np.arange(len(C.labels))
    a = dist[rows, C.labels]
    other = dist.copy()
    other[rows, C.labels] = np.inf
    other[:, C.sizes() == 0] = np.inf
    b = other.min(axis=1)
    top = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(top > 0, (b - a) / top, 0.0)
    return np.where(denom[rows, C.labels] > 0, s, 0.0)


def cluster_quality(C: ClusterAssignment, S: SimilarityMatrix, sample: int = 1000, seed: int = 0) -> ClusterQuality:
    return ClusterQuality(
        mean_intra=mean_intra_distance(C, S),
        silhouette=silhouette(C, S, sample, seed),
        sample_size=min(sample, len(C.agents)),
    )


def size_histogram(C: ClusterAssignment) -> dict[int, int]:
    return dict(sorted(Counter(C.sizes().tolist()).items()))


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Chance-corrected pair agreement between two partitions."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    index = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(len(a))
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))
