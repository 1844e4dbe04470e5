"""Preference and social similarity between agents.

Preference similarity is ``1 + cosine`` of rating deviations from item
means over co-rated items (default 1 when fewer than ``min_common``
co-rated items or a zero variance).  Social similarity is the Jaccard
index of friend sets (default 0 when both are empty).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .errors import ContractError

MIN_COMMON_ITEMS = 4
_ZERO = 1e-12


class Kind(str, enum.Enum):
    PREFERENCE = "preference"
    SOCIAL = "social"

    @property
    def default(self) -> float:
        return 1.0 if self is Kind.PREFERENCE else 0.0

    @property
    def max_sim(self) -> float:
        return 2.0 if self is Kind.PREFERENCE else 1.0


def _agent(d: Dataset, agent_id: str):
    try:
        return d.agents[agent_id]
    except KeyError:
        raise KeyError(f"unknown agent {agent_id!r}") from None


def pref_sim(i: str, j: str, d: Dataset, min_common: int = MIN_COMMON_ITEMS) -> float:
    _agent(d, i), _agent(d, j)
    ri, rj = d.ratings[i], d.ratings[j]
    common = sorted(ri.keys() & rj.keys())
    if len(common) < min_common:
        return 1.0
    xi = np.array([ri[k] - d.item_means[k] for k in common])
    xj = np.array([rj[k] - d.item_means[k] for k in common])
    si, sj = float(xi @ xi), float(xj @ xj)
    if si <= _ZERO or sj <= _ZERO:
        return 1.0
    r = float(xi @ xj) / math.sqrt(si * sj)
    return 1.0 + min(1.0, max(-1.0, r))


def social_sim(i: str, j: str, d: Dataset) -> float:
    fi, fj = _agent(d, i).friends, _agent(d, j).friends
    union = len(fi | fj)
    if union == 0:
        return 0.0
    return len(fi & fj) / union


def sim_to_distance(s: float, kind: Kind) -> float:
    kind = Kind(kind)
    if not (0.0 <= s <= kind.max_sim) or math.isnan(s):
        raise ContractError(f"{kind.value} similarity {s} outside [0, {kind.max_sim}]")
    return kind.max_sim - s


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Sparse symmetric similarity over ``agents``.

    ``offsets`` holds ``value - default`` for stored pairs only; every
    other off-diagonal pair has the default value.
    """

    kind: Kind
    agents: list[str]
    offsets: sp.csr_matrix

    @property
    def default(self) -> float:
        return self.kind.default

    @property
    def index(self) -> dict[str, int]:
        idx = self.__dict__.get("_index")
        if idx is None:
            idx = {a: n for n, a in enumerate(self.agents)}
            object.__setattr__(self, "_index", idx)
        return idx

    def get(self, i: str, j: str) -> float:
        if i == j:
            raise ContractError("similarity of an agent with itself is undefined")
        idx = self.index
        return self.default + float(self.offsets[idx[i], idx[j]])

    __call__ = get

    def entries(self) -> Iterable[tuple[str, str, float]]:
        """Stored (non-default) entries with i < j by index."""
        coo = sp.triu(self.offsets, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            yield self.agents[r], self.agents[c], self.default + float(v)

    def dense(self) -> np.ndarray:
        """Full matrix with the diagonal set to NaN; for small universes only."""
        out = self.offsets.toarray() + self.default
        np.fill_diagonal(out, np.nan)
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# kind={self.kind.value} default={self.default}\n")
            w = csv.writer(fh)
            w.writerow(["i", "j", "value"])
            for i, j, v in self.entries():
                w.writerow([i, j, repr(v)])

    @classmethod
    def from_csv(cls, path: str | Path, agents: list[str]) -> SimilarityMatrix:
        with open(path, newline="") as fh:
            header = fh.readline().strip().lstrip("#").split()
            meta = dict(h.split("=", 1) for h in header)
            kind = Kind(meta["kind"])
            rows = list(csv.DictReader(fh))
        triples = [(r["i"], r["j"], float(r["value"])) for r in rows]
        return from_triples(kind, agents, triples)


def from_triples(kind: Kind, agents: list[str], triples: Iterable[tuple[str, str, float]]) -> SimilarityMatrix:
    kind = Kind(kind)
    idx = {a: n for n, a in enumerate(agents)}
    offsets: dict[tuple[int, int], float] = {}
    for i, j, v in triples:
        if i == j or v == kind.default:
            continue
        a, b = idx[i], idx[j]
        offsets[(a, b)] = offsets[(b, a)] = v - kind.default
    n = len(agents)
    if not offsets:
        return SimilarityMatrix(kind, list(agents), sp.csr_matrix((n, n)))
    r, c = zip(*offsets)
    m = sp.csr_matrix((list(offsets.values()), (r, c)), shape=(n, n))
    return SimilarityMatrix(kind, list(agents), m)


def pairwise_similarity(
    d: Dataset,
    kind: Kind,
    pairs: Iterable[tuple[str, str]] | None = None,
    min_common: int = MIN_COMMON_ITEMS,
) -> SimilarityMatrix:
    """Batch similarity over ``pairs`` (all pairs when ``None``).

    Uses sparse products over the rating / friendship matrices, so the
    cost scales with co-rating and shared-friend counts rather than n^2.
    """
    kind = Kind(kind)
    n = len(d.agent_ids)
    full = _pref_all(d, min_common) if kind is Kind.PREFERENCE else _social_all(d)
    if pairs is not None:
        idx = d.agent_index
        mask_r, mask_c = [], []
        for i, j in pairs:
            if i == j:
                continue
            a, b = idx[i], idx[j]
            mask_r += [a, b]
            mask_c += [b, a]
        mask = sp.csr_matrix((np.ones(len(mask_r)), (mask_r, mask_c)), shape=(n, n))
        mask.data[:] = 1.0
        full = full.multiply(mask).tocsr()
    full.eliminate_zeros()
    return SimilarityMatrix(kind, list(d.agent_ids), full.tocsr())


def _pref_all(d: Dataset, min_common: int) -> sp.csr_matrix:
    n_agents, n_items = len(d.agent_ids), len(d.item_ids)
    rows, cols, dev = [], [], []
    for a, row in d.ratings.items():
        ai = d.agent_index[a]
        for t, s in row.items():
            rows.append(ai)
            cols.append(d.item_index[t])
            dev.append(s - d.item_means[t])
    shape = (n_agents, n_items)
    B = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    X = sp.csr_matrix((dev, (rows, cols)), shape=shape)
    X2 = X.multiply(X).tocsr()
    count = (B @ B.T).tocoo()
    keep = count.data >= min_common
    r, c = count.row[keep], count.col[keep]
    cross = _gather(X @ X.T, r, c)
    ss_i = _gather(X2 @ B.T, r, c)
    ss_j = _gather(B @ X2.T, r, c)
    ok = (ss_i > _ZERO) & (ss_j > _ZERO) & (r != c)
    corr = np.zeros_like(cross)
    corr[ok] = cross[ok] / np.sqrt(ss_i[ok] * ss_j[ok])
    corr = np.clip(corr, -1.0, 1.0)
    return sp.csr_matrix((corr[ok], (r[ok], c[ok])), shape=(n_agents, n_agents))


def _social_all(d: Dataset) -> sp.csr_matrix:
    F = d.friendship_matrix()
    deg = np.asarray(F.sum(axis=1)).ravel()
    inter = (F @ F.T).tocoo()
    r, c, v = inter.row, inter.col, inter.data
    union = deg[r] + deg[c] - v
    ok = (union > 0) & (r != c)
    return sp.csr_matrix((v[ok] / union[ok], (r[ok], c[ok])), shape=F.shape)


def _gather(m: sp.spmatrix, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = m.tocsr()
    return np.asarray(m[r, c]).ravel() if len(r) else np.zeros(0)
