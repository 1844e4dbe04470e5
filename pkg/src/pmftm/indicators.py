"""Neighborhoods and the 18 trust indicators for ordered (truster, trustee) pairs.

Scalar functions evaluate one agent or pair straight from the dataset.
:func:`compute_indicators` is the batch route used by the pipeline; it
accumulates pair statistics item by item with numpy and returns a
DataFrame whose column order is fixed by ``COLUMNS``.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .dataset import Dataset
from .similarity import Kind, pairwise_similarity, pref_sim, social_sim

EPSILON = 0.5
THETA = 0.5
RATING_SPREAD = 4.0


@dataclass(frozen=True)
class IndicatorVector:
    benevolence: float
    integrity: float
    competence: float
    predictability: float
    social_jacc: float
    elite_years: float
    profile_up: float
    fans: float
    visibility: float
    global_feedback: float
    elite_norm: float
    profile_norm: float
    fans_norm: float
    feedback_norm: float
    item_jacc: float
    category_jacc: float
    are_friends: float
    are_fof: float
    competence_default: bool = False
    predictability_default: bool = False

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


INDICATOR_COLUMNS = tuple(f.name for f in fields(IndicatorVector))[:18]
FLAG_COLUMNS = ("competence_default", "predictability_default")
COLUMNS = INDICATOR_COLUMNS + FLAG_COLUMNS


@dataclass(frozen=True)
class NeighborhoodIndex:
    neighbors: dict[str, frozenset[str]]

    def __contains__(self, pair: tuple[str, str]) -> bool:
        i, j = pair
        return j in self.neighbors.get(i, ())

    def pairs(self) -> list[tuple[str, str]]:
        return [(i, j) for i in self.neighbors for j in sorted(self.neighbors[i])]

    def n_pairs(self) -> int:
        return sum(len(v) for v in self.neighbors.values())


# ---------------------------------------------------------------- scalar ops


def _jaccard(a: set, b: set) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def _friends_of_friends(i: str, d: Dataset) -> set[str]:
    out = set()
    for f in d.agents[i].friends:
        out |= d.agents[f].friends
    out.discard(i)
    return out


def neighborhood_of(i: str, d: Dataset) -> set[str]:
    """Agents sharing a rated item, a friendship or a common friend with ``i``."""
    out = set(d.agents[i].friends) | _friends_of_friends(i, d)
    for t in d.ratings[i]:
        out.update(d.item_raters[t])
    out.discard(i)
    return out


def competence(j: str, d: Dataset, epsilon: float = EPSILON) -> float:
    """Share of (item, co-rater) comparisons where ``j`` is within ``epsilon``; 0 without co-raters."""
    hits = total = 0
    for t, r in d.ratings[j].items():
        for k, rk in d.item_raters[t].items():
            if k == j:
                continue
            total += 1
            hits += abs(r - rk) < epsilon
    return hits / total if total else 0.0


def _direction_counts(i: str, j: str, d: Dataset, theta: float) -> tuple[int, int, int, int]:
    ri, rj = d.ratings[i], d.ratings[j]
    n_u = n_n = n_p = 0
    common = ri.keys() & rj.keys()
    for t in common:
        diff = ri[t] - rj[t]
        if abs(diff) <= theta:
            n_u += 1
        elif diff > theta:
            n_n += 1
        else:
            n_p += 1
    return n_u, n_n, n_p, len(common)


def predictability(i: str, j: str, d: Dataset, theta: float = THETA) -> float:
    """How one-sided the trustee's rating bias is relative to the truster; 0 without common items."""
    n_u, n_n, n_p, n = _direction_counts(i, j, d, theta)
    if n == 0:
        return 0.0
    return (max(n_u, n_n, n_p) - min(n_u, n_n, n_p)) / n


def visibility(j: str, d: Dataset) -> float:
    top = max((a.content_compliments for a in d.agents.values()), default=0)
    agent = d.agents[j]
    denom = agent.contributions * top
    return agent.content_compliments / denom if denom else 0.0


def integrity(j: str, d: Dataset) -> float:
    """1 minus the mean absolute deviation from item means, scaled by the 4-star spread."""
    row = d.ratings[j]
    if not row:
        return 0.0
    dev = math.fsum(abs(r - d.item_means[t]) for t, r in row.items())
    return 1.0 - dev / (RATING_SPREAD * len(row))


def _categories(i: str, d: Dataset) -> set[str]:
    out = set()
    for t in d.ratings[i]:
        out |= d.items[t].categories
    return out


def indicator_vector(i: str, j: str, d: Dataset) -> IndicatorVector:
    if i not in d.agents or j not in d.agents:
        raise KeyError(f"unknown agent in pair ({i!r}, {j!r})")
    b = d.agents[j]
    age = b.account_age_years
    n_u, n_n, n_p, n_common = _direction_counts(i, j, d, THETA)
    has_corater = any(len(d.item_raters[t]) > 1 for t in d.ratings[j])
    friends = j in d.agents[i].friends
    fof = bool(d.agents[i].friends & b.friends)
    return IndicatorVector(
        benevolence=pref_sim(i, j, d),
        integrity=integrity(j, d),
        competence=competence(j, d),
        predictability=predictability(i, j, d),
        social_jacc=social_sim(i, j, d),
        elite_years=float(b.elite_years),
        profile_up=float(b.profile_compliments),
        fans=float(b.fans),
        visibility=visibility(j, d),
        global_feedback=float(b.content_compliments),
        elite_norm=b.elite_years / age,
        profile_norm=b.profile_compliments / age,
        fans_norm=b.fans / age,
        feedback_norm=b.content_compliments / age,
        item_jacc=_jaccard(set(d.ratings[i]), set(d.ratings[j])),
        category_jacc=_jaccard(_categories(i, d), _categories(j, d)),
        are_friends=float(friends),
        are_fof=float(fof),
        competence_default=not has_corater,
        predictability_default=n_common == 0,
    )


# ---------------------------------------------------------------- batch


def _binary(rows, cols, shape) -> sp.csr_matrix:
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    m.data[:] = 1.0
    return m


def _rating_coords(d: Dataset):
    rows, cols = [], []
    for a, row in d.ratings.items():
        ai = d.agent_index[a]
        for t in row:
            rows.append(ai)
            cols.append(d.item_index[t])
    return rows, cols


def build_neighborhoods(d: Dataset) -> NeighborhoodIndex:
    n = len(d.agent_ids)
    rows, cols = _rating_coords(d)
    B = _binary(rows, cols, (n, len(d.item_ids)))
    F = d.friendship_matrix()
    M = (B @ B.T) + F + (F @ F)
    M = M.tocsr()
    M.setdiag(0)
    M.eliminate_zeros()
    ids = d.agent_ids
    out = {}
    for r in range(n):
        cols_r = M.indices[M.indptr[r] : M.indptr[r + 1]]
        out[ids[r]] = frozenset(ids[c] for c in cols_r)
    return NeighborhoodIndex(out)


def _trustee_table(d: Dataset, epsilon: float) -> pd.DataFrame:
    """Trustee-only indicators (plus competence flag) for every agent."""
    comp_hits = dict.fromkeys(d.agent_ids, 0)
    comp_total = dict.fromkeys(d.agent_ids, 0)
    for t, raters in d.item_raters.items():
        if len(raters) < 2:
            continue
        ids = list(raters)
        r = np.fromiter(raters.values(), float, len(ids))
        close = (np.abs(r[:, None] - r[None, :]) < epsilon).sum(axis=1) - 1
        for a, h in zip(ids, close.tolist()):
            comp_hits[a] += h
            comp_total[a] += len(ids) - 1
    top = max((a.content_compliments for a in d.agents.values()), default=0)
    recs = []
    for a_id, a in d.agents.items():
        tot = comp_total[a_id]
        denom = a.contributions * top
        age = a.account_age_years
        recs.append(
            {
                "integrity": integrity(a_id, d),
                "competence": comp_hits[a_id] / tot if tot else 0.0,
                "elite_years": float(a.elite_years),
                "profile_up": float(a.profile_compliments),
                "fans": float(a.fans),
                "visibility": a.content_compliments / denom if denom else 0.0,
                "global_feedback": float(a.content_compliments),
                "elite_norm": a.elite_years / age,
                "profile_norm": a.profile_compliments / age,
                "fans_norm": a.fans / age,
                "feedback_norm": a.content_compliments / age,
                "competence_default": tot == 0,
            }
        )
    return pd.DataFrame.from_records(recs, index=d.agent_ids)


def _direction_matrices(d: Dataset, theta: float):
    """Sparse n_u / n_n / n_p count matrices over all co-rating ordered pairs."""
    n = len(d.agent_ids)
    acc = {"u": ([], []), "n": ([], []), "p": ([], [])}
    for raters in d.item_raters.values():
        if len(raters) < 2:
            continue
        idx = np.fromiter((d.agent_index[a] for a in raters), int, len(raters))
        r = np.fromiter(raters.values(), float, len(raters))
        diff = r[:, None] - r[None, :]
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        off = ~np.eye(len(idx), dtype=bool)
        masks = {
            "u": (np.abs(diff) <= theta) & off,
            "n": (diff > theta) & off,
            "p": (diff < -theta) & off,
        }
        for key, m in masks.items():
            acc[key][0].append(ii[m])
            acc[key][1].append(jj[m])
    out = {}
    for key, (rr, cc) in acc.items():
        rr = np.concatenate(rr) if rr else np.zeros(0, int)
        cc = np.concatenate(cc) if cc else np.zeros(0, int)
        out[key] = sp.csr_matrix((np.ones(len(rr)), (rr, cc)), shape=(n, n))
    return out


def _lookup(m: sp.csr_matrix, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    if len(r) == 0:
        return np.zeros(0)
    return np.asarray(m[r, c]).ravel()


def compute_indicators(
    d: Dataset,
    pairs: Iterable[tuple[str, str]] | None = None,
    epsilon: float = EPSILON,
    theta: float = THETA,
) -> pd.DataFrame:
    """Indicator rows for ordered pairs (all neighborhood pairs when ``pairs`` is None)."""
    if pairs is None:
        pairs = build_neighborhoods(d).pairs()
    pairs = [(i, j) for i, j in pairs if i != j]
    idx = d.agent_index
    r = np.array([idx[i] for i, _ in pairs], dtype=int)
    c = np.array([idx[j] for _, j in pairs], dtype=int)
    n = len(d.agent_ids)

    trustee = _trustee_table(d, epsilon)
    frame = trustee.iloc[c].reset_index(drop=True)

    pref = pairwise_similarity(d, Kind.PREFERENCE)
    soc = pairwise_similarity(d, Kind.SOCIAL)
    frame["benevolence"] = 1.0 + _lookup(pref.offsets, r, c)
    frame["social_jacc"] = _lookup(soc.offsets, r, c)

    counts = _direction_matrices(d, theta)
    n_u, n_n, n_p = (_lookup(counts[k], r, c) for k in "unp")
    n_common = n_u + n_n + n_p
    stacked = np.vstack([n_u, n_n, n_p])
    with np.errstate(divide="ignore", invalid="ignore"):
        pred = np.where(n_common > 0, (stacked.max(axis=0) - stacked.min(axis=0)) / n_common, 0.0)
    frame["predictability"] = pred
    frame["predictability_default"] = n_common == 0

    rows, cols = _rating_coords(d)
    B = _binary(rows, cols, (n, len(d.item_ids)))
    n_items = np.asarray(B.sum(axis=1)).ravel()
    union = n_items[r] + n_items[c] - n_common
    frame["item_jacc"] = np.where(union > 0, n_common / np.where(union > 0, union, 1), 0.0)

    cats = sorted({cat for it in d.items.values() for cat in it.categories})
    cat_idx = {cat: k for k, cat in enumerate(cats)}
    crow, ccol = [], []
    for a in d.agent_ids:
        for cat in _categories(a, d):
            crow.append(idx[a])
            ccol.append(cat_idx[cat])
    C = _binary(crow, ccol, (n, max(len(cats), 1)))
    c_inter = _lookup((C @ C.T).tocsr(), r, c)
    c_size = np.asarray(C.sum(axis=1)).ravel()
    c_union = c_size[r] + c_size[c] - c_inter
    frame["category_jacc"] = np.where(c_union > 0, c_inter / np.where(c_union > 0, c_union, 1), 0.0)

    F = d.friendship_matrix().tocsr()
    friends = _lookup(F, r, c) > 0
    shared = _lookup((F @ F).tocsr(), r, c) > 0
    frame["are_friends"] = friends.astype(float)
    # common friend regardless of direct friendship; excluding friends would leak that label
    frame["are_fof"] = shared.astype(float)

    frame.insert(0, "trustee", [j for _, j in pairs])
    frame.insert(0, "truster", [i for i, _ in pairs])
    frame = frame[["truster", "trustee", *COLUMNS]]
    frame[list(FLAG_COLUMNS)] = frame[list(FLAG_COLUMNS)].astype(bool)
    return frame


def write_indicators(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False)


def read_indicators(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"truster": str, "trustee": str})
    return frame[["truster", "trustee", *COLUMNS]]
