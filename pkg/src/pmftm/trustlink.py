"""Balanced link training sets, logistic link classifiers and the predicted trust matrix."""

from __future__ import annotations

import csv
import enum
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .clustering import ClusterAssignment
from .dataset import Dataset
from .errors import ContractError, DataError, NumericalError
from .indicators import COLUMNS, NeighborhoodIndex, compute_indicators

_log = logging.getLogger(__name__)

GLOBAL = "global"
MIN_CLUSTER_AGENTS = 100
MIN_CLUSTER_POSITIVES = 1000


class LinkTarget(str, enum.Enum):
    FRIENDSHIP = "friendship"
    POSITIVE_CORRELATION = "positive_correlation"

    @property
    def excluded(self) -> str:
        """Indicator column that encodes the label itself."""
        return "are_friends" if self is LinkTarget.FRIENDSHIP else "benevolence"

    @property
    def features(self) -> list[str]:
        return [c for c in COLUMNS if c != self.excluded]

    def labels(self, table: pd.DataFrame) -> np.ndarray:
        if self is LinkTarget.FRIENDSHIP:
            return (table["are_friends"].to_numpy() > 0).astype(int)
        # default similarity is exactly 1, so > 1 implies enough co-rated items
        return (table["benevolence"].to_numpy() > 1.0).astype(int)


@dataclass
class LinkExamples:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    pairs: list[tuple[str, str]]
    no_positives: bool = False

    @property
    def n_positive(self) -> int:
        return int(self.y.sum())

    def subset(self, rows: np.ndarray) -> LinkExamples:
        return LinkExamples(self.X[rows], self.y[rows], self.feature_names, [self.pairs[r] for r in rows])

    @staticmethod
    def concat(parts: Sequence[LinkExamples]) -> LinkExamples:
        parts = [p for p in parts if len(p.y)]
        if not parts:
            return LinkExamples(np.zeros((0, 0)), np.zeros(0, int), [], [], True)
        return LinkExamples(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            parts[0].feature_names,
            [pair for p in parts for pair in p.pairs],
        )


def _rng_for(agents: Sequence[str], seed: int) -> np.random.Generator:
    # keyed on the truster set so identical sets draw identical samples
    key = zlib.crc32("\x1f".join(sorted(agents)).encode())
    return np.random.default_rng([seed, key])


def build_training_set(
    cluster_agents: Sequence[str],
    target: LinkTarget,
    table: pd.DataFrame,
    d: Dataset,
    seed: int = 0,
    neighborhoods: NeighborhoodIndex | None = None,
) -> LinkExamples:
    """All positive links from the cluster's trusters plus an equal number of sampled negatives.

    Negatives come from neighborhood pairs without the link; if there are
    too few, non-neighborhood pairs are drawn to make up the difference.
    """
    target = LinkTarget(target)
    feats = target.features
    members = set(cluster_agents)
    rows = table[table["truster"].isin(members)]
    labels = target.labels(rows)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0:
        return LinkExamples(np.zeros((0, len(feats))), np.zeros(0, int), feats, [], True)
    rng = _rng_for(list(members), seed)
    take = min(len(pos), len(neg))
    chosen = np.sort(rng.choice(neg, size=take, replace=False)) if take else np.zeros(0, int)
    picked = rows.iloc[np.concatenate([pos, chosen])]
    X = picked[feats].to_numpy(dtype=float)
    y = np.concatenate([np.ones(len(pos), int), np.zeros(take, int)])
    pairs = list(zip(picked["truster"], picked["trustee"]))

    missing = len(pos) - take
    if missing:
        extra = _sample_outside(sorted(members), missing, d, neighborhoods, rng, set(pairs))
        if extra:
            ex = compute_indicators(d, extra)
            X = np.vstack([X, ex[feats].to_numpy(dtype=float)])
            y = np.concatenate([y, target.labels(ex)])
            pairs += extra
        if len(extra) < missing:
            _log.warning("only %d of %d extra negatives available", len(extra), missing)
    return LinkExamples(X, y, feats, pairs)


def _sample_outside(members, count, d, neighborhoods, rng, taken) -> list[tuple[str, str]]:
    everyone = d.agent_ids
    out: list[tuple[str, str]] = []
    seen = set(taken)
    budget = 50 * count + 100
    while len(out) < count and budget > 0:
        budget -= 1
        i = members[rng.integers(len(members))]
        j = everyone[rng.integers(len(everyone))]
        if i == j or (i, j) in seen or j in d.agents[i].friends:
            continue
        if neighborhoods is not None and (i, j) in neighborhoods:
            continue
        seen.add((i, j))
        out.append((i, j))
    return out


@dataclass
class LinkClassifier:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    feature_names: list[str]
    trained_on: str | int = GLOBAL
    n_iter: int = 0

    def decision(self, X: np.ndarray) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.feature_means) / self.feature_scales
        return Z @ self.weights + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(int)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_means": self.feature_means.tolist(),
            "feature_scales": self.feature_scales.tolist(),
            "trained_on": self.trained_on,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> LinkClassifier:
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            bias=float(data["bias"]),
            feature_means=np.asarray(data["feature_means"], dtype=float),
            feature_scales=np.asarray(data["feature_scales"], dtype=float),
            feature_names=list(data["feature_names"]),
            trained_on=data.get("trained_on", GLOBAL),
            n_iter=int(data.get("n_iter", 0)),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _objective(Z, y, w, b, l2):
    z = Z @ w + b
    # log(1 + e^z) - y z, computed stably
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def train_link_classifier(
    examples: LinkExamples,
    l2: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 1000,
    trained_on: str | int = GLOBAL,
) -> LinkClassifier:
    """L2-regularised logistic regression on standardised features, fitted by damped Newton steps.

    The penalty ``l2 / 2 * ||w||^2`` applies to weights only.  Iteration
    stops once the largest parameter update falls below ``tol``.
    """
    X = np.asarray(examples.X, dtype=float)
    y = np.asarray(examples.y, dtype=float)
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise ContractError("need at least two examples covering both labels")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales <= 1e-12] = 1.0
    Z = (X - means) / scales
    n, p = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    theta = np.zeros(p + 1)
    reg = np.full(p + 1, l2)
    reg[-1] = 1e-10
    current = _objective(Z, y, theta[:-1], theta[-1], l2)
    it = 0
    for it in range(1, max_iter + 1):
        prob = _sigmoid(A @ theta)
        grad = A.T @ (prob - y) + reg * theta
        hess = (A * (prob * (1 - prob))[:, None]).T @ A + np.diag(reg)
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        while True:
            cand = theta - scale * step
            value = _objective(Z, y, cand[:-1], cand[-1], l2)
            if value <= current + 1e-12 or scale < 1e-8:
                break
            scale *= 0.5
        theta, current = cand, value
        if not np.isfinite(current):
            raise NumericalError("logistic regression diverged")
        if np.max(np.abs(scale * step)) < tol:
            break
    return LinkClassifier(theta[:-1].copy(), float(theta[-1]), means, scales, list(examples.feature_names), trained_on, it)


def assign_classifiers(
    C: ClusterAssignment,
    per_cluster_data: Mapping[int, LinkExamples],
    global_sample: LinkExamples,
    min_agents: int = MIN_CLUSTER_AGENTS,
    min_positive: int = MIN_CLUSTER_POSITIVES,
    **fit_kw,
) -> dict[int, LinkClassifier]:
    """Own classifier for clusters with enough agents and positive links, the global one otherwise."""
    sizes = C.sizes()
    global_clf: LinkClassifier | None = None
    out: dict[int, LinkClassifier] = {}
    for c in range(C.k):
        data = per_cluster_data.get(c)
        if data is not None and sizes[c] >= min_agents and data.n_positive >= min_positive:
            out[c] = train_link_classifier(data, trained_on=c, **fit_kw)
        else:
            if global_clf is None:
                global_clf = train_link_classifier(global_sample, trained_on=GLOBAL, **fit_kw)
            out[c] = global_clf
    return out


def global_training_set(
    C: ClusterAssignment,
    target: LinkTarget,
    table: pd.DataFrame,
    d: Dataset,
    seed: int = 0,
    sample_size: int | None = None,
    neighborhoods: NeighborhoodIndex | None = None,
) -> LinkExamples:
    """Balanced examples from a random sample of trusters across all clusters (all when ``sample_size`` is None)."""
    agents = list(C.agents)
    if sample_size is not None and sample_size < len(agents):
        rng = np.random.default_rng(seed)
        agents = sorted(rng.choice(agents, size=sample_size, replace=False).tolist())
    return build_training_set(agents, target, table, d, seed, neighborhoods)


def train_personalized(
    C: ClusterAssignment,
    target: LinkTarget,
    table: pd.DataFrame,
    d: Dataset,
    seed: int = 0,
    min_agents: int = MIN_CLUSTER_AGENTS,
    min_positive: int = MIN_CLUSTER_POSITIVES,
    global_sample_size: int | None = None,
    neighborhoods: NeighborhoodIndex | None = None,
) -> dict[int, LinkClassifier]:
    per_cluster = {}
    sizes = C.sizes()
    for c in range(C.k):
        if sizes[c] == 0:
            continue
        per_cluster[c] = build_training_set(C.members(c), target, table, d, seed, neighborhoods)
    own = [c for c in per_cluster if sizes[c] >= min_agents and per_cluster[c].n_positive >= min_positive]
    _log.info("%d of %d clusters get their own classifier", len(own), C.k)
    glob = None
    if len(own) < C.k:
        glob = global_training_set(C, target, table, d, seed, global_sample_size, neighborhoods)
    return assign_classifiers(C, per_cluster, glob, min_agents, min_positive)


UNDEFINED = None


@dataclass
class TrustPredictionMatrix:
    """Directed 0/1 trust predictions over covered (neighborhood) pairs."""

    entries: dict[tuple[str, str], int] = field(default_factory=dict)

    def get(self, i: str, j: str):
        return self.entries.get((i, j), UNDEFINED)

    def value(self, i: str, j: str) -> float:
        """Entry with undefined pairs read as 0."""
        return float(self.entries.get((i, j), 0))

    def positives(self) -> list[tuple[str, str]]:
        return sorted(p for p, v in self.entries.items() if v)

    def covered(self) -> list[tuple[str, str]]:
        return sorted(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, TrustPredictionMatrix) and self.entries == other.entries

    def __len__(self) -> int:
        return len(self.entries)

    def to_csv(self, path: str | Path, manifest: str | Path | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "value"])
            for i, j in self.positives():
                w.writerow([i, j, 1])
        if manifest is not None:
            with open(manifest, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["i", "j"])
                w.writerows(self.covered())

    @classmethod
    def from_csv(cls, path: str | Path, manifest: str | Path) -> TrustPredictionMatrix:
        with open(manifest, newline="") as fh:
            entries = {(r["i"], r["j"]): 0 for r in csv.DictReader(fh)}
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                entries[(r["i"], r["j"])] = int(r["value"])
        return cls(entries)


def predict_trust_matrix(
    C: ClusterAssignment,
    classifiers: Mapping[int, LinkClassifier],
    table: pd.DataFrame,
    neighborhoods: NeighborhoodIndex | None = None,
) -> TrustPredictionMatrix:
    """Score each covered pair with the classifier of the truster's cluster; 1 iff probability > 0.5."""
    if neighborhoods is not None:
        keep = [j in neighborhoods.neighbors.get(i, ()) for i, j in zip(table["truster"], table["trustee"])]
        table = table[np.array(keep, dtype=bool)]
    cluster_of = C.assignment
    clusters = table["truster"].map(cluster_of).to_numpy()
    entries: dict[tuple[str, str], int] = {}
    for c in np.unique(clusters):
        rows = table[clusters == c]
        clf = classifiers[int(c)]
        pred = clf.predict(rows[clf.feature_names].to_numpy(dtype=float))
        for i, j, v in zip(rows["truster"], rows["trustee"], pred.tolist()):
            entries[(i, j)] = int(v)
    return TrustPredictionMatrix(dict(sorted(entries.items())))


def friendship_trust_matrix(d: Dataset, neighborhoods: NeighborhoodIndex) -> TrustPredictionMatrix:
    """Explicit friendships as trust links over neighborhood pairs."""
    entries = {}
    for i in d.agent_ids:
        friends = d.agents[i].friends
        for j in sorted(neighborhoods.neighbors.get(i, ())):
            entries[(i, j)] = int(j in friends)
    return TrustPredictionMatrix(entries)


def save_classifiers(classifiers: Mapping[int, LinkClassifier], path: str | Path) -> None:
    payload = {str(c): clf.to_dict() for c, clf in sorted(classifiers.items())}
    Path(path).write_text(json.dumps(payload, indent=2))


def load_classifiers(path: str | Path) -> dict[int, LinkClassifier]:
    payload = json.loads(Path(path).read_text())
    return {int(c): LinkClassifier.from_dict(v) for c, v in payload.items()}


# ---------------------------------------------------------------- held-out comparison


def accuracy(clf: LinkClassifier, data: LinkExamples) -> float:
    return float(np.mean(clf.predict(data.X) == data.y))


def heldout_link_accuracy(
    C: ClusterAssignment,
    target: LinkTarget,
    table: pd.DataFrame,
    d: Dataset,
    seed: int = 0,
    holdout: float = 0.3,
    min_agents: int = MIN_CLUSTER_AGENTS,
    min_positive: int = MIN_CLUSTER_POSITIVES,
) -> dict[str, float]:
    """Held-out accuracy of per-cluster classifiers against one global classifier.

    Each cluster's balanced example set is split into train/test; the
    global classifier is fitted on the union of the training parts and
    both are scored on the union of the test parts.
    """
    rng = np.random.default_rng(seed)
    train_parts, test_parts, owners = [], [], []
    for c in range(C.k):
        members = C.members(c)
        if not members:
            continue
        data = build_training_set(members, target, table, d, seed)
        if len(data.y) < 4:
            continue
        perm = rng.permutation(len(data.y))
        cut = int(round(len(perm) * (1 - holdout)))
        train_parts.append(data.subset(np.sort(perm[:cut])))
        test_parts.append(data.subset(np.sort(perm[cut:])))
        owners.append(c)
    glob = train_link_classifier(LinkExamples.concat(train_parts))
    sizes = C.sizes()
    hits_cluster = hits_global = total = 0
    own = 0
    for c, tr, te in zip(owners, train_parts, test_parts):
        if sizes[c] >= min_agents and tr.n_positive >= min_positive * (1 - holdout) and len(np.unique(tr.y)) == 2:
            clf = train_link_classifier(tr, trained_on=c)
            own += 1
        else:
            clf = glob
        hits_cluster += int(np.sum(clf.predict(te.X) == te.y))
        hits_global += int(np.sum(glob.predict(te.X) == te.y))
        total += len(te.y)
    return {
        "per_cluster": hits_cluster / total,
        "global": hits_global / total,
        "n_test": total,
        "own_classifiers": own,
    }
