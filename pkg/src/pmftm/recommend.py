"""Trust-aware rating prediction: MTR (trust-blended k-NN) and a TrustMF-style factorization."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .dataset import Dataset
from .errors import ContractError, DataError, NumericalError
from .similarity import Kind, SimilarityMatrix, pairwise_similarity, pref_sim
from .trustlink import TrustPredictionMatrix

_log = logging.getLogger(__name__)

MIN_STARS, MAX_STARS = 1.0, 5.0


def _clamp(x: float) -> float:
    return min(MAX_STARS, max(MIN_STARS, x))


# ---------------------------------------------------------------- MTR


@dataclass(frozen=True)
class MtrConfig:
    kappa: int = 50
    beta: float = 0.3
    # "rater": deviations from each rater's own mean; "item": from the item mean
    mean_mode: str = "rater"

    def __post_init__(self):
        if self.kappa < 1:
            raise ContractError("kappa must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError("beta must lie in [0, 1]")
        if self.mean_mode not in ("rater", "item"):
            raise ContractError("mean_mode must be 'rater' or 'item'")


def positive_correlation(s: float) -> float:
    """Rating-similarity term of the influence: positive part of the correlation."""
    return max(0.0, s - 1.0)


class MtrRecommender:
    """k-NN predictor where each rater's weight blends rating similarity and predicted trust.

    ``similarity`` supplies preference similarities; when omitted they are
    computed per pair on demand from ``train``.
    """

    def __init__(
        self,
        train: Dataset,
        gamma: TrustPredictionMatrix,
        cfg: MtrConfig = MtrConfig(),
        similarity: SimilarityMatrix | Callable[[str, str], float] | None = None,
    ):
        self.train = train
        self.gamma = gamma
        self.cfg = cfg
        if similarity is None:
            cache: dict[tuple[str, str], float] = {}

            def lookup(i, k):
                key = (i, k) if i < k else (k, i)
                if key not in cache:
                    cache[key] = pref_sim(i, k, train)
                return cache[key]

            similarity = lookup
        self._sim = similarity.get if isinstance(similarity, SimilarityMatrix) else similarity

    def influence(self, i: str, k: str) -> float:
        b = self.cfg.beta
        sigma = positive_correlation(self._sim(i, k)) if b else 0.0
        trust = self.gamma.value(i, k) if b < 1 else 0.0
        return b * sigma + (1 - b) * trust

    def neighbors(self, i: str, j: str) -> list[tuple[str, float]]:
        """Top-kappa raters of ``j`` by absolute influence on ``i`` (ties by agent id)."""
        raters = self.train.item_raters.get(j, {})
        scored = [(k, self.influence(i, k)) for k in sorted(raters) if k != i]
        scored.sort(key=lambda kv: -abs(kv[1]))
        return scored[: self.cfg.kappa]

    def predict_detail(self, i: str, j: str) -> tuple[float, str | None, int]:
        """Prediction, fallback flag and number of neighbors with non-zero weight."""
        train = self.train
        base = train.agent_means.get(i)
        if base is None:
            base = train.global_mean
        if j not in train.item_raters:
            return _clamp(train.global_mean), "unknown_item", 0
        num = den = 0.0
        used = 0
        for k, w in self.neighbors(i, j):
            if w == 0.0:
                continue
            ref = train.agent_means[k] if self.cfg.mean_mode == "rater" else train.item_means[j]
            num += w * (train.item_raters[j][k] - ref)
            den += abs(w)
            used += 1
        if den == 0.0:
            return _clamp(base), "no_neighbors", 0
        return _clamp(base + num / den), None, used

    def predict_with_flag(self, i: str, j: str) -> tuple[float, str | None]:
        value, flag, _ = self.predict_detail(i, j)
        return value, flag

    def predict(self, i: str, j: str) -> float:
        return self.predict_with_flag(i, j)[0]

    def predict_many(self, pairs: Iterable[tuple[str, str]]) -> list[tuple[str, str, float]]:
        return [(i, j, self.predict(i, j)) for i, j in pairs]


def mtr_predict_rating(
    i: str,
    j: str,
    train: Dataset,
    gamma: TrustPredictionMatrix,
    cfg: MtrConfig = MtrConfig(),
    similarity: SimilarityMatrix | None = None,
) -> float:
    return MtrRecommender(train, gamma, cfg, similarity).predict(i, j)


def mtr_recommender(train: Dataset, gamma: TrustPredictionMatrix, cfg: MtrConfig = MtrConfig()) -> MtrRecommender:
    """MTR with the preference matrix precomputed in one sparse batch."""
    return MtrRecommender(train, gamma, cfg, pairwise_similarity(train, Kind.PREFERENCE))


# ---------------------------------------------------------------- TrustMF


@dataclass(frozen=True)
class TrustMfConfig:
    d: int = 10
    lam: float = 0.01
    lam_t: float = 0.11
    lr: float = 0.01
    epochs: int = 200
    init_scale: float = 0.01
    batch_size: int = 64

    def __post_init__(self):
        if self.d < 1:
            raise ContractError("d must be >= 1")


@dataclass
class TrustMfModel:
    truster_factors: np.ndarray
    trustee_factors: np.ndarray
    item_factors: np.ndarray
    agent_index: dict[str, int]
    item_index: dict[str, int]
    global_mean: float
    cfg: TrustMfConfig = field(default_factory=TrustMfConfig)
    loss_history: list[float] = field(default_factory=list)

    @property
    def user_factors(self) -> np.ndarray:
        # ratings are reconstructed from the truster factors, so they double as user factors
        return self.truster_factors

    @property
    def d(self) -> int:
        return self.truster_factors.shape[1]

    def to_dict(self) -> dict:
        return {
            "truster_factors": self.truster_factors.tolist(),
            "trustee_factors": self.trustee_factors.tolist(),
            "item_factors": self.item_factors.tolist(),
            "agents": list(self.agent_index),
            "items": list(self.item_index),
            "global_mean": self.global_mean,
            "config": self.cfg.__dict__,
            "loss_history": self.loss_history,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> TrustMfModel:
        return cls(
            truster_factors=np.asarray(data["truster_factors"], dtype=float),
            trustee_factors=np.asarray(data["trustee_factors"], dtype=float),
            item_factors=np.asarray(data["item_factors"], dtype=float),
            agent_index={a: n for n, a in enumerate(data["agents"])},
            item_index={t: n for n, t in enumerate(data["items"])},
            global_mean=float(data["global_mean"]),
            cfg=TrustMfConfig(**data["config"]),
            loss_history=list(data.get("loss_history", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> TrustMfModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FactorData:
    """Index arrays for the rating and trust observations of one fit."""

    r_user: np.ndarray
    r_item: np.ndarray
    r_val: np.ndarray
    t_src: np.ndarray
    t_dst: np.ndarray
    t_val: np.ndarray


def trustmf_loss(B, W, V, data: FactorData, lam: float, lam_t: float) -> float:
    er = data.r_val - np.einsum("nd,nd->n", B[data.r_user], V[data.r_item])
    et = data.t_val - np.einsum("nd,nd->n", B[data.t_src], W[data.t_dst])
    reg = np.sum(B * B) + np.sum(W * W) + np.sum(V * V)
    return float(er @ er + lam_t * (et @ et) + lam * reg)


def trustmf_gradient(B, W, V, data: FactorData, lam: float, lam_t: float):
    """Analytic gradient of :func:`trustmf_loss` with respect to (B, W, V)."""
    er = data.r_val - np.einsum("nd,nd->n", B[data.r_user], V[data.r_item])
    et = data.t_val - np.einsum("nd,nd->n", B[data.t_src], W[data.t_dst])
    gB = 2 * lam * B
    gW = 2 * lam * W
    gV = 2 * lam * V
    np.add.at(gB, data.r_user, -2 * er[:, None] * V[data.r_item])
    np.add.at(gV, data.r_item, -2 * er[:, None] * B[data.r_user])
    np.add.at(gB, data.t_src, -2 * lam_t * et[:, None] * W[data.t_dst])
    np.add.at(gW, data.t_dst, -2 * lam_t * et[:, None] * B[data.t_src])
    return gB, gW, gV


def _factor_data(train: Dataset, gamma: TrustPredictionMatrix, agent_index, item_index) -> FactorData:
    ru, ri, rv = [], [], []
    for a, t, s in train.triples():
        ru.append(agent_index[a])
        ri.append(item_index[t])
        rv.append(s)
    ts, td, tv = [], [], []
    for (i, k), v in gamma.entries.items():
        if i in agent_index and k in agent_index:
            ts.append(agent_index[i])
            td.append(agent_index[k])
            tv.append(float(v))
    return FactorData(
        np.array(ru, dtype=int), np.array(ri, dtype=int), np.array(rv, dtype=float),
        np.array(ts, dtype=int), np.array(td, dtype=int), np.array(tv, dtype=float),
    )


def trustmf_fit(
    train: Dataset,
    gamma: TrustPredictionMatrix,
    cfg: TrustMfConfig = TrustMfConfig(),
    seed: int = 0,
    epochs: int | None = None,
) -> TrustMfModel:
    """Jointly factorize ratings (truster x item) and trust (truster x trustee) by mini-batch SGD.

    Each observation carries its share of the L2 penalty on the rows it
    touches, so one epoch of steps sums to one full-gradient step's worth
    of regularisation.
    """
    if train.n_ratings == 0:
        raise DataError("cannot fit on an empty training set")
    epochs = cfg.epochs if epochs is None else epochs
    agent_index = dict(train.agent_index)
    item_index = {t: n for n, t in enumerate(sorted(train.item_raters))}
    # without a trust weight the trust observations would only perturb the
    # batch order and the penalty shares, so they are dropped altogether
    data = _factor_data(train, gamma if cfg.lam_t else TrustPredictionMatrix(), agent_index, item_index)
    rng = np.random.default_rng(seed)
    n_a, n_i, d = len(agent_index), len(item_index), cfg.d
    B = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_a, d))
    W = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_a, d))
    V = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_i, d))

    nb = np.bincount(data.r_user, minlength=n_a) + np.bincount(data.t_src, minlength=n_a)
    nv = np.bincount(data.r_item, minlength=n_i)
    nw = np.bincount(data.t_dst, minlength=n_a)
    share_b = 1.0 / np.maximum(nb, 1)
    share_v = 1.0 / np.maximum(nv, 1)
    share_w = 1.0 / np.maximum(nw, 1)

    n_r, n_t = len(data.r_val), len(data.t_val)
    lam, lam_t, lr = cfg.lam, cfg.lam_t, cfg.lr
    history = []
    for _ in range(epochs):
        order = rng.permutation(n_r + n_t)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            rb = batch[batch < n_r]
            tb = batch[batch >= n_r] - n_r
            gB = np.zeros_like(B)
            gW = np.zeros_like(W)
            gV = np.zeros_like(V)
            if len(rb):
                u, it, r = data.r_user[rb], data.r_item[rb], data.r_val[rb]
                bu, vi = B[u], V[it]
                e = r - np.einsum("nd,nd->n", bu, vi)
                np.add.at(gB, u, -2 * e[:, None] * vi + 2 * lam * bu * share_b[u, None])
                np.add.at(gV, it, -2 * e[:, None] * bu + 2 * lam * vi * share_v[it, None])
            if len(tb):
                s, t, g = data.t_src[tb], data.t_dst[tb], data.t_val[tb]
                bs, wt = B[s], W[t]
                e = g - np.einsum("nd,nd->n", bs, wt)
                np.add.at(gB, s, -2 * lam_t * e[:, None] * wt + 2 * lam * bs * share_b[s, None])
                np.add.at(gW, t, -2 * lam_t * e[:, None] * bs + 2 * lam * wt * share_w[t, None])
            B -= lr * gB
            W -= lr * gW
            V -= lr * gV
        with np.errstate(over="ignore", invalid="ignore"):
            loss = trustmf_loss(B, W, V, data, lam, lam_t)
        if not math.isfinite(loss):
            raise NumericalError("TrustMF training diverged (non-finite loss)")
        history.append(loss)
    return TrustMfModel(B, W, V, agent_index, item_index, train.global_mean, cfg, history)


def trustmf_predict_rating(m: TrustMfModel, i: str, j: str) -> float:
    a = m.agent_index.get(i)
    t = m.item_index.get(j)
    if a is None or t is None:
        return _clamp(m.global_mean)
    return _clamp(float(m.truster_factors[a] @ m.item_factors[t]))


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalResult:
    mae: float
    rmse: float
    n: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "n": self.n}


def evaluate_predictions(
    preds: Iterable[tuple[str, str, float]] | Mapping[tuple[str, str], float],
    test: Iterable[tuple[str, str, float]],
) -> EvalResult:
    if isinstance(preds, Mapping):
        lookup = dict(preds)
    else:
        lookup = {(i, j): r for i, j, r in preds}
    err = []
    for i, j, r in test:
        if (i, j) not in lookup:
            raise ContractError(f"no prediction for test pair ({i!r}, {j!r})")
        err.append(lookup[(i, j)] - r)
    if not err:
        raise ContractError("empty test set")
    e = np.asarray(err, dtype=float)
    mae = float(np.mean(np.abs(e)))
    rmse = float(math.sqrt(np.mean(e * e)))
    return EvalResult(mae, rmse, len(e))


def write_predictions(rows: Iterable[tuple[str, str, float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id", "item_id", "predicted", "actual"])
        for a, t, p, r in rows:
            w.writerow([a, t, repr(float(p)), repr(float(r))])


def read_predictions(path: str | Path) -> tuple[list[tuple[str, str, float]], list[tuple[str, str, float]]]:
    preds, test = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            preds.append((row["agent_id"], row["item_id"], float(row["predicted"])))
            test.append((row["agent_id"], row["item_id"], float(row["actual"])))
    return preds, test
