"""End-to-end experiments: clustering, trust-link prediction and rating evaluation.

Every stage that reads ratings is built from the training part of a
split only, so test ratings can never influence clusters, classifiers or
the predicted trust matrix.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
from joblib import Memory, Parallel, delayed

from .clustering import (
    ClusterAssignment,
    cluster_kmeans_modified,
    cluster_quality,
    random_partition,
)
from .dataset import Dataset, make_cv_folds, split_per_user
from .errors import ContractError
from .indicators import build_neighborhoods, compute_indicators
from .recommend import (
    EvalResult,
    MtrConfig,
    TrustMfConfig,
    evaluate_predictions,
    mtr_recommender,
    trustmf_fit,
    trustmf_predict_rating,
)
from .similarity import Kind, pairwise_similarity
from .trustlink import (
    MIN_CLUSTER_AGENTS,
    MIN_CLUSTER_POSITIVES,
    LinkTarget,
    TrustPredictionMatrix,
    friendship_trust_matrix,
    predict_trust_matrix,
    train_personalized,
)

_log = logging.getLogger(__name__)

# name -> (clustering, predicted link type); None means the stage is skipped
EXPERIMENTS: dict[str, tuple[str | None, LinkTarget | None]] = {
    "RealFriends": (None, None),
    "FriendPrediction": (None, LinkTarget.FRIENDSHIP),
    "PrefPredict": (None, LinkTarget.POSITIVE_CORRELATION),
    "PrefCluster-PrefPredict": ("pref", LinkTarget.POSITIVE_CORRELATION),
    "PrefCluster-FriendPredict": ("pref", LinkTarget.FRIENDSHIP),
    "SocialCluster-PrefPredict": ("social", LinkTarget.POSITIVE_CORRELATION),
    "SocialCluster-FriendPredict": ("social", LinkTarget.FRIENDSHIP),
    "RandomCluster-FriendPredict": ("random", LinkTarget.FRIENDSHIP),
}
# the seven experiments of the standard comparison (the random control is extra)
TABLE_EXPERIMENTS = tuple(name for name in EXPERIMENTS if not name.startswith("Random"))
RECOMMENDERS = ("MTR", "TrustMF")
SWEEP_PARAMS = ("k", "beta", "lambda_t", "kappa")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    k: int = 1
    recommender: str = "MTR"
    seeds: tuple[int, ...] = (0, 1, 2)
    mtr: MtrConfig = MtrConfig()
    trustmf: TrustMfConfig = TrustMfConfig()
    evaluation: str = "split"  # "split" or "cv"
    test_fraction: float = 0.2
    folds: int = 5
    kmeans_iter: int = 20
    min_agents: int = MIN_CLUSTER_AGENTS
    min_positive: int = MIN_CLUSTER_POSITIVES
    global_sample_size: int | None = None

    @property
    def clustering(self) -> str | None:
        return EXPERIMENTS[self.name][0]

    @property
    def target(self) -> LinkTarget | None:
        return EXPERIMENTS[self.name][1]

    def validate(self) -> None:
        if self.name not in EXPERIMENTS:
            raise ContractError(f"unknown experiment {self.name!r}; expected one of {sorted(EXPERIMENTS)}")
        if self.recommender not in RECOMMENDERS:
            raise ContractError(f"recommender must be one of {RECOMMENDERS}")
        if self.clustering is not None and self.k < 1:
            raise ContractError("clustered experiments need k >= 1")
        if not self.seeds:
            raise ContractError("need at least one seed")
        if self.evaluation not in ("split", "cv"):
            raise ContractError("evaluation must be 'split' or 'cv'")
        if self.evaluation == "cv" and self.folds < 2:
            raise ContractError("cv needs at least 2 folds")
        if self.evaluation == "split" and not 0.0 < self.test_fraction < 1.0:
            raise ContractError("test_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentSpec:
        data = dict(data)
        if "mtr" in data and isinstance(data["mtr"], dict):
            data["mtr"] = MtrConfig(**data["mtr"])
        if "trustmf" in data and isinstance(data["trustmf"], dict):
            data["trustmf"] = TrustMfConfig(**data["trustmf"])
        if "seeds" in data:
            data["seeds"] = tuple(int(s) for s in data["seeds"])
        return cls(**data)


@dataclass
class ExperimentResult:
    name: str
    recommender: str
    k: int
    mae: float
    rmse: float
    n: int
    runs: list[dict] = field(default_factory=list)
    cluster_quality: dict | None = None
    runtime_s: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def result(self) -> EvalResult:
        return EvalResult(self.mae, self.rmse, self.n)


@dataclass
class Report:
    experiments: list[ExperimentResult]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.experiments:
            raise ContractError("a report needs at least one experiment")

    def get(self, name: str, recommender: str = "MTR") -> ExperimentResult:
        for e in self.experiments:
            if e.name == name and e.recommender == recommender:
                return e
        raise KeyError((name, recommender))

    def to_dict(self) -> dict:
        return {"experiments": [dataclasses.asdict(e) for e in self.experiments], "meta": self.meta}

    @classmethod
    def from_dict(cls, data: dict) -> Report:
        return cls([ExperimentResult(**e) for e in data["experiments"]], dict(data.get("meta", {})))

    def table(self) -> pd.DataFrame:
        """One row per experiment, MAE and RMSE columns per recommender."""
        rows = [
            {"experiment": e.name, "recommender": e.recommender, "MAE": e.mae, "RMSE": e.rmse}
            for e in self.experiments
        ]
        df = pd.DataFrame(rows).pivot_table(
            index="experiment", columns="recommender", values=["MAE", "RMSE"], sort=False
        )
        df.columns = [f"{rec}_{metric}" for metric, rec in df.columns]
        order = [f"{r}_{m}" for r in RECOMMENDERS for m in ("MAE", "RMSE") if f"{r}_{m}" in df.columns]
        return df[order].reset_index()


# ---------------------------------------------------------------- caching


def dataset_fingerprint(d: Dataset) -> str:
    """Content hash over ratings, friendships and profile counts."""
    h = hashlib.sha256()
    for i, t, r in sorted(d.triples()):
        h.update(f"{i}\t{t}\t{r!r}\n".encode())
    for a in d.agent_ids:
        ag = d.agents[a]
        h.update(
            f"{a}|{','.join(sorted(ag.friends))}|{ag.elite_years}|{ag.profile_compliments}|{ag.fans}|"
            f"{ag.content_compliments}|{ag.contributions}|{ag.account_age_years!r}\n".encode()
        )
    for t in d.item_ids:
        h.update(f"{t}|{','.join(sorted(d.items[t].categories))}\n".encode())
    return h.hexdigest()


class StageCache:
    """Disk cache for the expensive per-train-set stages, keyed by content hash.

    Datasets are passed through untouched; only their fingerprint enters
    the cache key.  With ``cache_dir=None`` everything is recomputed.
    """

    def __init__(self, cache_dir: str | Path | None = None):
        self.memory = Memory(str(cache_dir) if cache_dir else None, verbose=0)
        self._indicators = self.memory.cache(_indicators_stage, ignore=["d"])
        self._similarity = self.memory.cache(_similarity_stage, ignore=["d"])
        self._gamma = self.memory.cache(_gamma_stage, ignore=["d", "table", "N"])

    def indicators(self, d: Dataset, key: str):
        return self._indicators(d, key)

    def similarity(self, d: Dataset, key: str, kind: Kind):
        return self._similarity(d, key, kind)

    def gamma(self, d, key, C, target, table, N, seed, min_agents, min_positive, global_sample_size):
        return self._gamma(
            d, key, C.agents, C.labels.tolist(), C.k, target, table, N, seed,
            min_agents, min_positive, global_sample_size,
        )


def _indicators_stage(d: Dataset, key: str):
    N = build_neighborhoods(d)
    return N, compute_indicators(d)


def _similarity_stage(d: Dataset, key: str, kind: Kind):
    return pairwise_similarity(d, kind)


def _gamma_stage(d, key, agents, labels, k, target, table, N, seed, min_agents, min_positive, global_sample_size):
    C = ClusterAssignment(list(agents), np.asarray(labels), k)
    classifiers = train_personalized(
        C, target, table, d, seed, min_agents, min_positive, global_sample_size, N
    )
    own = sorted({c for c, clf in classifiers.items() if clf.trained_on == c})
    return predict_trust_matrix(C, classifiers, table, N), own


# ---------------------------------------------------------------- running


def _splits(spec: ExperimentSpec, d: Dataset):
    for seed in spec.seeds:
        if spec.evaluation == "split":
            train, test = split_per_user(d, spec.test_fraction, seed)
            yield seed, 0, train, test
        else:
            for fold in make_cv_folds(d, spec.folds, seed):
                yield seed, fold.fold_index, fold.train, fold.test


def build_gamma(
    spec: ExperimentSpec,
    train: Dataset,
    seed: int,
    cache: StageCache | None = None,
    timings: dict | None = None,
) -> tuple[TrustPredictionMatrix, ClusterAssignment | None, dict | None]:
    """Predicted (or explicit) trust matrix for one training set, plus the clustering used."""
    cache = cache or StageCache()
    timings = timings if timings is not None else {}
    key = dataset_fingerprint(train)
    t0 = time.perf_counter()
    N, table = cache.indicators(train, key)
    timings["indicators"] = timings.get("indicators", 0.0) + time.perf_counter() - t0
    if spec.target is None:
        return friendship_trust_matrix(train, N), None, None

    t0 = time.perf_counter()
    agents = train.agent_ids
    quality = None
    if spec.clustering is None:
        C = ClusterAssignment(agents, np.zeros(len(agents), dtype=int), 1)
    elif spec.clustering == "random":
        C = random_partition(agents, spec.k, seed)
        S = cache.similarity(train, key, Kind.SOCIAL)
        quality = dataclasses.asdict(cluster_quality(C, S, seed=seed))
    else:
        kind = Kind.PREFERENCE if spec.clustering == "pref" else Kind.SOCIAL
        S = cache.similarity(train, key, kind)
        C = cluster_kmeans_modified(agents, S, spec.k, spec.kmeans_iter)
        quality = dataclasses.asdict(cluster_quality(C, S, seed=seed))
    timings["clustering"] = timings.get("clustering", 0.0) + time.perf_counter() - t0

    t0 = time.perf_counter()
    gamma, own = cache.gamma(
        train, key, C, spec.target, table, N, seed,
        spec.min_agents, spec.min_positive, spec.global_sample_size,
    )
    timings["links"] = timings.get("links", 0.0) + time.perf_counter() - t0
    if quality is not None:
        quality["own_classifiers"] = len(own)
    return gamma, C, quality


def _recommend(spec: ExperimentSpec, train: Dataset, gamma, test, seed: int) -> tuple[EvalResult, dict]:
    pairs = [(i, j) for i, j, _ in test]
    extra: dict[str, Any] = {}
    if spec.recommender == "MTR":
        rec = mtr_recommender(train, gamma, spec.mtr)
        preds, used = [], []
        for i, j in pairs:
            value, _, n_used = rec.predict_detail(i, j)
            preds.append((i, j, value))
            used.append(n_used)
        extra["mean_neighbors"] = float(np.mean(used)) if used else 0.0
    else:
        model = trustmf_fit(train, gamma, spec.trustmf, seed)
        preds = [(i, j, trustmf_predict_rating(model, i, j)) for i, j in pairs]
        extra["final_loss"] = model.loss_history[-1] if model.loss_history else None
    return evaluate_predictions(preds, test), extra


def _mean_dicts(dicts: Sequence[dict | None]) -> dict | None:
    dicts = [x for x in dicts if x]
    if not dicts:
        return None
    return {key: float(np.mean([x[key] for x in dicts])) for key in dicts[0]}


def run_experiment(spec: ExperimentSpec, d: Dataset, cache: StageCache | None = None) -> Report:
    """Run one experiment over all its seeds (and folds) and average the errors."""
    spec.validate()
    if spec.clustering is not None and spec.k > len(d.agents):
        raise ContractError(f"k={spec.k} exceeds the number of agents ({len(d.agents)})")
    cache = cache or StageCache()
    start = time.perf_counter()
    timings: dict[str, float] = {}
    runs, qualities = [], []
    for seed, fold, train, test in _splits(spec, d):
        gamma, _, quality = build_gamma(spec, train, seed, cache, timings)
        t0 = time.perf_counter()
        res, extra = _recommend(spec, train, gamma, test, seed)
        timings["recommend"] = timings.get("recommend", 0.0) + time.perf_counter() - t0
        runs.append({"seed": seed, "fold": fold, "mae": res.mae, "rmse": res.rmse, "n": res.n,
                     "trust_links": len(gamma.positives()), **extra})
        qualities.append(quality)
        _log.info("%s/%s seed=%d fold=%d MAE=%.4f", spec.name, spec.recommender, seed, fold, res.mae)
    timings["total"] = time.perf_counter() - start
    result = ExperimentResult(
        name=spec.name,
        recommender=spec.recommender,
        k=spec.k if spec.clustering is not None else 1,
        mae=float(np.mean([r["mae"] for r in runs])),
        rmse=float(np.mean([r["rmse"] for r in runs])),
        n=int(sum(r["n"] for r in runs)),
        runs=runs,
        cluster_quality=_mean_dicts(qualities),
        runtime_s=timings,
        config=spec.to_dict(),
    )
    return Report([result], {"dataset": d.provenance.get("source", "in-memory")})


def run_experiments(
    specs: Iterable[ExperimentSpec],
    d: Dataset,
    cache_dir: str | Path | None = None,
    workers: int = 1,
) -> Report:
    specs = list(specs)
    if not specs:
        raise ContractError("no experiments requested")
    for s in specs:
        s.validate()
    reports = Parallel(n_jobs=workers)(
        delayed(run_experiment)(s, d, StageCache(cache_dir)) for s in specs
    )
    return Report([e for r in reports for e in r.experiments], reports[0].meta)


def table_specs(
    k: int = 10,
    recommenders: Sequence[str] = RECOMMENDERS,
    **kw,
) -> list[ExperimentSpec]:
    """Specs for the seven-experiment comparison, one per (experiment, recommender)."""
    return [ExperimentSpec(name, k=k, recommender=r, **kw) for r in recommenders for name in TABLE_EXPERIMENTS]


def _with_param(spec: ExperimentSpec, param: str, value) -> ExperimentSpec:
    if param == "k":
        return dataclasses.replace(spec, k=int(value))
    if param == "beta":
        return dataclasses.replace(spec, mtr=dataclasses.replace(spec.mtr, beta=float(value)))
    if param == "kappa":
        return dataclasses.replace(spec, mtr=dataclasses.replace(spec.mtr, kappa=int(value)))
    return dataclasses.replace(spec, trustmf=dataclasses.replace(spec.trustmf, lam_t=float(value)))


def sweep_parameter(
    base: ExperimentSpec | Sequence[ExperimentSpec],
    param: str,
    values: Sequence,
    d: Dataset,
    cache_dir: str | Path | None = None,
    workers: int = 1,
) -> list[Report]:
    """One report per parameter value, all runs sharing the base seeds."""
    bases = [base] if isinstance(base, ExperimentSpec) else list(base)
    values = list(values)
    if not values:
        raise ContractError("sweep needs at least one value")
    if param not in SWEEP_PARAMS:
        raise ContractError(f"param must be one of {SWEEP_PARAMS}")
    for b in bases:
        b.validate()
        if param in ("beta", "kappa") and b.recommender != "MTR":
            raise ContractError(f"{param} only applies to MTR experiments")
        if param == "lambda_t" and b.recommender != "TrustMF":
            raise ContractError("lambda_t only applies to TrustMF experiments")
    jobs = [(v, _with_param(b, param, v)) for v in values for b in bases]
    reports = Parallel(n_jobs=workers)(delayed(run_experiment)(s, d, StageCache(cache_dir)) for _, s in jobs)
    out = []
    for n, v in enumerate(values):
        chunk = reports[n * len(bases) : (n + 1) * len(bases)]
        out.append(Report([e for r in chunk for e in r.experiments], {"param": param, "value": v}))
    return out


def sweep_table(series: Sequence[Report], param: str) -> pd.DataFrame:
    rows = []
    for rep in series:
        for e in rep.experiments:
            rows.append({param: rep.meta.get("value"), "experiment": e.name, "recommender": e.recommender,
                         "MAE": e.mae, "RMSE": e.rmse})
    return pd.DataFrame(rows)


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".csv") else p
    return stem.with_suffix(".json"), stem.with_suffix(".csv")


def emit_report(r: Report, path: str | Path) -> tuple[Path, Path]:
    """Write the full report as JSON and the MAE/RMSE table as CSV next to it."""
    if not r.experiments:
        raise ContractError("refusing to write an empty report")
    json_path, csv_path = _paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(r.to_dict(), indent=2, default=_jsonable))
    r.table().to_csv(csv_path, index=False)
    return json_path, csv_path


def emit_sweep(series: Sequence[Report], param: str, path: str | Path) -> tuple[Path, Path]:
    if not series:
        raise ContractError("refusing to write an empty sweep")
    json_path, csv_path = _paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps([rep.to_dict() for rep in series], indent=2, default=_jsonable))
    sweep_table(series, param).to_csv(csv_path, index=False)
    return json_path, csv_path


def load_report(path: str | Path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, LinkTarget):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")
