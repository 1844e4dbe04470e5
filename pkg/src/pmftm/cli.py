"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .clustering import ClusterAssignment, cluster_kmeans_modified, cluster_quality, random_partition
from .dataset import (
    Dataset,
    dataset_stats,
    filter_by_activity,
    load_dataset,
    load_dataset_dir,
    sample_agents,
    split_per_user,
    write_dataset,
)
from .errors import ContractError, DataError, NumericalError
from .indicators import build_neighborhoods, compute_indicators, read_indicators, write_indicators
from .recommend import (
    MtrConfig,
    TrustMfConfig,
    evaluate_predictions,
    mtr_recommender,
    read_predictions,
    trustmf_fit,
    trustmf_predict_rating,
    write_predictions,
)
from .similarity import Kind, pairwise_similarity
from .synthetic import SynthConfig, generate_synthetic
from .trustlink import (
    LinkTarget,
    TrustPredictionMatrix,
    assign_classifiers,
    build_training_set,
    global_training_set,
    load_classifiers,
    predict_trust_matrix,
    save_classifiers,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

_log = logging.getLogger("pmftm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _write_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, default=str)
    if path is None:
        print(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")


def _read_triples(path) -> list[tuple[str, str, float]]:
    with open(path, newline="") as fh:
        return [(r["agent_id"], r["item_id"], float(r["stars"])) for r in csv.DictReader(fh)]


def _write_triples(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent_id", "item_id", "stars"])
        w.writerows(rows)


def _save_split(d: Dataset, args) -> None:
    out = _out(args, "data")
    if args.test_fraction:
        train, test = split_per_user(d, args.test_fraction, args.seed)
        write_dataset(train, out / "train")
        _write_triples(test, out / "test.csv")
        print(f"wrote {out / 'train'} ({train.n_ratings} ratings) and {out / 'test.csv'} ({len(test)} ratings)")
    else:
        write_dataset(d, out)
        print(f"wrote {out} ({len(d.agents)} agents, {d.n_ratings} ratings)")


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> None:
    d = load_dataset(args.users, args.reviews, args.businesses)
    if args.min_reviews > 0:
        d = filter_by_activity(d, args.min_reviews, args.category)
    if args.sample_users:
        d = sample_agents(d, args.sample_users, args.seed)
    _save_split(d, args)


def cmd_stats(args) -> None:
    stats = dataset_stats(load_dataset_dir(args.data))
    _write_json({k: dataclasses.asdict(v) for k, v in stats.items()}, Path(args.out) if args.out else None)


def cmd_synth(args) -> None:
    cfg = SynthConfig(n_agents=args.agents, n_items=args.items, k_clusters=args.clusters)
    d, planted, _ = generate_synthetic(cfg, args.seed)
    _save_split(d, args)
    planted.to_csv(_out(args, "data") / "planted.csv")


def cmd_cluster(args) -> None:
    d = load_dataset_dir(args.data)
    if args.kind == "random":
        C = random_partition(d.agent_ids, args.k, args.seed)
        S = pairwise_similarity(d, Kind.SOCIAL)
    else:
        S = pairwise_similarity(d, Kind(args.kind))
        C = cluster_kmeans_modified(d.agent_ids, S, args.k, args.max_iter)
    out = _out(args, "clusters.csv")
    C.to_csv(out)
    q = cluster_quality(C, S, seed=args.seed)
    print(json.dumps({"sizes": C.sizes().tolist(), **dataclasses.asdict(q)}))


def cmd_indicators(args) -> None:
    d = load_dataset_dir(args.data)
    table = compute_indicators(d)
    write_indicators(table, _out(args, "indicators.csv"))
    print(f"{len(table)} neighborhood pairs")


def _clusters_for(args, d: Dataset) -> ClusterAssignment:
    if args.clusters:
        return ClusterAssignment.from_csv(args.clusters)
    return ClusterAssignment(d.agent_ids, np.zeros(len(d.agents), dtype=int), 1)


def cmd_train_links(args) -> None:
    d = load_dataset_dir(args.data)
    table = read_indicators(args.indicators)
    C = _clusters_for(args, d)
    target = LinkTarget(args.target)
    per_cluster = {c: build_training_set(C.members(c), target, table, d, args.seed) for c in range(C.k) if C.members(c)}
    glob = global_training_set(C, target, table, d, args.seed)
    classifiers = assign_classifiers(C, per_cluster, glob, args.min_agents, args.min_positive)
    save_classifiers(classifiers, _out(args, "classifiers.json"))
    own = sum(1 for c, clf in classifiers.items() if clf.trained_on == c)
    print(f"{own} of {C.k} clusters have their own classifier")


def cmd_predict_links(args) -> None:
    d = load_dataset_dir(args.data)
    table = read_indicators(args.indicators)
    C = _clusters_for(args, d)
    gamma = predict_trust_matrix(C, load_classifiers(args.classifiers), table, build_neighborhoods(d))
    out = _out(args, "gamma.csv")
    gamma.to_csv(out, out.with_name(out.stem + "_covered.csv"))
    print(f"{len(gamma.positives())} predicted links over {len(gamma)} covered pairs")


def cmd_recommend(args) -> None:
    train = load_dataset_dir(args.data)
    test = _read_triples(args.test)
    out = Path(args.gamma)
    gamma = TrustPredictionMatrix.from_csv(out, args.covered or out.with_name(out.stem + "_covered.csv"))
    if args.recommender == "MTR":
        rec = mtr_recommender(train, gamma, MtrConfig(kappa=args.kappa, beta=args.beta))
        preds = [rec.predict(i, j) for i, j, _ in test]
    else:
        model = trustmf_fit(train, gamma, TrustMfConfig(lam_t=args.lambda_t, epochs=args.epochs), args.seed)
        preds = [trustmf_predict_rating(model, i, j) for i, j, _ in test]
    write_predictions([(i, j, p, r) for (i, j, r), p in zip(test, preds)], _out(args, "predictions.csv"))


def cmd_evaluate(args) -> None:
    preds, actual = read_predictions(args.predictions)
    _write_json(evaluate_predictions(preds, actual).to_dict(), None)


def _spec_from(args, name: str, recommender: str) -> pipeline.ExperimentSpec:
    return pipeline.ExperimentSpec(
        name=name,
        k=args.k,
        recommender=recommender,
        seeds=tuple(args.seeds) if args.seeds else (args.seed, args.seed + 1, args.seed + 2),
        mtr=MtrConfig(kappa=args.kappa, beta=args.beta),
        trustmf=TrustMfConfig(lam_t=args.lambda_t, epochs=args.epochs),
        evaluation=args.evaluation,
        folds=args.folds,
        min_agents=args.min_agents,
        min_positive=args.min_positive,
    )


def _specs(args) -> list[pipeline.ExperimentSpec]:
    names = args.names or list(pipeline.TABLE_EXPERIMENTS)
    return [_spec_from(args, n, r) for r in args.recommenders for n in names]


def cmd_experiment(args) -> None:
    d = load_dataset_dir(args.data)
    report = pipeline.run_experiments(_specs(args), d, args.cache_dir, args.workers)
    paths = pipeline.emit_report(report, _out(args, "report"))
    print(report.table().to_string(index=False))
    print("wrote " + ", ".join(map(str, paths)))


def cmd_sweep(args) -> None:
    d = load_dataset_dir(args.data)
    values = [float(v) if args.param in ("beta", "lambda_t") else int(v) for v in args.values.split(",") if v]
    series = pipeline.sweep_parameter(_specs(args), args.param, values, d, args.cache_dir, args.workers)
    paths = pipeline.emit_sweep(series, args.param, _out(args, "sweep"))
    print(pipeline.sweep_table(series, args.param).to_string(index=False))
    print("wrote " + ", ".join(map(str, paths)))


# ---------------------------------------------------------------- parser


def _add_model_flags(p):
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--names", nargs="+", choices=sorted(pipeline.EXPERIMENTS), metavar="NAME")
    p.add_argument("--recommenders", nargs="+", choices=pipeline.RECOMMENDERS, default=["MTR"])
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--kappa", type=int, default=50)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--lambda-t", dest="lambda_t", type=float, default=0.11)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--evaluation", choices=("split", "cv"), default="split")
    p.add_argument("--folds", type=int, default=5)
    _add_threshold_flags(p)


def _add_threshold_flags(p):
    p.add_argument("--min-agents", dest="min_agents", type=int, default=100)
    p.add_argument("--min-positive", dest="min_positive", type=int, default=1000)


def build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    def common_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags; suppressed defaults keep a value
        # given before the subcommand from being overwritten
        def dflt(value):
            return argparse.SUPPRESS if suppress else value

        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", default=dflt(None), help="JSON file of option defaults")
        p.add_argument("--seed", type=int, default=dflt(0))
        p.add_argument("--workers", type=int, default=dflt(1))
        p.add_argument("--cache-dir", dest="cache_dir", default=dflt(None))
        p.add_argument("--out", default=dflt(None))
        p.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
        return p

    common = common_flags(suppress=True)
    parser = _Parser(prog="pmftm", description="Personalized trust modeling experiments.", parents=[common_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = []

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        subs.append(p)
        return p

    p = add("ingest", cmd_ingest, "read raw JSON-lines files, filter and store a dataset")
    p.add_argument("--users", required=True)
    p.add_argument("--reviews", required=True)
    p.add_argument("--businesses", required=True)
    p.add_argument("--min-reviews", dest="min_reviews", type=int, default=20)
    p.add_argument("--category", default="Restaurants")
    p.add_argument("--sample-users", dest="sample_users", type=int, default=0,
                   help="keep only this many randomly chosen users (0 keeps all)")
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.0)

    p = add("stats", cmd_stats, "summary statistics of a dataset directory")
    p.add_argument("--data", required=True)

    p = add("synth", cmd_synth, "generate a synthetic dataset with planted clusters")
    p.add_argument("--agents", type=int, default=SynthConfig.n_agents)
    p.add_argument("--items", type=int, default=SynthConfig.n_items)
    p.add_argument("--clusters", type=int, default=SynthConfig.k_clusters)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.0)

    p = add("cluster", cmd_cluster, "cluster agents by preference or social similarity")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("preference", "social", "random"), default="social")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=20)

    p = add("indicators", cmd_indicators, "compute trust indicators for all neighborhood pairs")
    p.add_argument("--data", required=True)

    p = add("train-links", cmd_train_links, "fit per-cluster trust-link classifiers")
    p.add_argument("--data", required=True)
    p.add_argument("--indicators", required=True)
    p.add_argument("--clusters")
    p.add_argument("--target", choices=[t.value for t in LinkTarget], default=LinkTarget.FRIENDSHIP.value)
    _add_threshold_flags(p)

    p = add("predict-links", cmd_predict_links, "predict the trust matrix with fitted classifiers")
    p.add_argument("--data", required=True)
    p.add_argument("--indicators", required=True)
    p.add_argument("--classifiers", required=True)
    p.add_argument("--clusters")

    p = add("recommend", cmd_recommend, "predict test ratings with MTR or TrustMF")
    p.add_argument("--data", required=True)
    p.add_argument("--test", required=True, help="CSV with agent_id,item_id,stars")
    p.add_argument("--gamma", required=True)
    p.add_argument("--covered")
    p.add_argument("--recommender", choices=pipeline.RECOMMENDERS, default="MTR")
    p.add_argument("--kappa", type=int, default=50)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--lambda-t", dest="lambda_t", type=float, default=0.11)
    p.add_argument("--epochs", type=int, default=200)

    p = add("evaluate", cmd_evaluate, "MAE and RMSE of a predictions CSV")
    p.add_argument("--predictions", required=True)

    p = add("experiment", cmd_experiment, "run named experiments end to end")
    p.add_argument("--data", required=True)
    _add_model_flags(p)

    p = add("sweep", cmd_sweep, "run experiments over a range of one parameter")
    p.add_argument("--data", required=True)
    p.add_argument("--param", choices=pipeline.SWEEP_PARAMS, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    _add_model_flags(p)
    return parser, subs


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        cfg = json.loads(Path(known.config).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"config file not found: {known.config}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object of option names to values")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = _load_config(argv)
        parser, subs = build_parser()
        if cfg:
            for p in [parser, *subs]:
                p.set_defaults(**cfg)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
