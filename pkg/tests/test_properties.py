"""Randomised invariants over small generated networks."""

import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from pmftm.clustering import ClusterAssignment, cluster_kmeans_modified, silhouette_samples
from pmftm.indicators import compute_indicators
from pmftm.recommend import MtrConfig, evaluate_predictions, mtr_recommender
from pmftm.similarity import Kind, pairwise_similarity, pref_sim, sim_to_distance, social_sim
from pmftm.trustlink import LinkTarget, TrustPredictionMatrix, build_training_set

AGENTS = [f"a{n}" for n in range(6)]
ITEMS = [f"t{n}" for n in range(6)]
STARS = st.sampled_from([1.0, 2.0, 3.0, 4.0, 5.0])

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def networks(draw):
    ratings = {}
    for a in AGENTS:
        rated = draw(st.lists(st.sampled_from(ITEMS), min_size=1, max_size=len(ITEMS), unique=True))
        ratings[a] = {t: draw(STARS) for t in rated}
    pairs = list(itertools.combinations(AGENTS, 2))
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=8))
    friends = {}
    for a, b in edges:
        friends.setdefault(a, []).append(b)
    return make_dataset(ratings, friends)


@FAST
@given(networks(), st.sampled_from(list(itertools.permutations(AGENTS, 2))))
def test_similarities_symmetric_and_bounded(d, pair):
    i, j = pair
    p, s = pref_sim(i, j, d), social_sim(i, j, d)
    assert p == pref_sim(j, i, d) and s == social_sim(j, i, d)
    assert 0.0 <= p <= 2.0 and 0.0 <= s <= 1.0


@FAST
@given(networks())
def test_pairwise_matrix_matches_scalars(d):
    S = pairwise_similarity(d, Kind.PREFERENCE)
    for i, j in itertools.combinations(d.agent_ids, 2):
        assert S.get(i, j) == pytest.approx(pref_sim(i, j, d), abs=1e-12)


@given(st.sampled_from(list(Kind)), st.floats(0, 1), st.floats(0, 1))
def test_distance_decreasing_in_similarity(kind, u, v):
    a, b = sorted((u * kind.max_sim, v * kind.max_sim))
    assert sim_to_distance(a, kind) >= sim_to_distance(b, kind) >= 0.0


@given(st.lists(st.tuples(STARS, st.floats(1, 5)), min_size=1, max_size=30))
def test_rmse_at_least_mae(rows):
    test = [(f"u{n}", "x", r) for n, (r, _) in enumerate(rows)]
    preds = [(f"u{n}", "x", p) for n, (_, p) in enumerate(rows)]
    res = evaluate_predictions(preds, test)
    assert res.rmse >= res.mae - 1e-12
    assert res.n == len(rows)


@FAST
@given(networks(), st.integers(1, 6), st.integers(0, 5), st.sampled_from(list(Kind)))
def test_kmeans_assignment_total(d, k, max_iter, kind):
    C = cluster_kmeans_modified(d.agent_ids, pairwise_similarity(d, kind), k, max_iter)
    assert C.agents == d.agent_ids
    assert len(C.labels) == len(d.agent_ids)
    assert C.labels.min() >= 0 and C.labels.max() < C.k <= k


@FAST
@given(networks(), st.lists(st.integers(0, 2), min_size=6, max_size=6))
def test_silhouette_in_range(d, labels):
    assume(len(set(labels)) > 1)
    values = silhouette_samples(ClusterAssignment(d.agent_ids, labels, 3), pairwise_similarity(d, Kind.SOCIAL))
    assert np.all((values >= -1 - 1e-12) & (values <= 1 + 1e-12))


@FAST
@given(networks(), st.integers(0, 10))
def test_training_sets_balanced_when_negatives_exist(d, seed):
    table = compute_indicators(d)
    data = build_training_set(d.agent_ids, LinkTarget.FRIENDSHIP, table, d, seed)
    n_neg = len(data.y) - data.n_positive
    in_hood = int((table["are_friends"] == 0).sum())
    # neighborhood negatives are always enough up to the positive count; outside ones are best effort
    assert min(data.n_positive, in_hood) <= n_neg <= data.n_positive
    assert len(set(data.pairs)) == len(data.pairs)
    for (i, j), label in zip(data.pairs, data.y):
        assert label == (j in d.agents[i].friends)


@FAST
@given(networks(), st.data())
def test_mtr_predictions_in_scale(d, data):
    covered = list(itertools.permutations(AGENTS, 2))
    gamma = TrustPredictionMatrix({p: data.draw(st.integers(0, 1)) for p in covered})
    cfg = MtrConfig(kappa=data.draw(st.integers(1, 6)), beta=data.draw(st.floats(0, 1)))
    rec = mtr_recommender(d, gamma, cfg)
    for i in AGENTS:
        for t in ITEMS:
            assert 1.0 <= rec.predict(i, t) <= 5.0
