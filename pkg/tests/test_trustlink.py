import numpy as np
import pytest
from pytest import approx
from sklearn.linear_model import LogisticRegression

from conftest import plain, random_fixture
from pmftm.clustering import ClusterAssignment, random_partition
from pmftm.errors import ContractError, DataError
from pmftm.indicators import build_neighborhoods, compute_indicators, indicator_vector
from pmftm.trustlink import (
    GLOBAL,
    UNDEFINED,
    LinkClassifier,
    LinkExamples,
    LinkTarget,
    TrustPredictionMatrix,
    assign_classifiers,
    build_training_set,
    friendship_trust_matrix,
    load_classifiers,
    predict_trust_matrix,
    save_classifiers,
    train_link_classifier,
    train_personalized,
)


def _examples(X, y, names=None):
    names = names or [f"f{n}" for n in range(np.shape(X)[1])]
    return LinkExamples(np.asarray(X, float), np.asarray(y, int), names, [("a", "b")] * len(y))


@pytest.fixture(scope="module")
def network():
    d = random_fixture(4, n_agents=30, n_items=25, density=0.3, friend_p=0.15)
    return d, compute_indicators(d), build_neighborhoods(d)


class TestTarget:
    def test_exclusions(self):
        assert "are_friends" not in LinkTarget.FRIENDSHIP.features
        assert "are_fof" in LinkTarget.FRIENDSHIP.features
        assert "benevolence" not in LinkTarget.POSITIVE_CORRELATION.features
        assert "are_friends" in LinkTarget.POSITIVE_CORRELATION.features


class TestTrainingSet:
    @pytest.mark.parametrize("target", list(LinkTarget))
    def test_balanced_and_brute_force_positives(self, network, target):
        d, table, nb = network
        members = d.agent_ids[:15]
        data = build_training_set(members, target, table, d, seed=1, neighborhoods=nb)
        ratings, friends = plain(d)
        if target is LinkTarget.FRIENDSHIP:
            expected = {(i, j) for i in members for j in friends[i]}
        else:
            expected = {(i, j) for i in members for j in nb.neighbors[i] if indicator_vector(i, j, d).benevolence > 1}
        got = {p for p, lab in zip(data.pairs, data.y) if lab == 1}
        assert got == expected
        assert data.n_positive == len(data.y) - data.n_positive
        assert target.excluded not in data.feature_names
        assert data.X.shape == (len(data.y), 19)
        assert all(i in set(members) for i, _ in data.pairs)

    def test_ten_positives_ten_negatives(self):
        from conftest import make_dataset

        others = [f"o{n:02d}" for n in range(25)]
        d = make_dataset({a: {"x": 3} for a in ["hub", *others]}, friends={"hub": others[:10]})
        data = build_training_set(["hub"], LinkTarget.FRIENDSHIP, compute_indicators(d), d, 0)
        assert data.n_positive == 10
        assert len(data.y) == 20

    def test_zero_positives_flagged(self, network):
        d, table, nb = network
        lonely = [a for a in d.agent_ids if not d.agents[a].friends]
        data = build_training_set(lonely, LinkTarget.FRIENDSHIP, table, d)
        assert data.no_positives and len(data.y) == 0

    def test_deterministic(self, network):
        d, table, nb = network
        a = build_training_set(d.agent_ids, LinkTarget.FRIENDSHIP, table, d, 3, nb)
        b = build_training_set(list(reversed(d.agent_ids)), LinkTarget.FRIENDSHIP, table, d, 3, nb)
        assert a.pairs == b.pairs

    def test_outside_negatives_when_short(self):
        # a clique: every neighborhood pair is a friendship, so negatives must come from outside
        from conftest import make_dataset

        d = make_dataset(
            {"a": {"x": 1}, "b": {"x": 2}, "c": {"x": 3}, "p": {"y": 4}, "q": {"z": 5}, "r": {"w": 2}},
            friends={"a": ["b", "c"], "b": ["c"]},
        )
        table = compute_indicators(d)
        nb = build_neighborhoods(d)
        data = build_training_set(["a", "b", "c"], LinkTarget.FRIENDSHIP, table, d, 0, nb)
        assert data.n_positive == 6 and len(data.y) == 12
        negatives = [p for p, lab in zip(data.pairs, data.y) if lab == 0]
        assert all(p not in nb for p in negatives)


class TestClassifier:
    def test_separable(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 2))
        y = (X[:, 0] + 2 * X[:, 1] > 0).astype(int)
        clf = train_link_classifier(_examples(X, y))
        assert np.mean(clf.predict(X) == y) >= 0.99

    def test_random_labels_near_chance(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(2000, 5))
        y = rng.integers(0, 2, size=2000)
        clf = train_link_classifier(_examples(X[:1000], y[:1000]))
        assert np.mean(clf.predict(X[1000:]) == y[1000:]) == approx(0.5, abs=0.05)

    def test_weight_recovery(self):
        rng = np.random.default_rng(2)
        theta = np.array([1.5, -1.0, 0.5, 0.0, 2.0])
        X = rng.normal(size=(5000, 5))
        y = (rng.random(5000) < 1 / (1 + np.exp(-(X @ theta)))).astype(int)
        w = train_link_classifier(_examples(X, y)).weights
        assert w @ theta / (np.linalg.norm(w) * np.linalg.norm(theta)) >= 0.9

    def test_matches_sklearn(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(400, 4)) * [1, 3, 0.5, 10] + [0, 5, -1, 2]
        y = (rng.random(400) < 1 / (1 + np.exp(-(X @ [1, -0.3, 2, 0.05])))).astype(int)
        clf = train_link_classifier(_examples(X, y))
        Z = (X - clf.feature_means) / clf.feature_scales
        ref = LogisticRegression(C=1.0, tol=1e-10, max_iter=10000).fit(Z, y)
        np.testing.assert_allclose(clf.weights, ref.coef_.ravel(), atol=1e-5)
        assert clf.bias == approx(ref.intercept_[0], abs=1e-5)

    def test_constant_feature_scale(self):
        X = np.column_stack([np.arange(10.0), np.ones(10)])
        clf = train_link_classifier(_examples(X, [0] * 5 + [1] * 5))
        assert np.all(clf.feature_scales > 0)
        assert clf.weights[1] == approx(0.0, abs=1e-9)

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            train_link_classifier(_examples(np.zeros((4, 2)), [1, 1, 1, 1]))

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            train_link_classifier(_examples([[0.0], [np.inf]], [0, 1]))

    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(50, 3))
        clf = train_link_classifier(_examples(X, (X[:, 0] > 0).astype(int)), trained_on=2)
        save_classifiers({2: clf, 0: clf}, tmp_path / "c.json")
        back = load_classifiers(tmp_path / "c.json")
        assert sorted(back) == [0, 2]
        np.testing.assert_array_equal(back[2].predict_proba(X), clf.predict_proba(X))
        assert back[2].trained_on == 2


def _fake_cluster_data(n_pos, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2 * n_pos, 2))
    y = np.r_[np.ones(n_pos, int), np.zeros(n_pos, int)]
    X[:, 0] += y
    return _examples(X, y)


class TestThresholds:
    def _assign(self, size, n_pos):
        C = ClusterAssignment([str(n) for n in range(size + 200)], [0] * size + [1] * 200, 2)
        data = {0: _fake_cluster_data(n_pos, 0), 1: _fake_cluster_data(1000, 1)}
        return assign_classifiers(C, data, _fake_cluster_data(50, 2))

    def test_ninety_nine_agents(self):
        out = self._assign(99, 5000)
        assert out[0].trained_on == GLOBAL and out[1].trained_on == 1

    def test_nine_hundred_ninety_nine_positives(self):
        assert self._assign(500, 999)[0].trained_on == GLOBAL

    def test_both_met(self):
        assert self._assign(100, 1000)[0].trained_on == 0

    def test_k_one_matches_global(self, network):
        d, table, nb = network
        C = ClusterAssignment(d.agent_ids, [0] * len(d.agent_ids), 1)
        clfs = train_personalized(C, LinkTarget.FRIENDSHIP, table, d, seed=0, min_agents=1, min_positive=1, neighborhoods=nb)
        glob = train_link_classifier(build_training_set(d.agent_ids, LinkTarget.FRIENDSHIP, table, d, 0, nb))
        np.testing.assert_array_equal(clfs[0].weights, glob.weights)


class TestPrediction:
    def _zero(self, names):
        p = len(names)
        return LinkClassifier(np.zeros(p), 0.0, np.zeros(p), np.ones(p), names)

    def test_zero_classifier_all_zero(self, network):
        d, table, nb = network
        C = random_partition(d.agent_ids, 1)
        G = predict_trust_matrix(C, {0: self._zero(LinkTarget.FRIENDSHIP.features)}, table, nb)
        assert len(G) == nb.n_pairs()
        assert G.positives() == []

    def test_undefined_outside_neighborhoods(self, network):
        d, table, nb = network
        C = random_partition(d.agent_ids, 1)
        G = predict_trust_matrix(C, {0: self._zero(LinkTarget.FRIENDSHIP.features)}, table, nb)
        outside = next((i, j) for i in d.agent_ids for j in d.agent_ids if i != j and (i, j) not in nb)
        assert G.get(*outside) is UNDEFINED
        assert G.value(*outside) == 0.0

    def test_matches_scalar_scoring(self, network):
        d, table, nb = network
        C = random_partition(d.agent_ids, 2, seed=1)
        clfs = train_personalized(C, LinkTarget.FRIENDSHIP, table, d, 0, min_agents=5, min_positive=5, neighborhoods=nb)
        assert {c.trained_on for c in clfs.values()} == {0, 1}
        G = predict_trust_matrix(C, clfs, table, nb)
        cluster = C.assignment
        for i, j in nb.pairs():
            v = indicator_vector(i, j, d)
            clf = clfs[cluster[i]]
            x = np.array([[float(getattr(v, f)) for f in clf.feature_names]])
            assert G.get(i, j) == int(clf.predict_proba(x)[0] > 0.5)

    def test_deterministic(self, network):
        d, table, nb = network
        C = random_partition(d.agent_ids, 2, seed=1)
        runs = [
            predict_trust_matrix(C, train_personalized(C, LinkTarget.FRIENDSHIP, table, d, 7, 5, 5, neighborhoods=nb), table, nb)
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_csv_round_trip(self, tmp_path, network):
        d, _, nb = network
        G = friendship_trust_matrix(d, nb)
        G.to_csv(tmp_path / "g.csv", tmp_path / "cov.csv")
        assert TrustPredictionMatrix.from_csv(tmp_path / "g.csv", tmp_path / "cov.csv") == G

    def test_friendship_matrix(self, network):
        d, _, nb = network
        G = friendship_trust_matrix(d, nb)
        _, friends = plain(d)
        assert set(G.positives()) == {(i, j) for i in friends for j in friends[i]}
        assert len(G) == nb.n_pairs()
