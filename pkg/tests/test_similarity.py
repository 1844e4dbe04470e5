import itertools

import numpy as np
import pytest
from pytest import approx

import oracles
from conftest import EXACT, make_dataset, plain, random_fixture
from pmftm.errors import ContractError
from pmftm.similarity import (
    Kind,
    SimilarityMatrix,
    pairwise_similarity,
    pref_sim,
    sim_to_distance,
    social_sim,
)


def _deviation_fixture(dev_i, dev_j):
    """Two agents whose deviations from item means are given exactly.

    A third agent with mirrored ratings pins each item mean at 3.
    """
    ratings = {"i": {}, "j": {}, "m": {}}
    for n, (a, b) in enumerate(zip(dev_i, dev_j)):
        t = f"t{n}"
        ratings["i"][t] = 3 + a
        ratings["j"][t] = 3 + b
        ratings["m"][t] = 9 - (3 + a) - (3 + b)
    return make_dataset(ratings)


class TestPrefSim:
    def test_three_common_items_default(self):
        d = make_dataset({"i": {"a": 5, "b": 1, "c": 4}, "j": {"a": 5, "b": 1, "c": 4}})
        assert pref_sim("i", "j", d) == 1.0

    def test_identical_deviations_give_two(self):
        d = _deviation_fixture([1, -1, 0.5, -0.5], [1, -1, 0.5, -0.5])
        assert pref_sim("i", "j", d) == approx(2.0, **EXACT)

    def test_opposite_deviations_give_zero(self):
        d = _deviation_fixture([1, -1, 0.5, -0.5], [-1, 1, -0.5, 0.5])
        assert pref_sim("i", "j", d) == approx(0.0, abs=1e-12)

    def test_zero_variance_default(self):
        # j sits exactly on every item mean
        d = _deviation_fixture([1, -1, 0.5, -0.5], [0, 0, 0, 0])
        assert pref_sim("i", "j", d) == 1.0

    def test_five_common_items_against_oracle(self):
        d = make_dataset(
            {
                "i": {"a": 5, "b": 2, "c": 4, "d": 1, "e": 3},
                "j": {"a": 4, "b": 1, "c": 5, "d": 2, "e": 2},
                "k": {"a": 3, "b": 3, "c": 2, "d": 4, "e": 5, "f": 1},
            }
        )
        ratings, _ = plain(d)
        expected = oracles.pref_sim("i", "j", ratings)
        assert expected != 1.0
        assert pref_sim("i", "j", d) == approx(expected, **EXACT)

    def test_cutoff_is_configurable(self):
        d = make_dataset({"i": {"a": 5, "b": 1, "c": 4}, "j": {"a": 4, "b": 2, "c": 5}, "k": {"a": 1, "b": 4, "c": 2}})
        ratings, _ = plain(d)
        assert pref_sim("i", "j", d, min_common=3) == approx(oracles.pref_sim("i", "j", ratings, min_common=3), **EXACT)

    def test_unknown_agent(self, tiny):
        with pytest.raises(KeyError):
            pref_sim("u1", "ghost", tiny)

    def test_symmetric_and_in_range(self, random_network):
        for i, j in itertools.combinations(random_network.agent_ids, 2):
            s = pref_sim(i, j, random_network)
            assert 0.0 <= s <= 2.0
            assert s == pref_sim(j, i, random_network)


class TestSocialSim:
    def test_both_empty(self):
        d = make_dataset({"a": {"t": 1}, "b": {"t": 2}})
        assert social_sim("a", "b", d) == 0.0

    def test_identical_sets(self, tiny):
        # u1 and u3 both have exactly {u2}
        assert social_sim("u1", "u3", tiny) == 1.0

    def test_half_overlap(self):
        d = make_dataset(
            {x: {"t": 3} for x in "ijabcd"},
            friends={"i": ["a", "b", "c"], "j": ["b", "c", "d"]},
        )
        assert social_sim("i", "j", d) == 0.5

    def test_unknown_agent(self, tiny):
        with pytest.raises(KeyError):
            social_sim("ghost", "u1", tiny)


class TestDistance:
    @pytest.mark.parametrize(
        "s, kind, expected",
        [(1.0, Kind.PREFERENCE, 1.0), (2.0, Kind.PREFERENCE, 0.0), (0.0, Kind.PREFERENCE, 2.0),
         (1.0, Kind.SOCIAL, 0.0), (0.0, Kind.SOCIAL, 1.0), (0.25, "social", 0.75)],
    )
    def test_values(self, s, kind, expected):
        assert sim_to_distance(s, kind) == expected

    @pytest.mark.parametrize("s, kind", [(2.1, Kind.PREFERENCE), (-0.1, Kind.SOCIAL), (1.5, Kind.SOCIAL), (float("nan"), Kind.SOCIAL)])
    def test_out_of_range(self, s, kind):
        with pytest.raises(ContractError):
            sim_to_distance(s, kind)


class TestPairwise:
    def test_empty_pairs_only_default(self, tiny):
        S = pairwise_similarity(tiny, Kind.PREFERENCE, pairs=[])
        assert S.offsets.nnz == 0
        assert S.get("u1", "u2") == 1.0

    @pytest.mark.parametrize("kind", list(Kind))
    def test_matches_scalar_ops(self, kind):
        d = random_fixture(11, n_agents=10, n_items=14, density=0.7)
        S = pairwise_similarity(d, kind)
        scalar = pref_sim if kind is Kind.PREFERENCE else social_sim
        for i, j in itertools.permutations(d.agent_ids, 2):
            assert S.get(i, j) == approx(scalar(i, j, d), **EXACT)

    def test_exhaustive_fifty_agents(self):
        d = random_fixture(5, n_agents=50, n_items=20, density=0.5, friend_p=0.1)
        ratings, friends = plain(d)
        means = oracles.item_means(ratings)
        P = pairwise_similarity(d, Kind.PREFERENCE)
        F = pairwise_similarity(d, Kind.SOCIAL)
        for i, j in itertools.combinations(d.agent_ids, 2):
            assert P.get(i, j) == approx(oracles.pref_sim(i, j, ratings, means), **EXACT)
            assert F.get(i, j) == approx(oracles.jaccard(friends[i], friends[j]), **EXACT)

    def test_restricted_pairs(self, random_network):
        ids = random_network.agent_ids
        pairs = [(ids[0], ids[1]), (ids[2], ids[3])]
        S = pairwise_similarity(random_network, Kind.SOCIAL, pairs)
        full = pairwise_similarity(random_network, Kind.SOCIAL)
        assert S.get(ids[0], ids[1]) == full.get(ids[0], ids[1])
        assert S.get(ids[3], ids[2]) == full.get(ids[2], ids[3])
        assert S.get(ids[0], ids[2]) == 0.0

    def test_only_non_default_stored(self, random_network):
        S = pairwise_similarity(random_network, Kind.PREFERENCE)
        assert np.all(S.offsets.data != 0)
        assert (S.offsets != S.offsets.T).nnz == 0
        assert S.offsets.diagonal().sum() == 0

    def test_self_lookup_rejected(self, tiny):
        with pytest.raises(ContractError):
            pairwise_similarity(tiny, Kind.SOCIAL).get("u1", "u1")

    def test_csv_round_trip(self, tmp_path, random_network):
        S = pairwise_similarity(random_network, Kind.PREFERENCE)
        S.to_csv(tmp_path / "s.csv")
        back = SimilarityMatrix.from_csv(tmp_path / "s.csv", random_network.agent_ids)
        assert back.kind is Kind.PREFERENCE
        np.testing.assert_array_equal(back.dense(), S.dense())
        assert (tmp_path / "s.csv").read_text().startswith("# kind=preference default=1.0")

    def test_item_means_from_train_only(self):
        from pmftm.dataset import split_per_user

        d = random_fixture(7, n_agents=10, n_items=16, density=0.8)
        train, _ = split_per_user(d, 0.3, seed=0)
        ratings, _ = plain(train)
        S = pairwise_similarity(train, Kind.PREFERENCE, min_common=2)
        for i, j in itertools.combinations(train.agent_ids, 2):
            assert S.get(i, j) == approx(oracles.pref_sim(i, j, ratings, min_common=2), **EXACT)
