import random
import sys
from pathlib import Path

import pytest

from pmftm.dataset import Agent, Dataset, Item
from pmftm.synthetic import SynthConfig, generate_synthetic

sys.path.insert(0, str(Path(__file__).parent))

# oracle comparisons: same formula, different summation order
EXACT = dict(rel=1e-12, abs=1e-12)


def make_dataset(ratings, friends=None, profiles=None, categories=None):
    """Build a Dataset from plain dicts.

    ratings: agent -> item -> stars; friends: agent -> iterable (symmetrised here);
    profiles: agent -> dict of Agent fields; categories: item -> iterable.
    """
    friends = friends or {}
    profiles = profiles or {}
    categories = categories or {}
    sym = {a: set() for a in ratings}
    for a, fs in friends.items():
        for b in fs:
            sym.setdefault(a, set()).add(b)
            sym.setdefault(b, set()).add(a)
    agent_ids = sorted(set(ratings) | set(sym))
    agents = [Agent(a, frozenset(sym.get(a, ())), **profiles.get(a, {})) for a in agent_ids]
    item_ids = sorted({t for row in ratings.values() for t in row} | set(categories))
    items = [Item(t, frozenset(categories.get(t, ()))) for t in item_ids]
    triples = [(a, t, r) for a, row in ratings.items() for t, r in row.items()]
    return Dataset.build(agents, items, triples)


def random_fixture(seed, n_agents=8, n_items=10, density=0.6, friend_p=0.3):
    """Small random network: ratings on a half-star grid, random friendships and profiles."""
    rng = random.Random(seed)
    agents = [f"a{n}" for n in range(n_agents)]
    items = [f"i{n}" for n in range(n_items)]
    ratings = {a: {t: rng.choice([1, 1.5, 2, 3, 3.5, 4, 4.5, 5]) for t in items if rng.random() < density} for a in agents}
    for a in agents:
        if not ratings[a]:
            ratings[a][rng.choice(items)] = 3.0
    friends = {a: [b for b in agents if a < b and rng.random() < friend_p] for a in agents}
    profiles = {
        a: dict(
            elite_years=rng.randint(0, 5),
            profile_compliments=rng.randint(0, 30),
            fans=rng.randint(0, 20),
            content_compliments=rng.randint(0, 50),
            contributions=rng.randint(0, 40),
            account_age_years=rng.uniform(0.5, 9.0),
        )
        for a in agents
    }
    categories = {t: rng.sample(["A", "B", "C", "D"], rng.randint(0, 2)) for t in items}
    return make_dataset(ratings, friends, profiles, categories)


def plain(d):
    """Dataset as plain dicts for the oracles."""
    ratings = {a: dict(row) for a, row in d.ratings.items()}
    friends = {a: set(ag.friends) for a, ag in d.agents.items()}
    return ratings, friends


@pytest.fixture
def tiny():
    return make_dataset(
        {
            "u1": {"b1": 5, "b2": 3, "b3": 4, "b4": 2, "b5": 1},
            "u2": {"b1": 4, "b2": 3, "b3": 5, "b4": 1},
            "u3": {"b1": 2, "b2": 4, "b6": 3},
            "u4": {"b7": 5},
        },
        friends={"u1": ["u2"], "u2": ["u3"]},
        categories={"b1": ["Restaurants", "Thai"], "b2": ["Restaurants"], "b6": ["Bars"], "b7": ["Bars"]},
    )


@pytest.fixture(params=range(4))
def random_network(request):
    return random_fixture(request.param)


@pytest.fixture(scope="session")
def synth():
    """Default heterogeneous synthetic network (seed 0)."""
    return generate_synthetic(SynthConfig(), 0)


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(SynthConfig(n_agents=150), 0)
