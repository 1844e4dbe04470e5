"""Synthetic review networks with planted clusters and cluster-specific trust formation.

Generative story:

* agents belong to one of ``k_clusters`` planted clusters and carry a
  latent attribute vector that surfaces as profile counts (fans, elite
  years, profile and content compliments);
* latent trust between two agents of cluster ``c`` forms with
  probability ``sigmoid(logit(p_intra) + w_c . f_ij)``, where ``f_ij``
  stacks the summed attributes ``x_i + x_j``, the cosine of the two taste
  vectors and the standardized overlap of rated items; each cluster
  weighs these differently, and cross-cluster trust has the small
  constant probability ``p_inter``;
* only a ``declare_prob`` share of latent trust edges is declared as
  friendship, the rest stays hidden; casual friendships without trust
  link agents of different clusters with probability ``p_casual``;
* ratings combine an item effect, a cluster-specific item offset, a
  taste-by-item interaction and noise, then are pulled towards the ratings of trusted agents
  who rated the item earlier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .clustering import ClusterAssignment
from .dataset import Agent, Dataset, Item
from .errors import DataError

N_ATTRIBUTES = 4
# trust-formation weights cover the four profile attributes, pairwise taste
# similarity and the standardized overlap of rated items
N_TRUST_FEATURES = N_ATTRIBUTES + 2


@dataclass(frozen=True)
class SynthConfig:
    n_agents: int = 360
    n_items: int = 300
    k_clusters: int = 3
    ratings_per_agent: int = 30
    pool_affinity: float = 0.85
    pref_scale: float = 1.0
    item_bias_scale: float = 0.4
    idio_scale: float = 0.6
    noise_scale: float = 0.8
    taste_dim: int = 3
    p_intra: float = 0.2
    p_inter: float = 0.003
    trust_weight_scale: float = 3.0
    shared_trust_weights: bool = False
    trust_weights: tuple[tuple[float, ...], ...] | None = None
    declare_prob: float = 0.8
    p_casual: float = 0.02
    social_influence: float = 0.7
    global_mean: float = 3.7

    def validate(self) -> None:
        if self.n_agents < 1 or self.n_items < 1:
            raise DataError("need at least one agent and one item")
        if not 1 <= self.k_clusters <= self.n_agents:
            raise DataError("k_clusters must lie in [1, n_agents]")
        if not 1 <= self.ratings_per_agent <= self.n_items:
            raise DataError("ratings_per_agent must lie in [1, n_items]")
        for name in ("pool_affinity", "p_intra", "p_inter", "declare_prob", "p_casual", "social_influence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DataError(f"{name} must lie in [0, 1]")
        if self.trust_weights is not None and np.shape(self.trust_weights) != (self.k_clusters, N_TRUST_FEATURES):
            raise DataError(f"trust_weights must have shape ({self.k_clusters}, {N_TRUST_FEATURES})")
        if self.taste_dim < 1:
            raise DataError("taste_dim must be >= 1")


class Synthetic(NamedTuple):
    dataset: Dataset
    planted: ClusterAssignment
    planted_weights: np.ndarray


# sign patterns of the two pairwise terms: like, dislike or ignore similarity
_PAIR_PATTERN = (1.0, -1.0, 0.0)
# the pairwise terms get more weight than the profile attributes because
# an attribute effect is also visible, cluster-agnostically, through degree
PAIR_WEIGHT_RATIO = 1.5


def default_trust_weights(k: int, scale: float, shared: bool = False) -> np.ndarray:
    """Cluster ``c`` favours attribute ``c``, penalises attribute ``c + 1`` (mod 4)
    and cycles through liking, disliking and ignoring similar taste and item overlap."""
    w = np.zeros((k, N_TRUST_FEATURES))
    for c in range(k):
        src = 0 if shared else c
        w[c, src % N_ATTRIBUTES] = 1.0 / np.sqrt(2.0)
        w[c, (src + 1) % N_ATTRIBUTES] = -1.0 / np.sqrt(2.0)
        w[c, N_ATTRIBUTES] = PAIR_WEIGHT_RATIO * _PAIR_PATTERN[src % 3]
        w[c, N_ATTRIBUTES + 1] = PAIR_WEIGHT_RATIO * _PAIR_PATTERN[(src + 2) % 3]
    return scale * w


def _logit(p: float) -> float:
    p = min(max(p, 1e-9), 1 - 1e-9)
    return float(np.log(p / (1 - p)))


def _item_jaccard(chosen: list[np.ndarray], m: int) -> np.ndarray:
    n = len(chosen)
    rows = np.repeat(np.arange(n), [len(c) for c in chosen])
    B = sp.csr_matrix((np.ones(len(rows)), (rows, np.concatenate(chosen))), shape=(n, m))
    common = (B @ B.T).toarray()
    counts = np.asarray(B.sum(axis=1)).ravel()
    union = counts[:, None] + counts[None, :] - common
    return np.divide(common, union, out=np.zeros_like(common), where=union > 0)


def generate_synthetic(cfg: SynthConfig = SynthConfig(), seed: int = 0) -> Synthetic:
    cfg.validate()
    rng = np.random.default_rng(seed)
    n, m, k = cfg.n_agents, cfg.n_items, cfg.k_clusters
    width = len(str(max(n, m) - 1))
    agent_ids = [f"u{a:0{width}d}" for a in range(n)]
    item_ids = [f"b{t:0{width}d}" for t in range(m)]

    labels = rng.permutation(np.arange(n) % k)
    if cfg.trust_weights is not None:
        weights = np.asarray(cfg.trust_weights, dtype=float)
    else:
        weights = default_trust_weights(k, cfg.trust_weight_scale, cfg.shared_trust_weights)

    attrs = rng.standard_normal((n, N_ATTRIBUTES))
    taste = rng.standard_normal((n, cfg.taste_dim))
    unit_taste = taste / np.linalg.norm(taste, axis=1, keepdims=True)

    # item pools, effects and categories
    pool_of = np.arange(m) % k
    item_bias = rng.normal(0.0, cfg.item_bias_scale, m)
    offsets = rng.normal(0.0, cfg.pref_scale, (k, m))
    item_taste = rng.standard_normal((m, cfg.taste_dim)) / np.sqrt(cfg.taste_dim)
    extra_cats = [f"Tag{q}" for q in range(8)]
    items = []
    for t in range(m):
        cats = {"Restaurants", f"Style{pool_of[t]}"}
        if rng.random() < 0.5:
            cats.add(extra_cats[rng.integers(len(extra_cats))])
        items.append(Item(item_ids[t], frozenset(cats)))

    chosen = []
    for a in range(n):
        in_pool = pool_of == labels[a]
        w = np.where(in_pool, cfg.pool_affinity / max(in_pool.sum(), 1), (1 - cfg.pool_affinity) / max((~in_pool).sum(), 1))
        if not in_pool.any() or in_pool.all():
            w = np.ones(m)
        w = w / w.sum()
        chosen.append(rng.choice(m, size=cfg.ratings_per_agent, replace=False, p=w))

    # latent trust over unordered pairs
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    logits = np.full(len(iu), _logit(cfg.p_inter))
    c_same = labels[iu[same]]
    overlap = _item_jaccard(chosen, m)[iu[same], ju[same]]
    spread = overlap.std()
    overlap = (overlap - overlap.mean()) / spread if spread > 0 else np.zeros_like(overlap)
    pair_feat = np.column_stack([
        attrs[iu[same]] + attrs[ju[same]],
        np.einsum("nd,nd->n", unit_taste[iu[same]], unit_taste[ju[same]]),
        overlap,
    ])
    logits[same] = _logit(cfg.p_intra) + np.einsum("nd,nd->n", pair_feat, weights[c_same])
    trusted = rng.random(len(iu)) < 1.0 / (1.0 + np.exp(-logits))
    declared = trusted & (rng.random(len(iu)) < cfg.declare_prob)
    # casual ties across clusters: declared friendships that carry no trust
    declared |= ~same & (rng.random(len(iu)) < cfg.p_casual)
    trust_sets = [set() for _ in range(n)]
    friend_sets = [set() for _ in range(n)]
    for a, b, t, dcl in zip(iu.tolist(), ju.tolist(), trusted.tolist(), declared.tolist()):
        if t:
            trust_sets[a].add(b)
            trust_sets[b].add(a)
        if dcl:
            friend_sets[a].add(agent_ids[b])
            friend_sets[b].add(agent_ids[a])

    events = np.array([(a, t) for a in range(n) for t in chosen[a]], dtype=int)
    events = events[rng.permutation(len(events))]
    given: dict[tuple[int, int], float] = {}
    raters_so_far: dict[int, list[int]] = {}
    for a, t in events.tolist():
        base = (
            cfg.global_mean
            + item_bias[t]
            + offsets[labels[a], t]
            + cfg.idio_scale * float(taste[a] @ item_taste[t])
            + rng.normal(0.0, cfg.noise_scale)
        )
        prior = [given[(b, t)] for b in raters_so_far.get(t, ()) if b in trust_sets[a]]
        if prior and cfg.social_influence:
            base = (1 - cfg.social_influence) * base + cfg.social_influence * float(np.mean(prior))
        given[(a, t)] = float(np.clip(np.rint(base), 1, 5))
        raters_so_far.setdefault(t, []).append(a)

    agents = []
    for a in range(n):
        x = attrs[a]
        agents.append(
            Agent(
                agent_id=agent_ids[a],
                friends=frozenset(friend_sets[a]),
                elite_years=int(np.clip(np.rint(3 + 1.5 * x[1]), 0, 15)),
                profile_compliments=int(max(0, np.rint(20 + 8 * x[2]))),
                fans=int(max(0, np.rint(10 + 4 * x[0]))),
                content_compliments=int(max(0, np.rint(40 + 15 * x[3]))),
                contributions=cfg.ratings_per_agent + int(rng.poisson(20)),
                account_age_years=float(rng.uniform(2.0, 8.0)),
            )
        )
    triples = [(agent_ids[a], item_ids[t], s) for (a, t), s in sorted(given.items())]
    latent = sorted(
        (agent_ids[a], agent_ids[b]) for a in range(n) for b in trust_sets[a] if a < b
    )
    d = Dataset.build(agents, items, triples, {"synthetic_seed": seed, "latent_trust": latent})
    planted = ClusterAssignment(list(d.agent_ids), labels[[agent_ids.index(a) for a in d.agent_ids]], k)
    return Synthetic(d, planted, weights)
