"""Review-network data: loading, activity filtering, per-user splits and statistics.

Input files are newline-delimited JSON in the Yelp open-dataset layout
(``user.json``, ``review.json``, ``business.json``).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DataError

_log = logging.getLogger(__name__)

MIN_ACCOUNT_AGE = 1.0 / 365.0

Rating = tuple[str, str, float]


@dataclass(frozen=True)
class Agent:
    agent_id: str
    friends: frozenset[str] = frozenset()
    elite_years: int = 0
    profile_compliments: int = 0
    fans: int = 0
    content_compliments: int = 0
    contributions: int = 0
    account_age_years: float = 1.0

    def with_friends(self, friends: Iterable[str]) -> Agent:
        return Agent(
            self.agent_id,
            frozenset(friends),
            self.elite_years,
            self.profile_compliments,
            self.fans,
            self.content_compliments,
            self.contributions,
            self.account_age_years,
        )


@dataclass(frozen=True)
class Item:
    item_id: str
    categories: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Review:
    agent_id: str
    item_id: str
    stars: float
    timestamp: str | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable review network.

    ``ratings`` maps agent -> item -> stars and ``item_raters`` is the
    transposed view.  Agent and item orderings (``agent_ids``,
    ``item_ids``) are sorted and define matrix indices everywhere.
    """

    agents: Mapping[str, Agent]
    items: Mapping[str, Item]
    ratings: Mapping[str, Mapping[str, float]]
    item_raters: Mapping[str, Mapping[str, float]]
    item_means: Mapping[str, float]
    global_mean: float
    provenance: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        agents: Iterable[Agent],
        items: Iterable[Item],
        ratings: Iterable[Rating],
        provenance: Mapping[str, object] | None = None,
    ) -> Dataset:
        agent_map = {a.agent_id: a for a in agents}
        item_map = {it.item_id: it for it in items}
        by_agent: dict[str, dict[str, float]] = {a: {} for a in sorted(agent_map)}
        by_item: dict[str, dict[str, float]] = defaultdict(dict)
        for agent_id, item_id, stars in ratings:
            if agent_id not in agent_map:
                raise DataError(f"rating references unknown agent {agent_id!r}")
            if item_id not in item_map:
                raise DataError(f"rating references unknown item {item_id!r}")
            by_agent[agent_id][item_id] = float(stars)
            by_item[item_id][agent_id] = float(stars)
        item_means = {k: math.fsum(v.values()) / len(v) for k, v in sorted(by_item.items())}
        total = math.fsum(s for row in by_agent.values() for s in row.values())
        count = sum(len(row) for row in by_agent.values())
        global_mean = total / count if count else 3.0
        return cls(
            agents=dict(sorted(agent_map.items())),
            items=dict(sorted(item_map.items())),
            ratings=by_agent,
            item_raters=dict(by_item),
            item_means=item_means,
            global_mean=global_mean,
            provenance=dict(provenance or {}),
        )

    @cached_property
    def agent_ids(self) -> list[str]:
        return list(self.agents)

    @cached_property
    def item_ids(self) -> list[str]:
        return list(self.items)

    @cached_property
    def agent_index(self) -> dict[str, int]:
        return {a: i for i, a in enumerate(self.agent_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.item_ids)}

    @cached_property
    def agent_means(self) -> dict[str, float]:
        return {a: math.fsum(row.values()) / len(row) for a, row in self.ratings.items() if row}

    @property
    def n_ratings(self) -> int:
        return sum(len(row) for row in self.ratings.values())

    def triples(self) -> Iterator[Rating]:
        for agent_id, row in self.ratings.items():
            for item_id, stars in row.items():
                yield agent_id, item_id, stars

    def rating_of(self, agent_id: str, item_id: str) -> float | None:
        return self.ratings[agent_id].get(item_id)

    def rating_matrix(self) -> sp.csr_matrix:
        """Agents x items matrix of stars (0 where unrated)."""
        rows, cols, vals = [], [], []
        for a, row in self.ratings.items():
            ai = self.agent_index[a]
            for t, s in row.items():
                rows.append(ai)
                cols.append(self.item_index[t])
                vals.append(s)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.agent_ids), len(self.item_ids)), dtype=float
        )

    def friendship_matrix(self) -> sp.csr_matrix:
        rows, cols = [], []
        for a, agent in self.agents.items():
            ai = self.agent_index[a]
            for f in agent.friends:
                rows.append(ai)
                cols.append(self.agent_index[f])
        n = len(self.agent_ids)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    def with_ratings(self, ratings: Iterable[Rating]) -> Dataset:
        """Same agents and items, different rating set (means recomputed)."""
        return Dataset.build(self.agents.values(), self.items.values(), ratings, self.provenance)

    def check_symmetric_friendship(self) -> bool:
        for a, agent in self.agents.items():
            if a in agent.friends:
                return False
            for f in agent.friends:
                if f not in self.agents or a not in self.agents[f].friends:
                    return False
        return True


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train: Dataset
    test: list[Rating]


# ---------------------------------------------------------------- loading


def _iter_jsonl(path: Path, kind: str, skipped: Counter) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                _log.warning("%s:%d: malformed JSON (%s), skipped", path, lineno, exc.msg)
                skipped[kind] += 1
                continue
            if not isinstance(rec, dict):
                _log.warning("%s:%d: record is not an object, skipped", path, lineno)
                skipped[kind] += 1
                continue
            yield lineno, rec


def _split_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        if value.strip() in ("", "None"):
            return []
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v).strip() for v in value if str(v).strip()]


def _parse_date(value: str) -> date:
    return datetime.fromisoformat(str(value).strip()[:10]).date()


def load_dataset(
    user_file: str | Path,
    review_file: str | Path,
    business_file: str | Path,
    snapshot: date | None = None,
) -> Dataset:
    """Read the three JSON-lines files into a :class:`Dataset`.

    Malformed records are logged with their line number, skipped and
    counted in ``provenance["skipped"]``.  Friendships are kept only when
    both endpoints list each other.  Duplicate (agent, item) reviews keep
    the latest by date.  ``snapshot`` defaults to the latest review date
    and anchors account ages.
    """
    skipped: Counter = Counter()

    raw_users: dict[str, dict] = {}
    for lineno, rec in _iter_jsonl(Path(user_file), "users", skipped):
        uid = rec.get("user_id")
        if not uid:
            _log.warning("%s:%d: missing user_id, skipped", user_file, lineno)
            skipped["users"] += 1
            continue
        try:
            raw_users[uid] = {
                "friends": _split_list(rec.get("friends")),
                "elite": len(_split_list(rec.get("elite"))),
                "profile": sum(int(v) for k, v in rec.items() if k.startswith("compliment_")),
                "fans": int(rec.get("fans", 0)),
                "content": sum(int(rec.get(k, 0)) for k in ("useful", "funny", "cool")),
                "review_count": rec.get("review_count"),
                "since": _parse_date(rec["yelping_since"]) if rec.get("yelping_since") else None,
            }
        except (TypeError, ValueError) as exc:
            _log.warning("%s:%d: bad field value (%s), skipped", user_file, lineno, exc)
            skipped["users"] += 1
    if not raw_users:
        raise DataError(f"no valid user records in {user_file}")

    items: dict[str, Item] = {}
    for lineno, rec in _iter_jsonl(Path(business_file), "businesses", skipped):
        bid = rec.get("business_id")
        if not bid:
            _log.warning("%s:%d: missing business_id, skipped", business_file, lineno)
            skipped["businesses"] += 1
            continue
        items[bid] = Item(bid, frozenset(_split_list(rec.get("categories"))))

    latest: dict[tuple[str, str], tuple[str, int, float]] = {}
    order = 0
    for lineno, rec in _iter_jsonl(Path(review_file), "reviews", skipped):
        try:
            uid, bid = rec["user_id"], rec["business_id"]
            stars = float(rec["stars"])
        except (KeyError, TypeError, ValueError) as exc:
            _log.warning("%s:%d: bad review record (%s), skipped", review_file, lineno, exc)
            skipped["reviews"] += 1
            continue
        if not 1.0 <= stars <= 5.0:
            _log.warning("%s:%d: stars %s outside [1,5], skipped", review_file, lineno, stars)
            skipped["reviews"] += 1
            continue
        if uid not in raw_users or bid not in items:
            skipped["dangling_reviews"] += 1
            continue
        stamp = str(rec.get("date") or "")
        order += 1
        key = (uid, bid)
        prev = latest.get(key)
        if prev is None or (stamp, order) >= (prev[0], prev[1]):
            latest[key] = (stamp, order, stars)

    if snapshot is None:
        stamps = [v[0] for v in latest.values() if v[0]]
        snapshot = _parse_date(max(stamps)) if stamps else date.today()

    review_counts = Counter(uid for uid, _ in latest)
    agents = []
    for uid, raw in raw_users.items():
        friends = {f for f in raw["friends"] if f != uid and f in raw_users and uid in raw_users[f]["friends"]}
        if raw["since"] is not None:
            age = max(MIN_ACCOUNT_AGE, (snapshot - raw["since"]).days / 365.25)
        else:
            age = 1.0
        contr = raw["review_count"]
        agents.append(
            Agent(
                agent_id=uid,
                friends=frozenset(friends),
                elite_years=raw["elite"],
                profile_compliments=raw["profile"],
                fans=raw["fans"],
                content_compliments=raw["content"],
                contributions=int(contr) if contr is not None else review_counts[uid],
                account_age_years=age,
            )
        )
    triples = [(uid, bid, v[2]) for (uid, bid), v in latest.items()]
    prov = {"skipped": dict(skipped), "snapshot": snapshot.isoformat(), "parsed_users": len(raw_users)}
    return Dataset.build(agents, items.values(), triples, prov)


# ---------------------------------------------------------------- transforms


def restrict_agents(d: Dataset, keep: Iterable[str]) -> Dataset:
    """Sub-network on ``keep``: their ratings, the items they rated, friendships among them."""
    keep = set(keep)
    agents = [a.with_friends(a.friends & keep) for aid, a in d.agents.items() if aid in keep]
    triples = [(a, t, s) for a, t, s in d.triples() if a in keep]
    item_ids = {t for _, t, _ in triples}
    items = [d.items[t] for t in item_ids]
    return Dataset.build(agents, items, triples, d.provenance)


def filter_by_activity(d: Dataset, min_reviews: int = 20, category: str = "Restaurants") -> Dataset:
    """Keep agents with at least ``min_reviews`` reviews of ``category`` items.

    All reviews of a retained agent are kept, not only the matching ones.
    """
    if min_reviews < 1:
        raise ContractError("min_reviews must be >= 1")
    tagged = {t for t, it in d.items.items() if category in it.categories}
    if not tagged:
        _log.warning("category %r not present on any item; result is empty", category)
        return Dataset.build([], [], [], d.provenance)
    keep = [a for a, row in d.ratings.items() if sum(1 for t in row if t in tagged) >= min_reviews]
    return restrict_agents(d, keep)


def sample_agents(d: Dataset, n: int, seed: int = 0) -> Dataset:
    """Sub-network on ``n`` agents drawn uniformly without replacement.

    Meant for cheap parameter tuning on a slice of a large network; ``n`` at
    or above the agent count returns the network unchanged.
    """
    if n < 1:
        raise ContractError("sample size must be >= 1")
    ids = d.agent_ids
    if n >= len(ids):
        return d
    chosen = np.random.default_rng(seed).choice(len(ids), size=n, replace=False)
    return restrict_agents(d, [ids[k] for k in chosen])


def split_per_user(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, list[Rating]]:
    """Move ``floor(test_fraction * n)`` random ratings of every user to a test list."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for agent_id, row in d.ratings.items():
        items = sorted(row)
        n_test = math.floor(test_fraction * len(items))
        chosen = set(rng.choice(len(items), size=n_test, replace=False).tolist()) if n_test else set()
        for pos, t in enumerate(items):
            (test if pos in chosen else train).append((agent_id, t, row[t]))
    return d.with_ratings(train), test


def make_cv_folds(d: Dataset, folds: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Per-user k-fold partition; users with fewer than ``folds`` ratings stay in train."""
    if folds < 2:
        raise ContractError("folds must be >= 2")
    rng = np.random.default_rng(seed)
    chunks: list[list[Rating]] = [[] for _ in range(folds)]
    always_train: list[Rating] = []
    for agent_id, row in d.ratings.items():
        items = sorted(row)
        if len(items) < folds:
            always_train.extend((agent_id, t, row[t]) for t in items)
            continue
        perm = rng.permutation(len(items))
        for f, part in enumerate(np.array_split(perm, folds)):
            chunks[f].extend((agent_id, items[p], row[items[p]]) for p in sorted(part))
    out = []
    for f in range(folds):
        train = always_train + [r for g in range(folds) if g != f for r in chunks[g]]
        out.append(FoldSplit(f, d.with_ratings(train), chunks[f]))
    return out


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class Summary:
    mean: float
    median: float
    mode: float
    min: float
    max: float

    @classmethod
    def of(cls, values: Iterable[float]) -> Summary:
        arr = np.asarray(list(values), dtype=float)
        if arr.size == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, math.nan)
        counts = Counter(arr.tolist())
        top = max(counts.values())
        mode = min(v for v, c in counts.items() if c == top)
        return cls(float(arr.mean()), float(np.median(arr)), mode, float(arr.min()), float(arr.max()))


def dataset_stats(d: Dataset) -> dict[str, Summary]:
    """Summaries in the shape of the filtered-data statistics table."""
    if not d.agents:
        raise DataError("cannot summarise an empty dataset")
    return {
        "friends_per_user": Summary.of(len(a.friends) for a in d.agents.values()),
        "reviews_per_user": Summary.of(len(row) for row in d.ratings.values()),
        "average_user_rating": Summary.of(d.agent_means.values()),
        "reviews_per_item": Summary.of(len(r) for r in d.item_raters.values()),
        "review_scores": Summary.of(s for _, _, s in d.triples()),
    }


# ---------------------------------------------------------------- writing


def write_dataset(d: Dataset, directory: str | Path) -> None:
    """Write ``d`` as user/review/business JSON-lines files readable by :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    snapshot = date.fromisoformat(str(d.provenance.get("snapshot", "2019-12-31")))
    with open(directory / "user.json", "w", encoding="utf-8") as fh:
        for a in d.agents.values():
            since = date.fromordinal(snapshot.toordinal() - round(a.account_age_years * 365.25))
            rec = {
                "user_id": a.agent_id,
                "friends": sorted(a.friends),
                "elite": [str(2000 + y) for y in range(a.elite_years)],
                "compliment_profile": a.profile_compliments,
                "fans": a.fans,
                "useful": a.content_compliments,
                "review_count": a.contributions,
                "yelping_since": since.isoformat(),
            }
            fh.write(json.dumps(rec) + "\n")
    with open(directory / "business.json", "w", encoding="utf-8") as fh:
        for it in d.items.values():
            fh.write(json.dumps({"business_id": it.item_id, "categories": sorted(it.categories)}) + "\n")
    with open(directory / "review.json", "w", encoding="utf-8") as fh:
        for a, t, s in d.triples():
            fh.write(json.dumps({"user_id": a, "business_id": t, "stars": s, "date": snapshot.isoformat()}) + "\n")


def load_dataset_dir(directory: str | Path) -> Dataset:
    directory = Path(directory)
    return load_dataset(directory / "user.json", directory / "review.json", directory / "business.json")
