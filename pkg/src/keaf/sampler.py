"""Long-tail corpus preparation and multi-label N-way-K-shot episode sampling.

Pipeline: frequency filtering to a fixed point, single-label balancing,
head/tail label split, then per-episode support/query construction with a
shared label counter that admits a support candidate only while one of its
labels is still short of ``k_support``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterator, Sequence

import numpy as np

from .corpus import Corpus, Product, subset
from .errors import DataError, InsufficientDataError

MAX_EPISODE_ATTEMPTS = 100


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_support: int
    k_query: int
    t_lower: int = 0
    t_upper: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_way", "k_support", "k_query"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.t_lower < 0:
            raise ValueError("t_lower must be non-negative")
        if self.t_upper is not None and self.t_upper <= self.t_lower:
            raise ValueError("t_upper must exceed t_lower")

    @property
    def shots(self) -> int:
        return self.k_support + self.k_query


@dataclass(frozen=True)
class Episode:
    """One sampled task. Label vectors index into ``labels``."""

    labels: tuple[str, ...]
    support: tuple[tuple[str, tuple[int, ...]], ...]
    query: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def n_way(self) -> int:
        return len(self.labels)

    @property
    def support_ids(self) -> list[str]:
        return [pid for pid, _ in self.support]

    @property
    def query_ids(self) -> list[str]:
        return [pid for pid, _ in self.query]

    def support_matrix(self) -> np.ndarray:
        return np.array([y for _, y in self.support], dtype=np.float64).reshape(-1, self.n_way)

    def query_matrix(self) -> np.ndarray:
        return np.array([y for _, y in self.query], dtype=np.float64).reshape(-1, self.n_way)

    def to_record(self, episode_id: int | None = None) -> dict[str, Any]:
        rec: dict[str, Any] = {}
        if episode_id is not None:
            rec["episode"] = episode_id
        rec["labels"] = list(self.labels)
        rec["support"] = [{"id": pid, "y": list(y)} for pid, y in self.support]
        rec["query"] = [{"id": pid, "y": list(y)} for pid, y in self.query]
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Episode":
        return cls(
            labels=tuple(rec["labels"]),
            support=tuple((r["id"], tuple(r["y"])) for r in rec["support"]),
            query=tuple((r["id"], tuple(r["y"])) for r in rec["query"]),
        )


@dataclass(frozen=True)
class SplitResult:
    train_corpus: Corpus
    test_corpus: Corpus
    train_labels: frozenset[str]
    test_labels: frozenset[str]


def label_frequencies(products: Sequence[Product]) -> Counter:
    return Counter(lid for p in products for lid in p.labels)


def filter_corpus(corpus: Corpus, t_lower: int, t_upper: int | None) -> Corpus:
    """Drop products carrying out-of-band labels until nothing changes.

    A label survives when ``t_lower < count <= t_upper``; ``t_upper=None``
    means no upper bound.
    """
    if t_lower < 0 or (t_upper is not None and t_upper <= t_lower):
        raise ValueError("thresholds must satisfy t_upper > t_lower >= 0")
    products = list(corpus.products)
    while True:
        freq = label_frequencies(products)
        keep = {
            lid for lid, f in freq.items()
            if f > t_lower and (t_upper is None or f <= t_upper)
        }
        survivors = [p for p in products if all(lid in keep for lid in p.labels)]
        if len(survivors) == len(products):
            break
        products = survivors
    if not products:
        raise DataError("empty result: filtering removed every label")
    return subset(corpus, products)


def balance_corpus(corpus: Corpus, seed: int) -> Corpus:
    """Randomly drop single-label products down to the multi-label count."""
    single = [i for i, p in enumerate(corpus.products) if len(p.labels) == 1]
    n_multi = len(corpus.products) - len(single)
    if n_multi == 0:
        raise DataError("cannot balance a corpus without multi-label products")
    if len(single) <= n_multi:
        return corpus
    rng = np.random.default_rng(seed)
    dropped = set(rng.choice(single, size=len(single) - n_multi, replace=False).tolist())
    return subset(corpus, (p for i, p in enumerate(corpus.products) if i not in dropped))


def split_train_test(
    corpus: Corpus, test_label_fraction: float, seed: int, n_way: int = 1
) -> SplitResult:
    """Frequent (head) labels train, rare (tail) labels test.

    Products touching any test label go to the test side with their train
    labels masked out; train products carry train labels only.
    """
    freq = label_frequencies(corpus.products)
    labels = [lid for lid in corpus.label_index if freq[lid] > 0]
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(labels))
    order = sorted(range(len(labels)), key=lambda i: (-freq[labels[i]], tiebreak[i]))
    ranked = [labels[i] for i in order]
    n_test = math.floor(test_label_fraction * len(ranked) + 0.5)
    n_train = len(ranked) - n_test
    if n_test < max(n_way, 1) or n_train < max(n_way, 1):
        raise DataError(
            f"degenerate split: {n_train} train / {n_test} test labels for n_way={n_way}"
        )
    train_labels = frozenset(ranked[:n_train])
    test_labels = frozenset(ranked[n_train:])

    train_products, test_products = [], []
    for p in corpus.products:
        tail = tuple(lid for lid in p.labels if lid in test_labels)
        if tail:
            if tail != p.labels:
                p = Product(p.id, p.category, p.title, p.description, tail)
            test_products.append(p)
        else:
            train_products.append(p)
    return SplitResult(
        train_corpus=subset(corpus, train_products),
        test_corpus=subset(corpus, test_products),
        train_labels=train_labels,
        test_labels=test_labels,
    )


def eligible_labels(corpus: Corpus, shots: int) -> list[str]:
    return [lid for lid, ids in corpus.label_index.items() if len(ids) >= shots]


def _try_episode(
    corpus: Corpus, labels: list[str], spec: EpisodeSpec, rng: np.random.Generator
) -> Episode | None:
    position = {lid: i for i, lid in enumerate(labels)}
    counts = [0] * len(labels)
    used: set[str] = set()
    support: list[tuple[str, list[int]]] = []
    query: list[str] = []

    for lid in labels:
        pool = [pid for pid in corpus.label_index[lid] if pid not in used]
        if len(pool) < spec.shots:
            return None
        picks = rng.choice(len(pool), size=spec.shots, replace=False)
        for j, idx in enumerate(picks):
            pid = pool[idx]
            hits = [position[x] for x in corpus.by_id[pid].labels if x in position]
            if j < spec.k_query:
                query.append(pid)
                used.add(pid)
            elif any(counts[c] < spec.k_support for c in hits):
                support.append((pid, hits))
                used.add(pid)
                for c in hits:
                    counts[c] += 1

    # Drop redundant support products so that removing any remaining one
    # leaves some label short of k_support.
    kept = []
    for pid, hits in support:
        if all(counts[c] > spec.k_support for c in hits):
            for c in hits:
                counts[c] -= 1
        else:
            kept.append((pid, hits))

    def vector(pid: str) -> tuple[int, ...]:
        own = set(corpus.by_id[pid].labels)
        return tuple(int(lid in own) for lid in labels)

    return Episode(
        labels=tuple(labels),
        support=tuple((pid, vector(pid)) for pid, _ in kept),
        query=tuple((pid, vector(pid)) for pid in query),
    )


def sample_episode(corpus: Corpus, spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    """Sample one multi-label episode.

    Episode labels are drawn uniformly from the labels owning at least
    ``k_support + k_query`` products. Draws whose candidate pool shrinks
    below that size (because of products already taken by earlier labels)
    are rejected and redrawn from the same generator.
    """
    candidates = eligible_labels(corpus, spec.shots)
    if len(candidates) < spec.n_way:
        raise InsufficientDataError(
            f"insufficient data: {len(candidates)} labels have >= {spec.shots} products, "
            f"n_way={spec.n_way}"
        )
    for _ in range(MAX_EPISODE_ATTEMPTS):
        chosen = rng.choice(len(candidates), size=spec.n_way, replace=False)
        episode = _try_episode(corpus, [candidates[i] for i in chosen], spec, rng)
        if episode is not None:
            return episode
    raise InsufficientDataError(
        f"insufficient data: no valid episode after {MAX_EPISODE_ATTEMPTS} attempts"
    )


def sample_episodes(
    corpus: Corpus, spec: EpisodeSpec, count: int, seed: int | None = None
) -> Iterator[Episode]:
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    for _ in range(count):
        yield sample_episode(corpus, spec, rng)


def prepare_corpus(
    corpus: Corpus, spec: EpisodeSpec, balance: bool = True
) -> Corpus:
    """Filter to ``spec.t_lower``/``spec.t_upper``, then optionally balance."""
    out = filter_corpus(corpus, spec.t_lower, spec.t_upper)
    if balance and any(len(p.labels) >= 2 for p in out.products):
        out = balance_corpus(out, spec.seed)
    return out
