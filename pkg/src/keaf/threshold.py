"""Dynamic multi-label decision threshold.

Per episode, the threshold is the label-count-weighted query-to-prototype
distance over the support set, normalised by ``N * K``; a running value is
kept as an exponential moving average and candidates are scored on
evaluation episodes. At inference a class is predicted iff its distance is
strictly below the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError
from .sampler import Episode


def estimate_label_count(support: Sequence[tuple[str, Sequence[int]]]) -> float:
    """Mean number of episode labels per support instance."""
    if not support:
        raise DataError("empty support set")
    return float(np.mean([sum(y) for _, y in support]))


def compute_threshold(episode: Episode, forward, k_support: int | None = None) -> float:
    """Episode threshold from support label counts and query distances.

    Each support instance contributes its label count times the distance
    between its positive classes' final prototypes and the queries, averaged
    over those classes and over all queries. ``k_support`` defaults to the
    support size divided by ``N`` when not given.

    ``forward`` is an ``EpisodeForward`` or its (queries, N) distance matrix.
    """
    if not episode.support:
        raise DataError("empty support set")
    distances = np.asarray(getattr(forward, "distances", forward), dtype=np.float64)
    n_way = episode.n_way
    if distances.ndim != 2 or distances.shape[1] != n_way:
        raise ValueError("distances must be a (queries, N) matrix")
    if k_support is None:
        k_support = max(1, round(len(episode.support) / n_way))
    per_class = distances.mean(axis=0)
    total = 0.0
    for _, y in episode.support:
        positives = [j for j, bit in enumerate(y) if bit]
        if positives:
            total += len(positives) * float(np.mean(per_class[positives]))
    return total / (n_way * k_support)


def infer_labels(distances: Sequence[float], tau: float) -> set[int]:
    """Indices of classes whose distance lies strictly below ``tau``."""
    if not np.isfinite(tau):
        raise ValueError("threshold must be finite")
    return {i for i, d in enumerate(distances) if d < tau}


def select_test_threshold(history: Sequence[tuple[float, float]]) -> float:
    """Candidate with the best evaluation micro-F1; ties go to the smaller one."""
    if not history:
        raise DataError("empty threshold history")
    best_tau, best_f1 = history[0]
    for tau, f1 in history[1:]:
        if f1 > best_f1 or (f1 == best_f1 and tau < best_tau):
            best_tau, best_f1 = tau, f1
    return best_tau


@dataclass
class ThresholdState:
    decay: float = 0.9
    current: float | None = None
    history: list[tuple[float, float]] = field(default_factory=list)
    selected: float | None = None

    def update(self, episode_tau: float) -> float:
        if self.current is None:
            self.current = episode_tau
        else:
            self.current = self.decay * self.current + (1.0 - self.decay) * episode_tau
        return self.current

    def record(self, tau: float, micro_f1: float) -> None:
        self.history.append((tau, micro_f1))
        self.selected = select_test_threshold(self.history)
