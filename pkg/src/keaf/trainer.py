"""Episodic training, evaluation, eta grid and ablation sweeps."""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .checkpoint import quantize
from .corpus import Corpus
from .embedder import HashEncoder
from .errors import DataError, NumericalError
from .head import (
    Ablation,
    HeadParams,
    backward_inputs,
    episode_inputs,
    forward_episode,
    init_params,
)
from .metrics import EvalReport
from .sampler import EpisodeSpec, sample_episode
from .threshold import ThresholdState, compute_threshold, infer_labels, select_test_threshold

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_way: int = 5
    k_support: int = 1
    k_query: int = 3
    eta: float | list = 0.5
    learning_rate: float | None = None  # 1e-5, or 1e-3 with the hash encoder
    weight_decay: float = 1e-6
    dropout: float = 0.2
    dim: int = 768
    dim_out: int | None = None
    dim_att: int | None = None
    episodes_per_epoch: int = 100
    epochs: int = 10
    eval_episodes: int = 100
    eval_interval: int = 1
    patience: int = 10
    seed: int = 0
    distance: str = "sqeuclidean"
    logit_scale: float | None = None
    ema_decay: float = 0.9
    fixed_threshold: float = 1.0
    no_anchor: bool = False
    no_attention: bool = False
    no_category: bool = False
    no_threshold: bool = False
    t_lower: int = 0
    t_upper: int | None = None
    test_fraction: float = 0.3
    balance: bool = False
    encoder: str = "store"
    hash_buckets: int = 4096
    train_encoder: bool = True
    init: str = "orthogonal"

    def __post_init__(self):
        for name in ("n_way", "k_support", "k_query", "dim", "eval_interval", "patience", "hash_buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("episodes_per_epoch", "epochs", "eval_episodes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.learning_rate is None:
            self.learning_rate = 1e-3 if self.encoder == "hash" else 1e-5
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.encoder not in ("store", "hash"):
            raise ValueError("encoder must be 'store' or 'hash'")
        if self.init not in ("orthogonal", "uniform"):
            raise ValueError("init must be 'orthogonal' or 'uniform'")

    @property
    def flags(self) -> Ablation:
        return Ablation(
            anchor=not self.no_anchor,
            attention=not self.no_attention,
            category=not self.no_category,
            threshold=not self.no_threshold,
        )

    @property
    def episode_spec(self) -> EpisodeSpec:
        return EpisodeSpec(self.n_way, self.k_support, self.k_query, self.t_lower, self.t_upper, self.seed)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise DataError(f"{path}: config must be a flat key-value object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class AdamW:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(self, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class TrainingDiverged(NumericalError):
    def __init__(self, message: str, state: dict[str, Any]):
        super().__init__(message)
        self.state = state


@dataclass
class TrainResult:
    params: HeadParams
    provider: Any
    history: list[tuple[float, float]]
    log: list[dict[str, Any]]
    flags: Ablation
    best_eval: dict[str, Any] | None = None
    steps: int = 0

    @property
    def tau_star(self) -> float:
        return select_test_threshold(self.history)

    def log_lines(self) -> list[str]:
        return [json.dumps(rec, sort_keys=True) for rec in self.log]


def make_provider(config: TrainConfig, store=None):
    """The configured embedding provider (the store is passed in when used)."""
    if config.encoder == "hash":
        return HashEncoder(
            config.dim, config.hash_buckets, seed=config.seed, trainable=config.train_encoder
        )
    if store is None:
        raise DataError("encoder 'store' needs an embedding store")
    if store.dim != config.dim:
        raise DataError(f"embedding store dim {store.dim} != config dim {config.dim}")
    return store


def _predict(distances: np.ndarray, tau: float, labels: Sequence[str]) -> list[set[str]]:
    return [{labels[i] for i in infer_labels(row, tau)} for row in distances]


def evaluate(
    params: HeadParams,
    tau: float,
    corpus: Corpus,
    provider,
    spec: EpisodeSpec,
    episodes: int,
    seed: int,
    flags: Ablation = Ablation(),
) -> EvalReport:
    """Sample ``episodes`` test episodes and score thresholded predictions."""
    rng = np.random.default_rng(seed)
    report = EvalReport()
    for _ in range(episodes):
        episode = sample_episode(corpus, spec, rng)
        fwd = forward_episode(params, provider, corpus, episode, flags)
        for (pid, y), predicted in zip(episode.query, _predict(fwd.distances, tau, episode.labels)):
            gold = {lid for lid, bit in zip(episode.labels, y) if bit}
            report.accumulate(predicted, gold, episode.labels)
        report.episodes += 1
    return report


def _snapshot(params: HeadParams, provider):
    table = provider.table.copy() if getattr(provider, "trainable", False) else None
    return params.copy(), table


def train(
    config: TrainConfig,
    train_corpus: Corpus,
    eval_corpus: Corpus,
    provider,
    on_record: Callable[[dict[str, Any]], None] | None = None,
) -> TrainResult:
    """Episodic training with per-episode AdamW steps.

    The returned parameters (and trained encoder table) are those of the best
    evaluation, rounded to float32 so a saved checkpoint reloads exactly.
    """
    if isinstance(config.eta, (list, tuple)):
        raise ValueError("train() takes a single eta; use train_eta_grid for a list")
    overlap = set(train_corpus.used_labels) & set(eval_corpus.used_labels)
    if overlap:
        raise DataError(f"train and eval corpora share labels: {sorted(overlap)[:5]}")
    if provider.dim != config.dim:
        raise DataError(f"provider dim {provider.dim} != config dim {config.dim}")
    if getattr(provider, "trainable", False):
        provider = copy.deepcopy(provider)

    flags = config.flags
    spec = config.episode_spec
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    params = init_params(
        config.dim, config.dim_out, config.dim_att, eta=float(config.eta),
        distance=config.distance, scale=config.logit_scale, seed=int(seeds[0]),
        init=config.init,
    )
    sample_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    eval_seed = int(seeds[3])
    optimizer = AdamW(config.learning_rate, config.weight_decay)
    threshold = ThresholdState(decay=config.ema_decay)
    records: list[dict[str, Any]] = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    best = None
    best_key = None
    stale = 0
    step = 0
    trainable = getattr(provider, "trainable", False)

    for epoch in range(config.epochs):
        for _ in range(config.episodes_per_epoch):
            episode = sample_episode(train_corpus, spec, sample_rng)
            inputs = episode_inputs(provider, train_corpus, episode, flags.category)
            fwd, grads = backward_inputs(
                params, provider, inputs, flags, config.dropout, dropout_rng
            )
            if not np.isfinite(fwd.loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {step}",
                    {"step": step, "epoch": epoch, "episode": episode.to_record(),
                     "params": params.arrays(), "optimizer_t": optimizer.t},
                )
            tau_episode = compute_threshold(episode, fwd, spec.k_support)
            tau_ema = threshold.update(tau_episode)
            arrays = params.arrays()
            if trainable:
                arrays["table"] = provider.table
            optimizer.step(arrays, grads.arrays())
            step += 1
            emit({"step": step, "epoch": epoch, "loss": fwd.loss,
                  "tau_episode": tau_episode, "tau_ema": tau_ema})

        if (epoch + 1) % config.eval_interval and epoch + 1 != config.epochs:
            continue
        if config.eval_episodes == 0 or threshold.current is None:
            continue
        tau = threshold.current if flags.threshold else config.fixed_threshold
        report = evaluate(params, tau, eval_corpus, provider, spec, config.eval_episodes, eval_seed, flags)
        scores = report.finalize()
        threshold.record(tau, scores["mic_f1"])
        emit({"step": step, "epoch": epoch, "eval": scores, "tau": tau})
        log.info("epoch %d step %d tau %.4f mic-F1 %.4f", epoch, step, tau, scores["mic_f1"])

        key = (scores["mic_f1"], -tau)
        if best_key is None or key > best_key:
            best_key = key
            best = (_snapshot(params, provider), scores)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after %d stale evaluations", stale)
                break

    if best is not None:
        (params, table), best_scores = best
        if table is not None:
            provider.table = table
    else:
        best_scores = None
    params.W, params.b, params.L = quantize(params.W), quantize(params.b), quantize(params.L)
    if trainable:
        provider.table = quantize(provider.table)
    return TrainResult(params, provider, threshold.history, records, flags, best_scores, step)


def train_eta_grid(
    config: TrainConfig,
    train_corpus: Corpus,
    eval_corpus: Corpus,
    provider,
    etas: Iterable[float] | None = None,
) -> tuple[float, TrainResult]:
    """Train once per eta and keep the run with the best evaluation micro-F1."""
    if etas is None:
        etas = config.eta if isinstance(config.eta, (list, tuple)) else (0.1, 0.5, 1.0)
    best = None
    for eta in etas:
        result = train(replace(config, eta=float(eta)), train_corpus, eval_corpus, provider)
        score = result.best_eval["mic_f1"] if result.best_eval else -1.0
        if best is None or score > best[0]:
            best = (score, float(eta), result)
    if best is None:
        raise ValueError("empty eta grid")
    return best[1], best[2]


ABLATIONS = (
    ("w/o anchor weight", "no_anchor"),
    ("w/o threshold", "no_threshold"),
    ("w/o category", "no_category"),
    ("w/o attention", "no_attention"),
    ("KEAF (All)", None),
)


def result_threshold(config: TrainConfig, result: TrainResult) -> float:
    return result.tau_star if config.flags.threshold else config.fixed_threshold


def run_ablation(
    config: TrainConfig,
    train_corpus: Corpus,
    test_corpus: Corpus,
    provider,
    seeds: Sequence[int],
    test_episodes: int = 200,
    eval_corpus: Corpus | None = None,
    axes=ABLATIONS,
) -> list[tuple[str, dict[str, Any]]]:
    """Mean test scores per ablation row, each averaged over ``seeds``."""
    eval_corpus = eval_corpus if eval_corpus is not None else test_corpus
    rows = []
    for name, flag in axes:
        per_seed = []
        for seed in seeds:
            cfg = replace(config, seed=seed, **({flag: True} if flag else {}))
            result = train(cfg, train_corpus, eval_corpus, provider)
            report = evaluate(
                result.params, result_threshold(cfg, result), test_corpus, result.provider,
                cfg.episode_spec, test_episodes, seed=10_000 + seed, flags=cfg.flags,
            )
            per_seed.append(report.finalize())
        mean = {k: float(np.mean([s[k] for s in per_seed])) for k in per_seed[0]}
        mean["seeds"] = list(seeds)
        rows.append((name, mean))
    return rows
