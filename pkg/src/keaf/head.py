"""Label-enhanced prototype head with hybrid attention.

Pipeline per episode: tanh projection of product and label embeddings,
prototypes interpolated between the label embedding and the support mean,
cosine scaling against the label embedding, query-conditioned softmax
weighting over classes, then distance logits ``q = -scale * d`` scored with
sigmoid BCE.

The single-vector functions here (``project`` ... ``bce_loss``) are the
readable reference path. ``forward_episode`` / ``grad_episode`` run the
batched kernel selected in ``keaf.backend``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import backend
from .corpus import Corpus
from .errors import DataError, NumericalError
from .sampler import Episode

DISTANCES = ("sqeuclidean", "cosine")


@dataclass
class HeadParams:
    W: np.ndarray
    b: np.ndarray
    L: np.ndarray
    eta: float = 0.5
    distance: str = "sqeuclidean"
    scale: float | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.L = np.asarray(self.L, dtype=np.float64)
        if self.W.ndim != 2 or self.L.ndim != 2:
            raise ValueError("W and L must be matrices")
        if self.b.shape[0] != self.W.shape[0] or self.L.shape[1] != self.W.shape[0]:
            raise ValueError(
                f"inconsistent shapes W{self.W.shape} b{self.b.shape} L{self.L.shape}"
            )
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.scale is None:
            self.scale = 1.0 / np.sqrt(self.dim_out)
        if not self.scale > 0:
            raise ValueError("logit scale must be positive")

    @property
    def dim_in(self) -> int:
        return self.W.shape[1]

    @property
    def dim_out(self) -> int:
        return self.W.shape[0]

    @property
    def dim_att(self) -> int:
        return self.L.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "L": self.L}

    def copy(self) -> "HeadParams":
        return replace(self, W=self.W.copy(), b=self.b.copy(), L=self.L.copy())


def init_params(
    dim_in: int,
    dim_out: int | None = None,
    dim_att: int | None = None,
    eta: float = 0.5,
    distance: str = "sqeuclidean",
    scale: float | None = None,
    seed: int = 0,
    init: str = "orthogonal",
) -> HeadParams:
    """Initial head parameters.

    ``"orthogonal"`` draws W with orthonormal rows (or columns) and zero bias,
    so the projection starts close to an isometry; ``"uniform"`` is the
    fan-in scheme of a default linear layer. L is always fan-in uniform.
    """
    dim_out = dim_out or dim_in
    dim_att = dim_att or dim_out
    rng = np.random.default_rng(seed)
    a = 1.0 / np.sqrt(dim_in)
    c = 1.0 / np.sqrt(dim_out)
    if init == "orthogonal":
        big, small = max(dim_out, dim_in), min(dim_out, dim_in)
        q, r = np.linalg.qr(rng.normal(size=(big, small)))
        q *= np.sign(np.diag(r))
        W = q if dim_out >= dim_in else q.T
        b = np.zeros(dim_out)
    elif init == "uniform":
        W = rng.uniform(-a, a, size=(dim_out, dim_in))
        b = rng.uniform(-a, a, size=dim_out)
    else:
        raise ValueError(f"unknown init {init!r}")
    return HeadParams(
        W=W,
        b=b,
        L=rng.uniform(-c, c, size=(dim_att, dim_out)),
        eta=eta,
        distance=distance,
        scale=scale,
    )


@dataclass(frozen=True)
class Ablation:
    """Which components are switched on. ``Ablation()`` is the full model."""

    anchor: bool = True
    attention: bool = True
    category: bool = True
    threshold: bool = True

    AXES = ("anchor", "attention", "category", "threshold")

    @classmethod
    def without(cls, *names: str) -> "Ablation":
        unknown = set(names) - set(cls.AXES)
        if unknown:
            raise ValueError(f"unknown ablation axes {sorted(unknown)}")
        return cls(**{n: n not in names for n in cls.AXES})

    @classmethod
    def all_combinations(cls) -> list["Ablation"]:
        return [cls(*bits) for bits in itertools.product((True, False), repeat=4)]

    @property
    def disabled(self) -> tuple[str, ...]:
        return tuple(n for n in self.AXES if not getattr(self, n))


# ---------------------------------------------------------------- reference ops

def project(params: HeadParams, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.dim_in:
        raise ValueError(f"dimension mismatch: got {v.shape[-1]}, expected {params.dim_in}")
    return np.tanh(v @ params.W.T + params.b)


def label_enhanced_prototype(label_vec, support_vecs: Sequence, eta: float) -> np.ndarray:
    if len(support_vecs) == 0:
        raise ValueError("prototype needs at least one support vector")
    label_vec = np.asarray(label_vec, dtype=np.float64)
    support = np.asarray(support_vecs, dtype=np.float64)
    if support.shape[1:] != label_vec.shape:
        raise ValueError("dimension mismatch between label and support vectors")
    return eta * label_vec + (1.0 - eta) * support.mean(axis=0)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise NumericalError("cosine similarity undefined for a zero vector")
    return float(u @ v / (nu * nv))


def label_similarity_scale(proto, label_vec) -> tuple[float, np.ndarray]:
    alpha = cosine(proto, label_vec)
    return alpha, alpha * np.asarray(proto, dtype=np.float64)


def query_attention(scaled_protos: Sequence, query_vec, L) -> tuple[np.ndarray, np.ndarray]:
    protos = np.asarray(scaled_protos, dtype=np.float64)
    query_vec = np.asarray(query_vec, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if protos.ndim != 2 or len(protos) == 0:
        raise ValueError("need at least one prototype")
    if protos.shape[1] != L.shape[1] or query_vec.shape[0] != L.shape[1]:
        raise ValueError("dimension mismatch")
    scores = (protos @ L.T) @ (L @ query_vec)
    e = np.exp(scores - scores.max())
    beta = e / e.sum()
    return beta, beta[:, None] * protos


def distance(u, v, kind: str) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if kind == "sqeuclidean":
        return float(np.sum((u - v) ** 2))
    if kind == "cosine":
        return 1.0 - cosine(u, v)
    raise ValueError(f"unknown distance {kind!r}")


def query_logits(final_protos: Sequence, query_vec, params: HeadParams) -> tuple[np.ndarray, np.ndarray]:
    d = np.array([distance(p, query_vec, params.distance) for p in final_protos])
    return d, -params.scale * d


def bce_loss(logits, targets) -> float:
    """Summed over classes, averaged over queries, in softplus form."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if logits.shape != targets.shape:
        raise ValueError("logits and targets shapes differ")
    return float(np.sum(np.logaddexp(0.0, logits) - targets * logits) / logits.shape[0])


# ----------------------------------------------------------------- batched path

@dataclass
class EpisodeInputs:
    handles: list
    ys: np.ndarray
    yq: np.ndarray

    @property
    def n_support(self) -> int:
        return self.ys.shape[0]

    @property
    def n_query(self) -> int:
        return self.yq.shape[0]


def episode_inputs(provider, corpus: Corpus, episode: Episode, use_category: bool = True) -> EpisodeInputs:
    try:
        handles = [
            provider.resolve_product(corpus.by_id[pid], use_category)
            for pid in episode.support_ids + episode.query_ids
        ]
        handles += [provider.resolve_label(corpus.labels_by_id[lid]) for lid in episode.labels]
    except KeyError as exc:
        raise DataError(f"episode references {exc.args[0]!r}, absent from the corpus") from None
    return EpisodeInputs(handles, episode.support_matrix(), episode.query_matrix())


@dataclass
class EpisodeForward:
    support: np.ndarray
    query: np.ndarray
    labels: np.ndarray
    prototypes: np.ndarray
    alpha: np.ndarray
    scaled: np.ndarray
    beta: np.ndarray
    final: np.ndarray
    distances: np.ndarray
    logits: np.ndarray
    loss: float


@dataclass
class Gradients:
    W: np.ndarray
    b: np.ndarray
    L: np.ndarray
    table: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"W": self.W, "b": self.b, "L": self.L}
        if self.table is not None:
            out["table"] = self.table
        return out


@dataclass
class _Cache:
    X: np.ndarray
    R: np.ndarray
    mask: np.ndarray | None
    raw: dict = field(repr=False)


def _run(params, provider, inputs, flags, dropout, rng, want_grad, kernel):
    X = provider.lookup(inputs.handles)
    if X.shape[1] != params.dim_in:
        raise DataError(f"provider dim {X.shape[1]} != head input dim {params.dim_in}")
    mask = None
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs a random generator")
        mask = (rng.random(X.shape) >= dropout) / (1.0 - dropout)
        X = X * mask
    R = np.tanh(X @ params.W.T + params.b)
    s, q = inputs.n_support, inputs.n_query
    kernel = kernel or backend.head_kernel
    try:
        raw = kernel(
            R[:s], R[s:s + q], R[s + q:], inputs.ys, inputs.yq, params.L,
            params.eta if flags.anchor else 0.0,
            params.distance == "cosine", params.scale, flags.attention, want_grad,
        )
    except ValueError as exc:
        raise NumericalError(str(exc)) from None
    fwd = EpisodeForward(
        support=R[:s], query=R[s:s + q], labels=R[s + q:],
        prototypes=raw["protos"], alpha=raw["alpha"], scaled=raw["scaled"],
        beta=raw["beta"], final=raw["final"], distances=raw["dist"],
        logits=raw["logits"], loss=raw["loss"],
    )
    return fwd, _Cache(X, R, mask, raw)


def forward_episode(
    params: HeadParams,
    provider,
    corpus: Corpus,
    episode: Episode,
    flags: Ablation = Ablation(),
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    kernel=None,
) -> EpisodeForward:
    inputs = episode_inputs(provider, corpus, episode, flags.category)
    return _run(params, provider, inputs, flags, dropout, rng, False, kernel)[0]


def backward_inputs(params, provider, inputs, flags, dropout=0.0, rng=None, kernel=None, loss_scale=1.0):
    """Forward plus gradients on prebuilt ``EpisodeInputs`` (training hot path)."""
    fwd, cache = _run(params, provider, inputs, flags, dropout, rng, True, kernel)
    raw = cache.raw
    g_R = np.vstack([raw["g_rs"], raw["g_rq"], raw["g_rl"]]) * loss_scale
    g_pre = g_R * (1.0 - cache.R**2)
    grads = Gradients(
        W=g_pre.T @ cache.X,
        b=g_pre.sum(axis=0),
        L=raw["g_lin"] * loss_scale,
    )
    if getattr(provider, "trainable", False):
        g_X = g_pre @ params.W
        if cache.mask is not None:
            g_X *= cache.mask
        grads.table = provider.table_grad(inputs.handles, g_X)
    return fwd, grads


def grad_episode(
    params: HeadParams,
    provider,
    corpus: Corpus,
    episode: Episode,
    flags: Ablation = Ablation(),
    *,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    kernel=None,
    loss_scale: float = 1.0,
) -> tuple[EpisodeForward, Gradients]:
    """Exact gradients of ``loss_scale * mean BCE`` for every trainable tensor.

    Targets are the episode's query label vectors.
    """
    inputs = episode_inputs(provider, corpus, episode, flags.category)
    return backward_inputs(params, provider, inputs, flags, dropout, rng, kernel, loss_scale)
