"""Synthetic long-tailed multi-label corpora with Gaussian cluster embeddings.

Label frequencies follow a Zipf law over label rank. Every label owns a
Gaussian centre; a product's embedding mixes the centres of its labels plus
isotropic noise, and a label's description embedding is its centre plus a
smaller perturbation. Text fields reuse per-label tokens so the hash encoder
can learn the same structure from text.

``orthogonal=True`` draws mutually orthogonal label centres (needs
``n_labels <= dim``), which makes the task linearly separable up to noise.

With ``pair_rate > 0`` labels are grouped in pairs (0-1, 2-3, ...) and a
product carrying one member of a pair also receives the other with that
probability, so paired labels share most of their support products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, LabelCatalogEntry, Product, build_corpus
from .embedder import NOCAT_SUFFIX, EmbeddingStore


@dataclass
class SyntheticData:
    corpus: Corpus
    vectors: dict[str, np.ndarray]
    dim: int

    def store(self) -> EmbeddingStore:
        return EmbeddingStore(self.dim, self.vectors)


def _label_sets(rng, n_labels, n_products, multilabel, zipf, max_labels, pair_rate):
    weights = 1.0 / np.arange(1, n_labels + 1) ** zipf
    weights /= weights.sum()
    n_multi = int(np.floor(multilabel * n_products + 0.5))
    is_multi = np.zeros(n_products, dtype=bool)
    is_multi[:n_multi] = True
    rng.shuffle(is_multi)
    out = []
    for multi in is_multi:
        size = int(rng.integers(2, max_labels + 1)) if multi else 1
        labels = [int(x) for x in rng.choice(n_labels, size=size, replace=False, p=weights)]
        if pair_rate > 0 and rng.random() < pair_rate:
            partner = labels[0] ^ 1
            if partner < n_labels and partner not in labels:
                if len(labels) >= max_labels:
                    labels[-1] = partner
                else:
                    labels.append(partner)
        out.append(labels)
    return out


def synth_corpus(
    n_labels: int = 30,
    n_products: int = 500,
    multilabel: float = 0.45,
    zipf: float = 1.1,
    max_labels: int = 3,
    dim: int = 32,
    n_categories: int = 5,
    separation: float = 3.0,
    noise: float = 0.5,
    label_noise: float = 0.2,
    category_weight: float = 1.0,
    pair_rate: float = 0.0,
    mix: str = "sum",
    orthogonal: bool = False,
    seed: int = 0,
) -> SyntheticData:
    if n_labels < 1 or n_products < 1 or dim < 1:
        raise ValueError("n_labels, n_products and dim must be positive")
    if not 0.0 <= multilabel <= 1.0:
        raise ValueError("multilabel must lie in [0, 1]")
    if max_labels < 2 and multilabel > 0:
        raise ValueError("multi-label products need max_labels >= 2")
    if max_labels > n_labels:
        raise ValueError("max_labels cannot exceed n_labels")
    if mix not in ("sum", "mean"):
        raise ValueError("mix must be 'sum' or 'mean'")
    n_categories = max(1, min(n_categories, n_labels))
    rng = np.random.default_rng(seed)

    sets = _label_sets(rng, n_labels, n_products, multilabel, zipf, max_labels, pair_rate)
    unit = 1.0 / np.sqrt(dim)
    centres = rng.normal(0.0, separation * unit, size=(n_labels, dim))
    if orthogonal:
        if n_labels > dim:
            raise ValueError("orthogonal centres need n_labels <= dim")
        q, _ = np.linalg.qr(centres.T)
        centres = separation * q.T
    cat_centres = rng.normal(0.0, separation * unit, size=(n_categories, dim))

    label_ids = [f"L{l:03d}" for l in range(n_labels)]
    catalog = []
    vectors: dict[str, np.ndarray] = {}
    for l, lid in enumerate(label_ids):
        cat = l % n_categories
        words = " ".join(f"w{l}_{k}" for k in range(3))
        catalog.append(LabelCatalogEntry(lid, f"attr{cat}", f"v{l}", f"attr{cat} is v{l} {words}"))
        vectors[lid] = centres[l] + rng.normal(0.0, label_noise * unit, size=dim)

    products = []
    for i, labels in enumerate(sets):
        pid = f"p{i:05d}"
        cat = labels[0] % n_categories
        title = []
        desc = []
        for l in labels:
            title += [f"v{l}", f"w{l}_{int(rng.integers(3))}"]
            desc.append(f"w{l}_{int(rng.integers(3))}")
        title += [f"f{int(x)}" for x in rng.integers(200, size=2)]
        desc += [f"f{int(x)}" for x in rng.integers(200, size=5)]
        products.append(
            Product(pid, f"cat{cat}", " ".join(title), " ".join(desc),
                    tuple(label_ids[l] for l in labels))
        )
        content = centres[labels].sum(axis=0)
        if mix == "mean":
            content /= len(labels)
        content = content + rng.normal(0.0, noise * unit, size=dim)
        vectors[pid] = content + category_weight * cat_centres[cat]
        vectors[pid + NOCAT_SUFFIX] = content

    return SyntheticData(build_corpus(products, catalog), vectors, dim)
