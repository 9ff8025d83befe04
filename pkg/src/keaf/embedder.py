"""Embedding providers for products and label descriptions.

Two interchangeable providers:

``EmbeddingStore``
    Precomputed vectors read from the binary store format (little-endian)::

        b"KEAF" | u32 version=1 | u32 dim | u64 count
        count x ( u32 key_len | key bytes (UTF-8) | dim x f32 )

    Products are keyed by product id, labels by label id. With the category
    ablation the product key is ``"<id>#nocat"``.

``HashEncoder``
    Lowercased whitespace tokens hashed (64-bit BLAKE2b) into a bucket table;
    a text embeds as the mean of its bucket rows. The table is trainable.
"""
from __future__ import annotations

import hashlib
import struct
from functools import lru_cache
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .corpus import LabelCatalogEntry, Product
from .errors import DataError

STORE_MAGIC = b"KEAF"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_KEYLEN = struct.Struct("<I")

SEP = "[SEP]"
NOCAT_SUFFIX = "#nocat"


def product_text(product: Product, use_category: bool = True) -> str:
    """``category [SEP] title [SEP] description``, skipping empty fields."""
    fields = [product.title, product.description]
    if use_category:
        fields.insert(0, product.category)
    return f" {SEP} ".join(f for f in fields if f.strip())


class EmbeddingStore:
    kind = "precomputed-store"
    trainable = False

    def __init__(self, dim: int, vectors: Mapping[str, np.ndarray] | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        for key, vec in (vectors or {}).items():
            self.add(key, vec)

    def add(self, key: str, vec) -> None:
        arr = np.asarray(vec, dtype=np.float32).reshape(-1)
        if arr.shape[0] != self.dim:
            raise DataError(f"vector for {key!r} has dim {arr.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"vector for {key!r} has non-finite entries")
        self._vectors[key] = arr

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, key: str) -> bool:
        return key in self._vectors

    def keys(self):
        return self._vectors.keys()

    def vector(self, key: str) -> np.ndarray:
        try:
            return self._vectors[key]
        except KeyError:
            raise DataError(f"embedding store has no key {key!r}") from None

    # provider protocol: resolve -> handle, lookup(handles) -> matrix
    def resolve_product(self, product: Product, use_category: bool = True) -> str:
        return product.id if use_category else product.id + NOCAT_SUFFIX

    def resolve_label(self, entry: LabelCatalogEntry) -> str:
        return entry.id

    def lookup(self, handles: Sequence[Hashable]) -> np.ndarray:
        out = np.empty((len(handles), self.dim))
        for i, key in enumerate(handles):
            out[i] = self.vector(key)
        return out


@lru_cache(maxsize=1 << 16)
def token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class HashEncoder:
    kind = "hash-encoder"

    def __init__(
        self,
        dim: int,
        n_buckets: int = 1 << 15,
        seed: int = 0,
        trainable: bool = True,
        table: np.ndarray | None = None,
    ):
        if dim < 1 or n_buckets < 1:
            raise ValueError("dim and n_buckets must be positive")
        self.dim = dim
        self.n_buckets = n_buckets
        self.trainable = trainable
        if table is None:
            rng = np.random.default_rng(seed)
            table = rng.uniform(-0.05, 0.05, size=(n_buckets, dim))
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (n_buckets, dim):
            raise ValueError(f"table shape {table.shape} != ({n_buckets}, {dim})")
        self.table = table

    def buckets(self, text: str) -> tuple[int, ...]:
        ids = tuple(token_hash(tok) % self.n_buckets for tok in tokenize(text))
        if not ids:
            raise DataError(f"no tokens to embed in {text!r}")
        return ids

    def embed_text(self, text: str) -> np.ndarray:
        return self.table[list(self.buckets(text))].mean(axis=0)

    def resolve_product(self, product: Product, use_category: bool = True) -> tuple[int, ...]:
        return self.buckets(product_text(product, use_category))

    def resolve_label(self, entry: LabelCatalogEntry) -> tuple[int, ...]:
        return self.buckets(entry.description)

    def lookup(self, handles: Sequence[tuple[int, ...]]) -> np.ndarray:
        out = np.empty((len(handles), self.dim))
        for i, ids in enumerate(handles):
            out[i] = self.table[list(ids)].mean(axis=0)
        return out

    def table_grad(self, handles: Sequence[tuple[int, ...]], grad: np.ndarray) -> np.ndarray:
        """Scatter row gradients of ``lookup(handles)`` back onto the table."""
        g = np.zeros_like(self.table)
        for ids, row in zip(handles, grad):
            np.add.at(g, list(ids), row / len(ids))
        return g


def embed_product(provider, product: Product, use_category: bool = True) -> np.ndarray:
    return provider.lookup([provider.resolve_product(product, use_category)])[0]


def embed_label(provider, entry: LabelCatalogEntry) -> np.ndarray:
    return provider.lookup([provider.resolve_label(entry)])[0]


def write_embedding_store(path: str | Path, vectors: Mapping[str, np.ndarray], dim: int) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(STORE_MAGIC, STORE_VERSION, dim, len(vectors)))
        for key, vec in vectors.items():
            arr = np.asarray(vec, dtype="<f4").reshape(-1)
            if arr.shape[0] != dim:
                raise DataError(f"vector for {key!r} has dim {arr.shape[0]}, expected {dim}")
            raw = key.encode("utf-8")
            f.write(_KEYLEN.pack(len(raw)))
            f.write(raw)
            f.write(arr.tobytes())


def load_embedding_store(path: str | Path) -> EmbeddingStore:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated header at offset 0")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != STORE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at offset 0")
    if version != STORE_VERSION:
        raise DataError(f"{path}: unsupported version {version} at offset 4")
    if dim == 0:
        raise DataError(f"{path}: zero dim at offset 8")
    store = EmbeddingStore(dim)
    vec_bytes = 4 * dim
    offset = _HEADER.size
    for _ in range(count):
        if offset + _KEYLEN.size > len(data):
            raise DataError(f"{path}: truncated record at offset {offset}")
        (klen,) = _KEYLEN.unpack_from(data, offset)
        end = offset + _KEYLEN.size + klen + vec_bytes
        if end > len(data):
            raise DataError(f"{path}: truncated record at offset {offset}")
        kstart = offset + _KEYLEN.size
        try:
            key = data[kstart:kstart + klen].decode("utf-8")
        except UnicodeDecodeError:
            raise DataError(f"{path}: invalid UTF-8 key at offset {kstart}") from None
        if key in store:
            raise DataError(f"{path}: duplicate key {key!r} at offset {offset}")
        store.add(key, np.frombuffer(data, dtype="<f4", count=dim, offset=kstart + klen))
        offset = end
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing bytes at offset {offset}")
    return store
