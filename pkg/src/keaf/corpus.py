"""Product corpus and label catalog: loading, validation, indexing, statistics."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import DataError


@dataclass(frozen=True)
class Product:
    id: str
    category: str
    title: str
    description: str
    labels: tuple[str, ...]

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "category": self.category,
            "title": self.title,
            "description": self.description,
            "labels": list(self.labels),
        }


@dataclass(frozen=True)
class LabelCatalogEntry:
    id: str
    attribute: str
    value: str
    description: str

    @property
    def name(self) -> str:
        return f"{self.attribute}: {self.value}"

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "attribute": self.attribute,
            "value": self.value,
            "description": self.description,
        }


@dataclass(frozen=True)
class Corpus:
    """Immutable, validated corpus.

    ``label_index`` maps every catalog label id to the ids of the products
    carrying it, in corpus order (possibly empty).
    """

    products: tuple[Product, ...]
    catalog: tuple[LabelCatalogEntry, ...]
    label_index: Mapping[str, tuple[str, ...]] = field(repr=False)

    @cached_property
    def by_id(self) -> dict[str, Product]:
        return {p.id: p for p in self.products}

    @cached_property
    def labels_by_id(self) -> dict[str, LabelCatalogEntry]:
        return {e.id: e for e in self.catalog}

    @property
    def used_labels(self) -> list[str]:
        """Catalog label ids referenced by at least one product, catalog order."""
        return [lid for lid, ids in self.label_index.items() if ids]

    def __len__(self) -> int:
        return len(self.products)


@dataclass(frozen=True)
class CorpusStats:
    histogram: dict[str, int]
    total_instances: int
    multilabel_percentage: float
    n_labels: int
    mean_labels_per_product: float

    def to_record(self) -> dict[str, Any]:
        return {
            "total_instances": self.total_instances,
            "n_labels": self.n_labels,
            "multilabel_percentage": self.multilabel_percentage,
            "mean_labels_per_product": self.mean_labels_per_product,
            "histogram": dict(self.histogram),
        }

    def format(self) -> str:
        lines = [
            f"instances             {self.total_instances}",
            f"labels (in use)       {self.n_labels}",
            f"multi-label           {100 * self.multilabel_percentage:.2f}%",
            f"mean labels/product   {self.mean_labels_per_product:.3f}",
            "",
            "label                 count",
        ]
        for lid, count in sorted(self.histogram.items(), key=lambda kv: (-kv[1], kv[0])):
            lines.append(f"{lid:<20}  {count}")
        return "\n".join(lines)


def build_corpus(
    products: Iterable[Product], catalog: Iterable[LabelCatalogEntry]
) -> Corpus:
    """Validate products against the catalog and build the label index."""
    catalog = tuple(catalog)
    index: dict[str, list[str]] = {}
    pairs: set[tuple[str, str]] = set()
    for entry in catalog:
        if entry.id in index:
            raise DataError(f"duplicate label id {entry.id!r} in catalog")
        if (entry.attribute, entry.value) in pairs:
            raise DataError(
                f"duplicate attribute-value pair ({entry.attribute!r}, {entry.value!r})"
            )
        if not entry.description:
            raise DataError(f"label {entry.id!r} has an empty description")
        pairs.add((entry.attribute, entry.value))
        index[entry.id] = []

    checked = []
    seen: set[str] = set()
    for p in products:
        if p.id in seen:
            raise DataError(f"duplicate product id {p.id!r}")
        seen.add(p.id)
        if not p.labels:
            raise DataError(f"product {p.id!r} has no labels")
        labels = tuple(dict.fromkeys(p.labels))
        for lid in labels:
            if lid not in index:
                raise DataError(f"product {p.id!r} references unknown label id {lid!r}")
            index[lid].append(p.id)
        if labels != p.labels:
            p = Product(p.id, p.category, p.title, p.description, labels)
        checked.append(p)

    return Corpus(
        products=tuple(checked),
        catalog=catalog,
        label_index={lid: tuple(ids) for lid, ids in index.items()},
    )


def subset(corpus: Corpus, products: Iterable[Product]) -> Corpus:
    """New corpus over ``products`` sharing the parent's catalog."""
    return build_corpus(products, corpus.catalog)


def _iter_records(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: parse error: {exc.msg}") from None
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: parse error: expected an object")
            yield lineno, record


def _field(record: dict, name: str, path: Path, lineno: int, kind=str):
    if name not in record:
        raise DataError(f"{path}:{lineno}: missing field {name!r}")
    value = record[name]
    if not isinstance(value, kind):
        raise DataError(f"{path}:{lineno}: field {name!r} has the wrong type")
    return value


def parse_product(record: dict, path: Path = Path("<record>"), lineno: int = 0) -> Product:
    labels = _field(record, "labels", path, lineno, list)
    if not all(isinstance(x, str) for x in labels):
        raise DataError(f"{path}:{lineno}: label ids must be strings")
    return Product(
        id=_field(record, "id", path, lineno),
        category=_field(record, "category", path, lineno),
        title=_field(record, "title", path, lineno),
        description=_field(record, "description", path, lineno),
        labels=tuple(labels),
    )


def load_catalog(path: str | Path) -> tuple[LabelCatalogEntry, ...]:
    path = Path(path)
    entries = []
    for lineno, rec in _iter_records(path):
        entries.append(
            LabelCatalogEntry(
                id=_field(rec, "id", path, lineno),
                attribute=_field(rec, "attribute", path, lineno),
                value=_field(rec, "value", path, lineno),
                description=_field(rec, "description", path, lineno),
            )
        )
    return tuple(entries)


def load_products(path: str | Path, ignore_labels: bool = False) -> list[Product]:
    """Products from a line-delimited file.

    With ``ignore_labels`` (query products at prediction time) the ``labels``
    field may be absent and is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    out = []
    for lineno, rec in _iter_records(path):
        if ignore_labels:
            rec = dict(rec, labels=[])
        out.append(parse_product(rec, path, lineno))
    return out


def load_corpus(products_path: str | Path, catalog_path: str | Path) -> Corpus:
    """Load and validate a line-delimited JSON products file and its catalog."""
    for p in (products_path, catalog_path):
        if not Path(p).is_file():
            raise DataError(f"no such file: {p}")
    catalog = load_catalog(catalog_path)
    products = load_products(products_path)
    if not products:
        raise DataError(f"{products_path}: empty corpus")
    return build_corpus(products, catalog)


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def save_corpus(corpus: Corpus, products_path: str | Path, catalog_path: str | Path) -> None:
    write_jsonl(products_path, (p.to_record() for p in corpus.products))
    write_jsonl(catalog_path, (e.to_record() for e in corpus.catalog))


def corpus_stats(corpus: Corpus) -> CorpusStats:
    if not corpus.products:
        raise DataError("empty corpus")
    counts = Counter(lid for p in corpus.products for lid in p.labels)
    histogram = {lid: counts.get(lid, 0) for lid in corpus.label_index}
    n = len(corpus.products)
    multi = sum(1 for p in corpus.products if len(p.labels) >= 2)
    return CorpusStats(
        histogram=histogram,
        total_instances=n,
        multilabel_percentage=multi / n,
        n_labels=sum(1 for c in histogram.values() if c > 0),
        mean_labels_per_product=sum(counts.values()) / n,
    )
