import struct

import numpy as np
import pytest

from keaf.corpus import LabelCatalogEntry, Product
from keaf.embedder import (
    EmbeddingStore,
    HashEncoder,
    embed_label,
    embed_product,
    load_embedding_store,
    product_text,
    token_hash,
    write_embedding_store,
)
from keaf.errors import DataError


@pytest.fixture
def store_path(tmp_path):
    rng = np.random.default_rng(0)
    vectors = {"a": rng.normal(size=4).astype(np.float32), "bé": rng.normal(size=4).astype(np.float32)}
    path = tmp_path / "emb.keaf"
    write_embedding_store(path, vectors, 4)
    return path, vectors


def corrupt(path, offset, data):
    raw = bytearray(path.read_bytes())
    raw[offset:offset + len(data)] = data
    path.write_bytes(bytes(raw))


class TestEmbeddingStore:
    def test_two_key_round_trip_is_bit_exact(self, store_path):
        path, vectors = store_path
        store = load_embedding_store(path)
        assert store.dim == 4
        assert len(store) == 2
        for key, vec in vectors.items():
            np.testing.assert_array_equal(store.vector(key), vec)
            assert store.vector(key).tobytes() == vec.astype("<f4").tobytes()

    def test_empty_store_errors_on_lookup(self, tmp_path):
        write_embedding_store(tmp_path / "e.keaf", {}, 3)
        store = load_embedding_store(tmp_path / "e.keaf")
        assert len(store) == 0
        with pytest.raises(DataError, match="no key 'x'"):
            store.lookup(["x"])

    def test_bad_magic_names_offset(self, store_path):
        path, _ = store_path
        corrupt(path, 0, b"NOPE")
        with pytest.raises(DataError, match="bad magic.*offset 0"):
            load_embedding_store(path)

    def test_bad_version(self, store_path):
        path, _ = store_path
        corrupt(path, 4, struct.pack("<I", 7))
        with pytest.raises(DataError, match="version 7 at offset 4"):
            load_embedding_store(path)

    def test_truncated_header(self, tmp_path):
        (tmp_path / "t.keaf").write_bytes(b"KEAF\x01")
        with pytest.raises(DataError, match="truncated header at offset 0"):
            load_embedding_store(tmp_path / "t.keaf")

    def test_truncated_record(self, store_path):
        path, _ = store_path
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(DataError, match="truncated record at offset"):
            load_embedding_store(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "d.keaf"
        write_embedding_store(path, {"k": np.ones(2)}, 2)
        raw = path.read_bytes()
        record = raw[20:]
        header = raw[:12] + struct.pack("<Q", 2)
        path.write_bytes(header + record + record)
        with pytest.raises(DataError, match="duplicate key 'k'"):
            load_embedding_store(path)

    def test_trailing_bytes(self, store_path):
        path, _ = store_path
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataError, match="trailing"):
            load_embedding_store(path)

    def test_dimension_mismatch_on_write(self, tmp_path):
        with pytest.raises(DataError, match="expected 4"):
            write_embedding_store(tmp_path / "x.keaf", {"a": np.ones(3)}, 4)

    def test_product_and_label_keys(self):
        store = EmbeddingStore(2, {"p1": [1, 2], "p1#nocat": [3, 4], "L": [5, 6]})
        product = Product("p1", "bags", "t", "d", ("L",))
        entry = LabelCatalogEntry("L", "a", "v", "a is v")
        np.testing.assert_array_equal(embed_product(store, product), [1, 2])
        np.testing.assert_array_equal(embed_product(store, product, use_category=False), [3, 4])
        np.testing.assert_array_equal(embed_label(store, entry), [5, 6])

    def test_missing_product_key(self):
        with pytest.raises(DataError, match="'p9'"):
            embed_product(EmbeddingStore(2), Product("p9", "c", "t", "d", ("L",)))


class TestHashEncoder:
    def test_single_token_is_its_row(self):
        enc = HashEncoder(dim=5, n_buckets=97, seed=1)
        b = token_hash("wallet") % 97
        np.testing.assert_array_equal(enc.embed_text("wallet"), enc.table[b])
        np.testing.assert_array_equal(enc.embed_text("WALLET"), enc.table[b])

    def test_two_tokens_mean_of_rows(self):
        enc = HashEncoder(dim=5, n_buckets=97, seed=1)
        b1, b2 = token_hash("red") % 97, token_hash("leather") % 97
        np.testing.assert_allclose(enc.embed_text("red leather"), (enc.table[b1] + enc.table[b2]) / 2, rtol=0, atol=1e-15)

    def test_hash_is_stable_blake2b(self):
        import hashlib

        expected = int.from_bytes(hashlib.blake2b(b"zip", digest_size=8).digest(), "little")
        assert token_hash("zip") == expected

    def test_category_flag_changes_the_vector(self):
        enc = HashEncoder(dim=8, n_buckets=1 << 12, seed=2)
        product = Product("p", "handbags", "long strap", "soft leather", ("L",))
        assert product_text(product) == "handbags [SEP] long strap [SEP] soft leather"
        assert product_text(product, use_category=False) == "long strap [SEP] soft leather"
        assert not np.array_equal(embed_product(enc, product), embed_product(enc, product, use_category=False))

    def test_label_embeds_description(self):
        enc = HashEncoder(dim=4, n_buckets=64)
        entry = LabelCatalogEntry("L", "colour", "red", "colour is red")
        np.testing.assert_array_equal(embed_label(enc, entry), enc.embed_text("colour is red"))

    def test_identical_descriptions_identical_vectors(self):
        enc = HashEncoder(dim=4, n_buckets=64)
        a = LabelCatalogEntry("A", "x", "y", "same words here")
        b = LabelCatalogEntry("B", "u", "v", "same words here")
        np.testing.assert_array_equal(embed_label(enc, a), embed_label(enc, b))

    def test_init_range_and_seed(self):
        t1 = HashEncoder(dim=4, n_buckets=32, seed=3).table
        assert np.abs(t1).max() <= 0.05
        np.testing.assert_array_equal(t1, HashEncoder(dim=4, n_buckets=32, seed=3).table)
        assert not np.array_equal(t1, HashEncoder(dim=4, n_buckets=32, seed=4).table)

    def test_empty_text_errors(self):
        with pytest.raises(DataError, match="no tokens"):
            HashEncoder(dim=2, n_buckets=8).embed_text("   ")

    def test_table_grad_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        enc = HashEncoder(dim=3, n_buckets=16, seed=0)
        handles = [enc.buckets("a b c"), enc.buckets("b d"), enc.buckets("a a")]
        weights = rng.normal(size=(3, 3))

        def f():
            return float(np.sum(enc.lookup(handles) * weights))

        grad = enc.table_grad(handles, weights)
        eps = 1e-6
        for idx in {(i, j) for ids in handles for i in ids for j in range(3)}:
            old = enc.table[idx]
            enc.table[idx] = old + eps
            hi = f()
            enc.table[idx] = old - eps
            lo = f()
            enc.table[idx] = old
            assert grad[idx] == pytest.approx((hi - lo) / (2 * eps), abs=1e-8)
