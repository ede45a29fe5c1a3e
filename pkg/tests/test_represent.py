"""Hybrid representation: projection, sparsification, scoring, serialization."""

import numpy as np
import pytest

from dualdec import tensor as T
from dualdec.errors import UsageError
from dualdec.represent import (
    HybridVector,
    QueryRepresentation,
    document_tensors,
    document_vector,
    encode_document,
    pack_ids,
    pair_score,
    project_cls,
    query_tensors,
    query_vector,
    read_embeddings,
    score,
    serialized_record_size,
    sparsify_ot,
    unpack_ids,
    write_embeddings,
)

from conftest import tiny_config, tiny_params


def scatter_oracle(q: QueryRepresentation, d: HybridVector) -> float:
    """Independent scoring oracle: inner product of the full concatenated
    vectors, with document sparse weights scattered into a dense |V| array."""
    full_d = np.zeros(q.mu.shape[0])
    full_d[d.sparse_ids] = d.sparse_weights
    vec_q = np.concatenate([q.dense, q.mu]).astype(np.float64)
    vec_d = np.concatenate([d.dense, full_d]).astype(np.float64)
    return float(np.dot(vec_q, vec_d))


class TestProjectCls:
    def test_identity_projection(self):
        h = np.arange(4.0)
        np.testing.assert_allclose(project_cls(h, np.eye(4)), h)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        h = rng.normal(size=8)
        w = rng.normal(size=(8, 3))
        np.testing.assert_allclose(project_cls(2 * h, w), 2 * project_cls(h, w), rtol=1e-12)

    def test_paper_scale_dims(self):
        rng = np.random.default_rng(1)
        out = project_cls(rng.normal(size=768), rng.normal(size=(768, 384)))
        assert out.shape == (384,)


class TestSparsify:
    def test_basic_topk(self):
        idx, w = sparsify_ot(np.array([0.1, 0.9, 0.5]), 2)
        np.testing.assert_array_equal(idx, [1, 2])
        np.testing.assert_allclose(w, [0.9, 0.5])

    def test_k_equals_vocab(self):
        mu = np.array([0.3, -0.2, 0.5])
        idx, w = sparsify_ot(mu, 3)
        np.testing.assert_array_equal(idx, [0, 1, 2])
        np.testing.assert_allclose(w, mu)

    def test_tie_keeps_lower_index(self):
        idx, w = sparsify_ot(np.array([1.0, 1.0, 0.0]), 1)
        np.testing.assert_array_equal(idx, [0])

    def test_against_full_sort_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(4, 50))
            k = int(rng.integers(1, n + 1))
            mu = rng.normal(size=n)
            idx, w = sparsify_ot(mu, k)
            oracle = np.sort(mu)[::-1][:k]
            np.testing.assert_allclose(np.sort(w)[::-1], oracle, rtol=1e-12)
            assert (np.diff(idx) > 0).all() or len(idx) == 1
            np.testing.assert_allclose(mu[idx], w)

    def test_k_bounds(self):
        with pytest.raises(UsageError):
            sparsify_ot(np.zeros(4), 0)
        with pytest.raises(UsageError):
            sparsify_ot(np.zeros(4), 5)


class TestScore:
    def test_worked_example(self):
        """Dense (0.5 - 2) plus sparse (0.3*0.7 + 0.5*0.9) = -0.84."""
        q = QueryRepresentation(
            dense=np.array([1.0, 2.0], dtype=np.float32),
            mu=np.array([0.1, 0.2, 0.3, 0.4, 0.5], dtype=np.float32),
        )
        d = HybridVector(
            dense=np.array([0.5, -1.0], dtype=np.float32),
            sparse_ids=np.array([2, 4], dtype=np.uint16),
            sparse_weights=np.array([0.7, 0.9], dtype=np.float32),
        )
        np.testing.assert_allclose(score(q, d), -0.84, atol=1e-6)
        np.testing.assert_allclose(score(q, d), scatter_oracle(q, d), atol=1e-9)

    def test_empty_sparse_is_pure_dense(self):
        q = QueryRepresentation(dense=np.array([1.0, 1.0], dtype=np.float32),
                                mu=np.zeros(4, dtype=np.float32))
        d = HybridVector(dense=np.array([2.0, 3.0], dtype=np.float32),
                         sparse_ids=np.array([], dtype=np.uint16),
                         sparse_weights=np.array([], dtype=np.float32))
        np.testing.assert_allclose(score(q, d), 5.0)

    def test_zero_query_mu_is_pure_dense(self):
        rng = np.random.default_rng(3)
        q = QueryRepresentation(dense=rng.normal(size=4).astype(np.float32),
                                mu=np.zeros(8, dtype=np.float32))
        d = HybridVector(dense=rng.normal(size=4).astype(np.float32),
                         sparse_ids=np.array([1, 5], dtype=np.uint16),
                         sparse_weights=rng.normal(size=2).astype(np.float32))
        expected = float(np.dot(q.dense.astype(np.float64), d.dense.astype(np.float64)))
        np.testing.assert_allclose(score(q, d), expected, rtol=1e-12)

    def test_oracle_equivalence_random_cases(self):
        """Hybrid scoring equals the concatenated inner product on 1000
        random (q, d) pairs."""
        rng = np.random.default_rng(4)
        for _ in range(1000):
            dp = int(rng.integers(1, 8))
            v = int(rng.integers(4, 24))
            k = int(rng.integers(1, v + 1))
            q = QueryRepresentation(dense=rng.normal(size=dp).astype(np.float32),
                                    mu=rng.normal(size=v).astype(np.float32))
            ids = np.sort(rng.choice(v, size=k, replace=False)).astype(np.uint16)
            d = HybridVector(dense=rng.normal(size=dp).astype(np.float32),
                             sparse_ids=ids,
                             sparse_weights=rng.normal(size=k).astype(np.float32))
            np.testing.assert_allclose(score(q, d), scatter_oracle(q, d), atol=1e-6)


class TestModelVectors:
    def test_document_encoding_deterministic(self, params16):
        ids = np.array([2, 7, 8, 9, 3])
        a = document_vector(params16, ids)
        b = document_vector(params16, ids)
        assert a.dense.tobytes() == b.dense.tobytes()
        assert a.sparse_ids.tobytes() == b.sparse_ids.tobytes()
        assert a.sparse_weights.tobytes() == b.sparse_weights.tobytes()

    def test_document_shapes_follow_config(self, params16):
        vec = document_vector(params16, np.array([2, 7, 8, 9, 3]))
        assert vec.dense.shape == (params16.cfg.d_prime,)
        assert vec.sparse_ids.shape == (params16.cfg.top_k,)
        assert (np.diff(vec.sparse_ids.astype(int)) > 0).all()

    def test_empty_text_rejected(self, params16):
        from dualdec.text import build_vocab

        vocab = build_vocab({"d": "alpha beta"}, size=8)
        with pytest.raises(UsageError):
            encode_document(params16, vocab, "   ")

    def test_pair_score_matches_inference_score(self, params16):
        """The differentiable scoring path and the inference path agree."""
        q_ids = np.array([2, 7, 8, 3])
        d_ids = np.array([2, 9, 10, 11, 3])
        qt = query_tensors(params16, q_ids)
        dt = document_tensors(params16, d_ids)
        s_train = float(pair_score(qt, dt).data)
        s_infer = score(query_vector(params16, q_ids), document_vector(params16, d_ids))
        np.testing.assert_allclose(s_train, s_infer, atol=1e-5)

    def test_query_sparsify_mode_zeroes_tail(self):
        cfg = tiny_config(query_sparsify=True)
        params = tiny_params(cfg)
        q = query_vector(params, np.array([2, 7, 8, 3]))
        assert np.count_nonzero(q.mu) <= cfg.top_k


class TestSerialization:
    def _random_records(self, rng, n, dp, k, v):
        out = []
        for i in range(n):
            ids = np.sort(rng.choice(v, size=k, replace=False)).astype(np.uint16)
            out.append((f"doc{i:03d}", HybridVector(
                dense=rng.normal(size=dp).astype(np.float32),
                sparse_ids=ids,
                sparse_weights=rng.normal(size=k).astype(np.float32),
            )))
        return out

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        records = self._random_records(rng, 7, 6, 3, 20)
        path = tmp_path / "docs.emb"
        write_embeddings(path, records, d_prime=6, k=3)
        loaded, dp, k = read_embeddings(path)
        assert (dp, k) == (6, 3)
        assert [d for d, _ in loaded] == [d for d, _ in records]
        for (_, a), (_, b) in zip(records, loaded):
            np.testing.assert_array_equal(a.dense, b.dense)
            np.testing.assert_array_equal(a.sparse_ids, b.sparse_ids)
            np.testing.assert_array_equal(a.sparse_weights, b.sparse_weights)

    def test_write_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(6)
        records = self._random_records(rng, 4, 5, 2, 16)
        p1, p2 = tmp_path / "a.emb", tmp_path / "b.emb"
        write_embeddings(p1, records, d_prime=5, k=2)
        write_embeddings(p2, records, d_prime=5, k=2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_id_bit_packing_roundtrip(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(1, 300))
            ids = rng.integers(0, 2**15, size=n)
            np.testing.assert_array_equal(unpack_ids(pack_ids(ids, 15), n, 15), ids)

    def test_record_size_accounting(self):
        # u16 ids: 4 bytes per dense float, 6 per sparse pair
        assert serialized_record_size(384, 260, id_bits=16) == 384 * 4 + 260 * 6
        # 15-bit packed ids fit the dense-768 budget
        assert serialized_record_size(384, 260, id_bits=15) <= 768 * 4
