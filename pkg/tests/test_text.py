"""Vocabulary building, tokenization round-trips, masking, file ingestion."""

import numpy as np
import pytest

from dualdec import text as tx
from dualdec.errors import UsageError, ValidationError


class TestVocabulary:
    def test_frequency_order(self):
        vocab = tx.build_vocab({"d1": "a b b"}, size=8)
        assert "a" in vocab.token_to_id and "b" in vocab.token_to_id
        assert vocab.id_of("b") < vocab.id_of("a")

    def test_single_token_corpus(self):
        vocab = tx.build_vocab({"d1": "x"}, size=6)
        assert len(vocab) == 6
        assert vocab.id_of("x") == 5

    def test_unknown_token_maps_to_unk(self):
        vocab = tx.build_vocab({"d1": "x"}, size=6)
        ids = vocab.encode("x zzz", max_len=8)
        assert ids == [tx.CLS_ID, vocab.id_of("x"), tx.UNK_ID, tx.SEP_ID]

    def test_empty_corpus_rejected(self):
        with pytest.raises(UsageError):
            tx.build_vocab({}, size=8)

    def test_size_cap_and_tie_break(self):
        vocab = tx.build_vocab({"d1": "b a c a b c"}, size=7)
        # all tie at 2; lexicographic keeps "a" and "b"
        assert set(vocab.id_to_token[5:]) == {"a", "b"}

    def test_special_ids_stable(self):
        vocab = tx.build_vocab({"d1": "hello world"}, size=10)
        assert vocab.id_to_token[:5] == list(tx.SPECIAL_TOKENS)

    def test_tokenize_detokenize_roundtrip(self):
        vocab = tx.build_vocab({"d1": "the cat sat , on . a mat"}, size=20)
        text = "the cat , sat . on a mat"
        ids = vocab.encode(text, max_len=32)
        assert vocab.encode(vocab.decode(ids), max_len=32) == ids

    def test_save_load_roundtrip(self, tmp_path):
        vocab = tx.build_vocab({"d1": "alpha beta beta gamma"}, size=10)
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        loaded = tx.Vocabulary.load(path)
        assert loaded.id_to_token == vocab.id_to_token

    def test_truncation(self):
        vocab = tx.build_vocab({"d1": "a b c d e f g h"}, size=16)
        ids = vocab.encode("a b c d e f g h", max_len=5)
        assert len(ids) == 5
        assert ids[0] == tx.CLS_ID and ids[-1] == tx.SEP_ID


class TestEncoderMasking:
    def test_mask_count_rule(self):
        assert tx.mask_count(0.3, 11) == 3
        assert tx.mask_count(0.5, 11) == 5
        assert tx.mask_count(0.05, 3) == 0

    def test_exact_positions_masked(self):
        rng = np.random.default_rng(0)
        ids = np.array([tx.CLS_ID, 5, 6, 7, 8, 9, 10, 11, 12, 13, tx.SEP_ID])
        masked, positions, labels = tx.mask_for_encoder(ids, 0.3, rng)
        assert len(positions) == 3
        assert (masked[positions] == tx.MASK_ID).all()
        np.testing.assert_array_equal(labels, ids[positions])
        assert 0 not in positions
        untouched = np.setdiff1d(np.arange(len(ids)), positions)
        np.testing.assert_array_equal(masked[untouched], ids[untouched])

    def test_degenerate_ratio_masks_nothing(self):
        rng = np.random.default_rng(0)
        ids = np.array([tx.CLS_ID, 5, 6, tx.SEP_ID])
        masked, positions, labels = tx.mask_for_encoder(ids, 0.05, rng)
        np.testing.assert_array_equal(masked, ids)
        assert positions.size == 0 and labels.size == 0

    def test_fixed_seed_reproducible(self):
        ids = np.arange(5, 25)
        ids[0] = tx.CLS_ID
        a = tx.mask_for_encoder(ids, 0.3, np.random.default_rng(42))
        b = tx.mask_for_encoder(ids, 0.3, np.random.default_rng(42))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_too_short_rejected(self):
        with pytest.raises(UsageError):
            tx.mask_for_encoder(np.array([tx.CLS_ID, 5]), 0.3, np.random.default_rng(0))

    def test_count_matches_rule_across_lengths(self):
        rng = np.random.default_rng(7)
        for L in list(range(3, 40)) + [128, 256, 512]:
            for ratio in (0.15, 0.3, 0.5):
                ids = np.full(L, 9)
                ids[0] = tx.CLS_ID
                _, positions, _ = tx.mask_for_encoder(ids, ratio, rng)
                assert len(positions) == tx.mask_count(ratio, L)


class TestDecoderVisibility:
    def test_row_rules(self):
        rng = np.random.default_rng(3)
        L = 12
        visible = tx.sample_decoder_visibility(L, 0.5, rng)
        n_vis = tx.visibility_sample_size(0.5, L)
        for i, cols in enumerate(visible):
            assert i not in cols
            if i >= 1:
                assert 0 in cols
            in_body = [c for c in cols if c >= 1]
            assert len(in_body) == n_vis

    def test_cardinality_identical_across_rows(self):
        rng = np.random.default_rng(4)
        for L in (3, 4, 7, 33):
            visible = tx.sample_decoder_visibility(L, 0.6, rng)
            body_sizes = {len([c for c in cols if c >= 1]) for cols in visible}
            assert len(body_sizes) == 1

    def test_infeasible_ratio_rejected(self):
        # ceil(0.9 * 2) = 2 > L-2 = 1 visible non-self candidates
        with pytest.raises(UsageError):
            tx.sample_decoder_visibility(3, 0.1, np.random.default_rng(0))

    def test_mask_matrix_example(self):
        """L=4, row 2 sampled {1,3} -> row [0, 0, -inf, 0]."""
        from dualdec.decoder import position_mask
        from dualdec.tensor import NEG_INF

        visible = [np.array([1]), np.array([0, 3]), np.array([0, 1, 3]), np.array([0, 2])]
        mask = position_mask(4, visible)
        np.testing.assert_array_equal(mask[2], [0.0, 0.0, NEG_INF, 0.0])
        assert (np.diag(mask) == NEG_INF).all()
        assert (mask[1:, 0] == 0.0).all()


class TestFileIngestion:
    def test_queries_roundtrip(self, tmp_path):
        path = tmp_path / "queries.tsv"
        path.write_text("q1\thello world\n", encoding="utf-8")
        assert tx.load_queries(path) == {"q1": "hello world"}

    def test_qrels_dangling_doc_rejected(self, tmp_path):
        qrels = tmp_path / "qrels.tsv"
        qrels.write_text("q1\t0\td9\t1\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="d9"):
            tx.load_qrels(qrels, corpus={"d1": "text"})

    def test_malformed_line_reports_location(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        path.write_text("d1\tok\nbad line without tab\n", encoding="utf-8")
        with pytest.raises(ValidationError, match=":2"):
            tx.load_corpus(path)

    def test_empty_file_warns(self, tmp_path, caplog):
        path = tmp_path / "queries.tsv"
        path.write_text("", encoding="utf-8")
        with caplog.at_level("WARNING"):
            out = tx.load_queries(path)
        assert out == {}
        assert any("empty" in rec.message for rec in caplog.records)

    def test_qrels_grade_parsing(self, tmp_path):
        qrels = tmp_path / "qrels.tsv"
        qrels.write_text("q1\t0\td1\t2\nq2\t0\td2\t0\n", encoding="utf-8")
        out = tx.load_qrels(qrels)
        assert out == {("q1", "d1"): 2, ("q2", "d2"): 0}
        assert tx.positives_by_query(out) == {"q1": ["d1"]}

    def test_corpus_save_load(self, tmp_path):
        corpus = {"d1": "alpha beta", "d2": "gamma"}
        path = tmp_path / "corpus.tsv"
        tx.save_corpus(path, corpus)
        assert tx.load_corpus(path) == corpus
