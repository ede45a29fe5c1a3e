"""Encoder forward contracts, padding isolation, MLM loss, overfit oracle."""

import math

import numpy as np
import pytest

from dualdec import tensor as T
from dualdec.encoder import encode, mlm_loss, ordinary_positions
from dualdec.errors import UsageError
from dualdec.model import encoder_core_names, subset
from dualdec.optim import AdamW
from dualdec.text import CLS_ID, MASK_ID, PAD_ID, SEP_ID, make_instance

from conftest import tiny_config, tiny_params
from gradcheck import assert_grads_close


def seq(body, pad=0):
    """[CLS] + body + [SEP] (+ [PAD] tail)."""
    return np.array([CLS_ID] + list(body) + [SEP_ID] + [PAD_ID] * pad, dtype=np.int64)


class TestEncode:
    def test_shape_contract(self):
        cfg = tiny_config(d_model=32, n_heads=4, vocab_size=64)
        params = tiny_params(cfg)
        ids = seq([10, 11, 12, 13, 14, 15])  # L = 8
        out = encode(params, ids)
        assert out.h_cls.shape == (1, 32)
        assert out.hidden.shape == (8, 32)
        assert list(out.ot_positions) == [1, 2, 3, 4, 5, 6]

    def test_padding_isolation(self, params16):
        ids_short = seq([8, 9, 10])
        ids_padded = seq([8, 9, 10], pad=4)
        a = encode(params16, ids_short).h_cls.data
        b = encode(params16, ids_padded).h_cls.data
        np.testing.assert_array_equal(a, b)

    def test_mlm_label_not_in_forward_path(self, params16):
        """Two instances equal except for a masked position's label encode
        identically."""
        ids = seq([8, 9, 10, 11])
        inst_a = make_instance(ids, 0.3, 0.5, np.random.default_rng(0))
        inst_b = make_instance(ids, 0.3, 0.5, np.random.default_rng(0))
        inst_b.enc_mlm_labels = inst_b.enc_mlm_labels + 1
        a = encode(params16, inst_a.enc_ids).h_cls.data
        b = encode(params16, inst_b.enc_ids).h_cls.data
        np.testing.assert_array_equal(a, b)

    def test_masked_token_positions_excluded_from_ot(self):
        ids = seq([8, 9, 10, 11])
        ids[2] = MASK_ID
        assert list(ordinary_positions(ids)) == [1, 3, 4]

    def test_length_overflow_rejected(self, params16):
        with pytest.raises(UsageError, match="max_len"):
            encode(params16, np.full(17, 7))

    def test_deterministic(self, params16):
        ids = seq([5, 6, 7])
        a = encode(params16, ids).hidden.data
        b = encode(params16, ids).hidden.data
        assert a.tobytes() == b.tobytes()


class TestMlmLoss:
    def test_no_masked_positions_zero_loss(self, params16):
        ids = seq([8, 9, 10])
        out = encode(params16, ids)
        loss = mlm_loss(params16, out.hidden, [], [])
        assert float(loss.data) == 0.0

    def test_uniform_logits_log_vocab(self):
        cfg = tiny_config(vocab_size=1000, d_model=16)
        params = tiny_params(cfg)
        params["tok_emb"].data[:] = 0.0
        params["mlm_bias"].data[:] = 0.0
        ids = seq([8, 9, 10, 11])
        out = encode(params, ids)
        loss = mlm_loss(params, out.hidden, [1, 3], [8, 10])
        np.testing.assert_allclose(float(loss.data), math.log(1000.0), rtol=1e-6)

    def test_gradient_reaches_embeddings_via_both_paths(self):
        """Finite differences over the embedding table cover the lookup and
        the tied-head contributions together."""
        cfg = tiny_config(vocab_size=12, d_model=8, n_heads=2, d_ff=16, max_len=8)
        params = tiny_params(cfg, seed=3)
        ids = seq([6, 7, 8])
        positions, labels = [1, 2], [6, 7]

        def loss_fn():
            out = encode(params, ids)
            return mlm_loss(params, out.hidden, positions, labels)

        # eps=1e-4: composite losses stack enough curvature that eps=1e-3
        # truncation alone exceeds the tolerance (scales as eps^2)
        assert_grads_close(loss_fn, {"tok_emb": params["tok_emb"]}, eps=1e-4)

    def test_overfit_single_instance(self):
        """200 optimizer steps drive the MLM loss on one fixed instance
        below 0.1."""
        cfg = tiny_config(vocab_size=24, d_model=32, n_heads=4, d_ff=64, max_len=12)
        params = tiny_params(cfg, seed=1, dtype=np.float32)
        ids = seq([10, 11, 12, 13, 14, 15])
        inst = make_instance(ids, 0.3, 0.5, np.random.default_rng(5))
        trainable = subset(params, encoder_core_names(cfg) + ["mlm_bias"])
        opt = AdamW(trainable, lr=1e-2, weight_decay=0.0)
        loss_val = None
        for _ in range(200):
            opt.zero_grad()
            out = encode(params, inst.enc_ids)
            loss = mlm_loss(params, out.hidden, inst.enc_mlm_positions, inst.enc_mlm_labels)
            T.backward(loss)
            opt.step()
            loss_val = float(loss.data)
        assert loss_val < 0.1
