"""Learnable parameters and the shared attention block.

One ``ModelParams`` owns every trainable tensor: the encoder stack, the
one-layer reconstruction decoder, the vocabulary projection for ordinary
tokens, the dense down-projection for the sentence embedding, and the tied
output heads.  The reconstruction decoder and both output heads reuse the
token embedding table, so gradients reach it from several paths.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import RunConfig
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal draws with resampling outside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


class ModelParams:
    """Named tensor table for the full model; iteration order is stable."""

    def __init__(self, cfg: RunConfig, rng: np.random.Generator, dtype=np.float32,
                 with_score_head: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.with_score_head = with_score_head
        self.named: dict[str, Tensor] = {}
        d, v = cfg.d_model, cfg.vocab_size

        def param(name, shape, init="normal"):
            if init == "normal":
                data = trunc_normal(rng, shape, dtype=dtype)
            elif init == "zeros":
                data = np.zeros(shape, dtype=dtype)
            elif init == "ones":
                data = np.ones(shape, dtype=dtype)
            else:  # pragma: no cover
                raise AssertionError(init)
            self.named[name] = Tensor(data, requires_grad=True, dtype=dtype)

        param("tok_emb", (v, d))
        param("pos_emb", (cfg.max_len, d))
        for i in range(cfg.n_layers):
            p = f"enc{i}."
            param(p + "ln1_gain", (d,), "ones")
            param(p + "ln1_bias", (d,), "zeros")
            for proj in ("q", "k", "v", "out"):
                param(p + proj + "_weight", (d, d))
                param(p + proj + "_bias", (d,), "zeros")
            param(p + "ln2_gain", (d,), "ones")
            param(p + "ln2_bias", (d,), "zeros")
            param(p + "ff1_weight", (d, cfg.d_ff))
            param(p + "ff1_bias", (cfg.d_ff,), "zeros")
            param(p + "ff2_weight", (cfg.d_ff, d))
            param(p + "ff2_bias", (d,), "zeros")
        param("final_ln_gain", (d,), "ones")
        param("final_ln_bias", (d,), "zeros")
        param("mlm_bias", (v,), "zeros")

        # one-layer reconstruction decoder; projections carry no bias,
        # matching the bare Q/K/V formulation
        param("dec.q_weight", (d, d))
        param("dec.k_weight", (d, d))
        param("dec.v_weight", (d, d))
        param("dec.out_weight", (d, d))
        param("dec.out_bias", (d,), "zeros")
        param("dec.ln_gain", (d,), "ones")
        param("dec.ln_bias", (d,), "zeros")
        param("recon_bias", (v,), "zeros")

        # ordinary-token vocabulary projection and dense down-projection
        param("vocab_proj", (d, v))
        param("cls_proj", (d, cfg.d_prime))

        if with_score_head:
            param("score_weight", (d, 1))
            param("score_bias", (1,), "zeros")

    def __getitem__(self, name: str) -> Tensor:
        return self.named[name]

    def parameters(self) -> dict[str, Tensor]:
        return self.named

    def zero_grad(self) -> None:
        for p in self.named.values():
            p.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named.items()}

    @classmethod
    def from_arrays(cls, cfg: RunConfig, arrays: dict[str, np.ndarray],
                    with_score_head: bool = False) -> "ModelParams":
        params = cls(cfg, np.random.default_rng(0), with_score_head=with_score_head)
        expected = set(params.named)
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ConfigError(
                f"checkpoint tensors do not match the configured architecture: "
                f"missing {missing[:4]}, unexpected {extra[:4]}"
            )
        for name, arr in arrays.items():
            cur = params.named[name]
            if tuple(arr.shape) != cur.data.shape:
                raise ShapeError(
                    f"checkpoint tensor {name!r} has shape {tuple(arr.shape)}, "
                    f"expected {cur.data.shape}"
                )
            cur.data = np.ascontiguousarray(arr, dtype=cur.data.dtype)
        return params


def encoder_core_names(cfg: RunConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.n_layers):
        p = f"enc{i}."
        names += [p + "ln1_gain", p + "ln1_bias"]
        for proj in ("q", "k", "v", "out"):
            names += [p + proj + "_weight", p + proj + "_bias"]
        names += [p + "ln2_gain", p + "ln2_bias",
                  p + "ff1_weight", p + "ff1_bias", p + "ff2_weight", p + "ff2_bias"]
    names += ["final_ln_gain", "final_ln_bias"]
    return names


def pretrain_param_names(cfg: RunConfig) -> list[str]:
    """Parameters touched by the pre-training objective under the config's
    decoding toggles."""
    names = encoder_core_names(cfg) + ["mlm_bias"]
    if cfg.cls_decoding:
        names += ["dec.q_weight", "dec.k_weight", "dec.v_weight",
                  "dec.out_weight", "dec.out_bias", "dec.ln_gain", "dec.ln_bias",
                  "recon_bias"]
    if cfg.ot_decoding:
        names += ["vocab_proj"]
    return names


def scoring_param_names(cfg: RunConfig) -> list[str]:
    """Parameters in the query/document scoring path (fine-tuning)."""
    return encoder_core_names(cfg) + ["cls_proj", "vocab_proj"]


def subset(params: ModelParams, names) -> dict[str, Tensor]:
    return {name: params[name] for name in names}


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(L, d) -> (H, L, d/H)."""
    L, d = x.shape
    return T.transpose(T.reshape(x, (L, n_heads, d // n_heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(H, L, d/H) -> (L, d)."""
    h, L, dh = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (L, h * dh))


def attention(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
              n_heads: int, mask: np.ndarray | None = None,
              bq: Tensor | None = None, bk: Tensor | None = None,
              bv: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention; returns (L, d) before output projection.

    ``mask`` is an additive (L, L) array over {0, NEG_INF}; it broadcasts
    across heads.
    """
    q = T.matmul(q_in, wq)
    k = T.matmul(kv_in, wk)
    v = T.matmul(kv_in, wv)
    if bq is not None:
        q = T.add(q, bq)
    if bk is not None:
        k = T.add(k, bk)
    if bv is not None:
        v = T.add(v, bv)
    dh = q.shape[-1] // n_heads
    qh = split_heads(q, n_heads)
    kh = split_heads(k, n_heads)
    vh = split_heads(v, n_heads)
    scores = T.mul(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    probs = T.softmax(scores, mask=mask)
    return merge_heads(T.matmul(probs, vh))
