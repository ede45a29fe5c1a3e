"""Transformer encoder: sentence embedding, ordinary-token states, MLM loss.

Pre-LN blocks with a final layer norm; the hidden state at position 0 is the
sentence embedding (no pooler).  The MLM head reuses the transposed token
embedding table plus a bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import UsageError
from .model import ModelParams, attention
from .tensor import NEG_INF, Tensor
from .text import PAD_ID, SPECIAL_TOKENS


@dataclass
class EncodeOutput:
    hidden: Tensor                 # (L, d) final hidden states
    h_cls: Tensor                  # (1, d) sentence embedding
    ot_positions: np.ndarray       # positions of valid ordinary tokens
    ids: np.ndarray                # the ids that were encoded


def padding_mask(ids: np.ndarray) -> np.ndarray | None:
    """Additive (L, L) mask hiding [PAD] columns from every row."""
    pad_cols = ids == PAD_ID
    if not pad_cols.any():
        return None
    L = len(ids)
    mask = np.zeros((L, L), dtype=np.float32)
    mask[:, pad_cols] = NEG_INF
    return mask


def ordinary_positions(ids: np.ndarray) -> np.ndarray:
    """Positions holding real tokens: not special, not [M], not padding."""
    keep = ids >= len(SPECIAL_TOKENS)
    keep[0] = False
    return np.flatnonzero(keep)


def encode(params: ModelParams, ids) -> EncodeOutput:
    """Run the full encoder stack over one (possibly masked) sequence."""
    cfg = params.cfg
    ids = np.asarray(ids, dtype=np.int64)
    L = len(ids)
    if L > cfg.max_len:
        raise UsageError(f"sequence length {L} exceeds max_len={cfg.max_len}")
    mask = padding_mask(ids)

    h = T.add(T.embedding(params["tok_emb"], ids),
              T.take(params["pos_emb"], np.arange(L), axis=0))
    for i in range(cfg.n_layers):
        p = f"enc{i}."
        x = T.layer_norm(h, params[p + "ln1_gain"], params[p + "ln1_bias"])
        ctx = attention(
            x, x,
            params[p + "q_weight"], params[p + "k_weight"], params[p + "v_weight"],
            cfg.n_heads, mask=mask,
            bq=params[p + "q_bias"], bk=params[p + "k_bias"], bv=params[p + "v_bias"],
        )
        h = T.add(h, T.add(T.matmul(ctx, params[p + "out_weight"]), params[p + "out_bias"]))
        x = T.layer_norm(h, params[p + "ln2_gain"], params[p + "ln2_bias"])
        ff = T.matmul(T.gelu(T.add(T.matmul(x, params[p + "ff1_weight"]), params[p + "ff1_bias"])),
                      params[p + "ff2_weight"])
        h = T.add(h, T.add(ff, params[p + "ff2_bias"]))
    h = T.layer_norm(h, params["final_ln_gain"], params["final_ln_bias"])

    return EncodeOutput(
        hidden=h,
        h_cls=T.take(h, [0], axis=0),
        ot_positions=ordinary_positions(ids),
        ids=ids,
    )


def mlm_logits(params: ModelParams, hidden: Tensor, positions) -> Tensor:
    picked = T.take(hidden, np.asarray(positions, dtype=np.int64), axis=0)
    return T.add(T.matmul(picked, T.transpose(params["tok_emb"], (1, 0))), params["mlm_bias"])


def mlm_loss(params: ModelParams, hidden: Tensor, positions, labels) -> Tensor:
    """Mean cross-entropy over the masked positions; zero when none exist."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        return T.tensor(0.0, dtype=hidden.dtype)
    return T.cross_entropy(mlm_logits(params, hidden, positions), labels)
