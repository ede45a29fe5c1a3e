"""Dual decoding heads over the encoder output.

Sentence-side: a one-layer attention decoder reads a query stream built from
the sentence embedding and a context stream mixing the sentence embedding
with original token embeddings, under a per-row visibility mask, and
reconstructs every non-first token.

Token-side: valid ordinary-token states are projected into vocabulary space,
max-pooled token-wise, and pushed to rank every distinct input token highly
(a bag-of-words objective).  The joint pre-training objective is the
unweighted sum of the enabled losses.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import NumericError, UsageError
from .model import ModelParams, attention
from .tensor import NEG_INF, Tensor
from .text import SPECIAL_TOKENS


def position_mask(length: int, visible: list[np.ndarray], dtype=np.float32) -> np.ndarray:
    """Additive (L, L) mask from per-row visible column sets.

    The diagonal is always hidden; rows i >= 1 always see column 0.
    """
    mask = np.full((length, length), NEG_INF, dtype=dtype)
    for i, cols in enumerate(visible):
        mask[i, cols] = 0.0
    mask[np.arange(length), np.arange(length)] = NEG_INF
    mask[1:, 0] = 0.0
    return mask


def build_streams(params: ModelParams, h_cls: Tensor, original_ids) -> tuple[Tensor, Tensor]:
    """Query stream: sentence embedding + position, at every row.
    Context stream: sentence embedding at row 0, then token + position."""
    ids = np.asarray(original_ids, dtype=np.int64)
    L = len(ids)
    pos = T.take(params["pos_emb"], np.arange(L), axis=0)
    h1 = T.add(pos, h_cls)
    tok = T.add(T.embedding(params["tok_emb"], ids[1:]),
                T.take(params["pos_emb"], np.arange(1, L), axis=0))
    h2 = T.concat([h_cls, tok], axis=0)
    return h1, h2


def decode_cls(params: ModelParams, h1: Tensor, h2: Tensor, mask: np.ndarray,
               original_ids) -> Tensor:
    """Reconstruction loss of tokens 1..L-1 from the masked attention read."""
    ids = np.asarray(original_ids, dtype=np.int64)
    L = len(ids)
    if mask.shape != (L, L):
        raise UsageError(f"position mask shape {mask.shape} does not match L={L}")
    if (mask == 0.0).sum(axis=1).min() < 1:
        raise AssertionError("position mask contains a fully hidden row")
    ctx = attention(h1, h2, params["dec.q_weight"], params["dec.k_weight"],
                    params["dec.v_weight"], params.cfg.dec_heads, mask=mask)
    out = T.add(T.matmul(ctx, params["dec.out_weight"]), params["dec.out_bias"])
    h = T.layer_norm(T.add(out, h1), params["dec.ln_gain"], params["dec.ln_bias"])
    scored = T.take(h, np.arange(1, L), axis=0)
    logits = T.add(T.matmul(scored, T.transpose(params["tok_emb"], (1, 0))),
                   params["recon_bias"])
    return T.cross_entropy(logits, ids[1:])


def ot_project(params: ModelParams, hidden: Tensor, ot_positions) -> Tensor:
    """Vocabulary-space scores for each valid ordinary token: (T, |V|)."""
    pos = np.asarray(ot_positions, dtype=np.int64)
    if pos.size == 0:
        raise UsageError("no valid ordinary tokens to project")
    return T.matmul(T.take(hidden, pos, axis=0), params["vocab_proj"])


def ot_maxpool(mu: Tensor) -> Tensor:
    """Token-wise elementwise maximum: (T, |V|) -> (|V|,)."""
    return T.amax(mu, axis=0)


def bow_target(original_ids) -> np.ndarray:
    """Distinct non-special vocab ids present in the original sequence."""
    ids = np.asarray(original_ids, dtype=np.int64)
    return np.unique(ids[ids >= len(SPECIAL_TOKENS)])


def bow_loss(mu_pooled: Tensor, target: np.ndarray) -> Tensor:
    """Summed negative log-probability of every distinct input token."""
    target = np.asarray(target, dtype=np.int64)
    if target.size == 0:
        raise UsageError("bag-of-words target is empty")
    logp = T.log_softmax(mu_pooled)
    return -T.reduce_sum(T.take(logp, target, axis=0))


def joint_loss(terms: dict[str, Tensor]) -> Tensor:
    """Unweighted sum of the enabled loss terms."""
    if not terms:
        raise UsageError("joint loss needs at least one term")
    total = None
    for name, term in terms.items():
        if not np.isfinite(term.data):
            raise NumericError(f"loss term '{name}' is not finite: {float(term.data)}")
        total = term if total is None else T.add(total, term)
    return total
