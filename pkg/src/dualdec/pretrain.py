"""Pre-training loop: masked instances through both decoding heads.

Each step draws a batch of documents, builds per-instance masked views, and
minimizes the sum of the enabled objectives (MLM + sentence-reconstruction +
bag-of-words), averaged over the batch.  Instances run as independent graphs
whose losses are combined before one backward pass.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoder import (
    bow_loss,
    bow_target,
    build_streams,
    decode_cls,
    joint_loss,
    ot_maxpool,
    ot_project,
    position_mask,
)
from .encoder import encode, mlm_loss
from .errors import UsageError
from .model import ModelParams, pretrain_param_names, subset
from .optim import AdamW
from .represent import stack_scalars
from .tensor import Tensor
from .text import MaskedInstance, Vocabulary, make_instance

logger = logging.getLogger(__name__)


def tokenize_corpus(vocab: Vocabulary, corpus: dict[str, str], max_len: int) -> list[np.ndarray]:
    """Whole (truncated) documents as instances; too-short docs are skipped."""
    out = []
    for did, text in corpus.items():
        ids = np.asarray(vocab.encode(text, max_len), dtype=np.int64)
        if len(ids) < 3:
            logger.warning("doc %s too short to pre-train on (L=%d); skipped", did, len(ids))
            continue
        out.append(ids)
    if not out:
        raise UsageError("no usable documents after tokenization")
    return out


def instance_loss_terms(params: ModelParams, inst: MaskedInstance,
                        cfg: RunConfig) -> dict[str, Tensor]:
    """The enabled loss terms for one masked instance."""
    out = encode(params, inst.enc_ids)
    terms: dict[str, Tensor] = {
        "mlm": mlm_loss(params, out.hidden, inst.enc_mlm_positions, inst.enc_mlm_labels)
    }
    if cfg.cls_decoding:
        h1, h2 = build_streams(params, out.h_cls, inst.original_ids)
        mask = position_mask(len(inst.original_ids), inst.dec_visible,
                             dtype=out.hidden.data.dtype)
        terms["dec"] = decode_cls(params, h1, h2, mask, inst.original_ids)
    if cfg.ot_decoding:
        target = bow_target(inst.original_ids)
        if out.ot_positions.size == 0 or target.size == 0:
            logger.warning("instance has no valid ordinary tokens; bag-of-words term skipped")
        else:
            mu = ot_maxpool(ot_project(params, out.hidden, out.ot_positions))
            terms["bow"] = bow_loss(mu, target)
    return terms


def pretrain(params: ModelParams, doc_ids_pool: list[np.ndarray], cfg: RunConfig,
             rng: np.random.Generator, on_step=None) -> list[dict[str, float]]:
    """Run ``cfg.pretrain_steps`` optimizer steps; returns per-step loss rows
    (step, mlm, dec, bow, total)."""
    cfg.validate_for_pretraining()
    trainable = subset(params, pretrain_param_names(cfg))
    opt = AdamW(trainable, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    history: list[dict[str, float]] = []
    order: list[int] = []
    for step in range(cfg.pretrain_steps):
        batch: list[np.ndarray] = []
        while len(batch) < cfg.pretrain_batch:
            if not order:
                order = list(rng.permutation(len(doc_ids_pool)))
            batch.append(doc_ids_pool[order.pop()])

        opt.zero_grad()
        collected: dict[str, list[Tensor]] = {}
        for ids in batch:
            inst = make_instance(ids, cfg.r_enc, cfg.r_dec, rng)
            for name, term in instance_loss_terms(params, inst, cfg).items():
                collected.setdefault(name, []).append(term)
        means = {name: T.reduce_mean(stack_scalars(terms))
                 for name, terms in collected.items()}
        total = joint_loss(means)
        T.backward(total)
        for p in trainable.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()

        row = {
            "step": step,
            "mlm": float(means["mlm"].data) if "mlm" in means else 0.0,
            "dec": float(means["dec"].data) if "dec" in means else 0.0,
            "bow": float(means["bow"].data) if "bow" in means else 0.0,
            "total": float(total.data),
        }
        history.append(row)
        if on_step is not None:
            on_step(row)
    return history


def write_loss_csv(path, history: list[dict[str, float]]) -> None:
    """step, L_mlm, L_dec, L_BoW, total."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,l_mlm,l_dec,l_bow,total\n")
        for row in history:
            fh.write(f"{row['step']},{row['mlm']:.6f},{row['dec']:.6f},"
                     f"{row['bow']:.6f},{row['total']:.6f}\n")


def read_loss_csv(path) -> list[dict[str, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        for line in fh:
            vals = line.rstrip("\n").split(",")
            row = dict(zip(header, vals))
            rows.append({
                "step": int(row["step"]),
                "mlm": float(row["l_mlm"]),
                "dec": float(row["l_dec"]),
                "bow": float(row["l_bow"]),
                "total": float(row["total"]),
            })
    return rows
