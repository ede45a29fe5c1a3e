"""Three-stage fine-tuning of the retrieval encoder.

Stage 1 trains contrastively against in-batch negatives; stage 2 adds
exact-mined hard negatives to the denominator; stage 3 distills a teacher's
softmax distribution over each query's candidate set (positive plus hard
negatives, no in-batch docs).  Mining is brute-force over the corpus, which
is exact and cheap at this scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import RunConfig
from .errors import UsageError, ValidationError
from .model import ModelParams, scoring_param_names, subset
from .optim import AdamW
from .represent import (
    DocTensors,
    document_tensors,
    encode_document,
    encode_query,
    pair_score,
    query_tensors,
    stack_scalars,
)
from .retrieval import build_index, search
from .tensor import Tensor
from .text import CLS_ID, SEP_ID, Vocabulary, positives_by_query, text_tokens

logger = logging.getLogger(__name__)


@dataclass
class TrainTriple:
    query_id: str
    positive: str
    negatives: list[str]

    def validate(self) -> None:
        if self.positive in self.negatives:
            raise ValidationError(
                f"query {self.query_id!r}: positive {self.positive!r} also listed as hard negative"
            )


def save_triples(path, triples: list[TrainTriple]) -> None:
    """query_id<TAB>pos_doc_id<TAB>neg_doc_id[,neg_doc_id...]"""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in triples:
            fh.write(f"{t.query_id}\t{t.positive}\t{','.join(t.negatives)}\n")


def load_triples(path) -> list[TrainTriple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, pos, negs = parts
            triple = TrainTriple(qid, pos, [n for n in negs.split(",") if n])
            triple.validate()
            out.append(triple)
    return out


def save_teacher_scores(path, scores: dict[tuple[str, str], float]) -> None:
    """query_id<TAB>doc_id<TAB>score"""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, did), sc in scores.items():
            fh.write(f"{qid}\t{did}\t{sc:.6f}\n")


def load_teacher_scores(path) -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, did, sc = parts
            out[(qid, did)] = float(sc)
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _row_nll(scores: Tensor, pos_idx: int, temperature: float) -> Tensor:
    scaled = T.mul(scores, 1.0 / temperature) if temperature != 1.0 else scores
    logp = T.log_softmax(scaled)
    return -T.take(logp, [pos_idx], axis=0)


def stage1_loss(params: ModelParams, query_ids: list[np.ndarray],
                doc_ids: list[np.ndarray], temperature: float = 1.0) -> Tensor:
    """In-batch contrastive loss: each query against every positive in the
    batch, its own at the matching index."""
    B = len(query_ids)
    if B < 2:
        raise UsageError(f"in-batch contrastive training needs batch size >= 2, got {B}")
    if len(doc_ids) != B:
        raise UsageError("queries and positives must align one-to-one")
    docs = [document_tensors(params, ids) for ids in doc_ids]
    rows = []
    for i, q_ids in enumerate(query_ids):
        qt = query_tensors(params, q_ids)
        scores = stack_scalars([pair_score(qt, dt) for dt in docs])
        rows.append(_row_nll(scores, i, temperature))
    return T.reduce_mean(T.concat(rows, axis=0))


def stage2_loss(params: ModelParams, query_ids: list[np.ndarray],
                pos_ids: list[np.ndarray], neg_ids: list[list[np.ndarray]],
                temperature: float = 1.0) -> Tensor:
    """Hard-negative contrastive loss: the denominator unions the batch
    positives with each query's own hard negatives."""
    B = len(query_ids)
    if B < 2:
        raise UsageError(f"contrastive training needs batch size >= 2, got {B}")
    docs = [document_tensors(params, ids) for ids in pos_ids]
    rows = []
    for i, q_ids in enumerate(query_ids):
        qt = query_tensors(params, q_ids)
        cand: list[DocTensors] = list(docs)
        cand += [document_tensors(params, ids) for ids in neg_ids[i]]
        scores = stack_scalars([pair_score(qt, dt) for dt in cand])
        rows.append(_row_nll(scores, i, temperature))
    return T.reduce_mean(T.concat(rows, axis=0))


def kd_sigma(teacher_raw: np.ndarray) -> np.ndarray:
    """Teacher softmax over one query's candidate set."""
    z = np.asarray(teacher_raw, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def stage3_kd_loss(params: ModelParams, query_ids: np.ndarray,
                   candidate_ids: list[np.ndarray], sigma: np.ndarray,
                   temperature: float = 1.0) -> Tensor:
    """Soft-label cross-entropy against the teacher distribution; the
    student softmax runs over the candidate set only."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (len(candidate_ids),):
        raise ValidationError(f"sigma shape {sigma.shape} does not match {len(candidate_ids)} candidates")
    if abs(float(sigma.sum()) - 1.0) > 1e-5 or (sigma < 0).any():
        raise ValidationError(f"teacher distribution is not normalized (sum={float(sigma.sum()):.6f})")
    qt = query_tensors(params, query_ids)
    scores = stack_scalars([pair_score(qt, document_tensors(params, ids))
                            for ids in candidate_ids])
    scaled = T.mul(scores, 1.0 / temperature) if temperature != 1.0 else scores
    logp = T.log_softmax(scaled)
    weighted = T.mul(logp, T.tensor(sigma, dtype=logp.dtype))
    return -T.reduce_sum(weighted)


# ---------------------------------------------------------------------------
# Hard-negative mining
# ---------------------------------------------------------------------------


def mine_hard_negatives(params: ModelParams, vocab: Vocabulary,
                        queries: dict[str, str], corpus: dict[str, str],
                        qrels: dict[tuple[str, str], int], n: int) -> list[TrainTriple]:
    """Exact top-(n + positives) retrieval per query; positives filtered out,
    the best n non-relevant docs kept.  One triple per (query, positive)."""
    positives = positives_by_query(qrels)
    records = [(did, encode_document(params, vocab, text)) for did, text in corpus.items()]
    index = build_index(records)
    triples: list[TrainTriple] = []
    for qid, qtext in queries.items():
        pos = positives.get(qid)
        if not pos:
            logger.warning("query %s has no positives in qrels; skipped from mining", qid)
            continue
        q = encode_query(params, vocab, qtext)
        ranked = search(index, q, topk=n + len(pos))
        pos_set = set(pos)
        negs = [did for did, _ in ranked if did not in pos_set][:n]
        for p in pos:
            triples.append(TrainTriple(qid, p, list(negs)))
    return triples


# ---------------------------------------------------------------------------
# Teachers
# ---------------------------------------------------------------------------


class OracleTeacher:
    """Scores straight from qrels grades; a test fixture, not a model."""

    def __init__(self, qrels: dict[tuple[str, str], int]):
        self.qrels = qrels

    def score(self, qid: str, did: str, q_text: str = "", d_text: str = "") -> float:
        return float(self.qrels.get((qid, did), 0))


def pair_token_ids(vocab: Vocabulary, q_text: str, d_text: str, max_len: int) -> np.ndarray:
    """[CLS] query [SEP] document [SEP], query capped at half the budget."""
    budget = max_len - 3
    q_toks = text_tokens(q_text)[: budget // 2]
    d_toks = text_tokens(d_text)[: budget - len(q_toks)]
    ids = [CLS_ID] + [vocab.id_of(t) for t in q_toks] + [SEP_ID]
    ids += [vocab.id_of(t) for t in d_toks] + [SEP_ID]
    return np.asarray(ids[:max_len], dtype=np.int64)


class CrossEncoderTeacher:
    """A small cross-encoder: the shared encoder over the joined pair with a
    scalar relevance head, trained to rank each positive above its mined
    hard negatives."""

    def __init__(self, cfg: RunConfig, vocab: Vocabulary, rng: np.random.Generator,
                 warm_start: ModelParams | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.params = ModelParams(cfg, rng, with_score_head=True)
        if warm_start is not None:
            for name, arr in warm_start.arrays().items():
                if name in self.params.named and name not in ("score_weight", "score_bias"):
                    self.params.named[name].data = arr.copy()

    def score_tensor(self, ids: np.ndarray) -> Tensor:
        from .encoder import encode

        out = encode(self.params, ids)
        s = T.add(T.matmul(out.h_cls, self.params["score_weight"]),
                  self.params["score_bias"])
        return T.reshape(s, ())

    def score(self, qid: str, did: str, q_text: str = "", d_text: str = "") -> float:
        ids = pair_token_ids(self.vocab, q_text, d_text, self.cfg.max_len)
        return float(self.score_tensor(ids).data)

    def train(self, triples: list[TrainTriple], queries: dict[str, str],
              corpus: dict[str, str], rng: np.random.Generator) -> list[float]:
        """Per-query contrastive loss over {positive} + hard negatives."""
        from .model import encoder_core_names

        cfg = self.cfg
        trainable = subset(self.params, encoder_core_names(cfg) + ["score_weight", "score_bias"])
        opt = AdamW(trainable, lr=cfg.teacher_lr,
                    betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
                    weight_decay=cfg.weight_decay)
        usable = [t for t in triples if t.negatives]
        if not usable:
            raise UsageError("teacher training needs triples with hard negatives")
        history: list[float] = []
        for _ in range(cfg.teacher_epochs):
            order = rng.permutation(len(usable))
            for start in range(0, len(order), cfg.finetune_batch):
                batch = [usable[i] for i in order[start:start + cfg.finetune_batch]]
                opt.zero_grad()
                rows = []
                for t in batch:
                    cand = [t.positive] + t.negatives
                    scores = stack_scalars([
                        self.score_tensor(pair_token_ids(self.vocab, queries[t.query_id],
                                                         corpus[did], cfg.max_len))
                        for did in cand
                    ])
                    rows.append(_row_nll(scores, 0, cfg.temperature))
                loss = T.reduce_mean(T.concat(rows, axis=0))
                T.backward(loss)
                _fill_missing_grads(trainable)
                opt.step()
                history.append(float(loss.data))
        return history

    def score_table(self, triples: list[TrainTriple], queries: dict[str, str],
                    corpus: dict[str, str]) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for t in triples:
            for did in [t.positive] + t.negatives:
                if (t.query_id, did) not in out:
                    out[(t.query_id, did)] = self.score(t.query_id, did,
                                                        queries[t.query_id], corpus[did])
        return out


def _fill_missing_grads(trainable: dict[str, Tensor]) -> None:
    """A batch can legitimately miss a term (e.g. no valid ordinary tokens
    anywhere); give those parameters a zero gradient instead of failing."""
    for p in trainable.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# Stage driver loops
# ---------------------------------------------------------------------------


def _tokenized(vocab: Vocabulary, texts: dict[str, str], max_len: int) -> dict[str, np.ndarray]:
    return {key: np.asarray(vocab.encode(text, max_len), dtype=np.int64)
            for key, text in texts.items()}


def run_stage1(params: ModelParams, vocab: Vocabulary, queries: dict[str, str],
               corpus: dict[str, str], qrels: dict[tuple[str, str], int],
               cfg: RunConfig, rng: np.random.Generator) -> list[float]:
    """In-batch contrastive fine-tuning over all (query, positive) pairs."""
    positives = positives_by_query(qrels)
    pairs = [(qid, did) for qid in queries for did in positives.get(qid, [])]
    if len(pairs) < 2:
        raise UsageError("stage 1 needs at least two (query, positive) pairs")
    q_tok = _tokenized(vocab, queries, cfg.max_len)
    d_tok = _tokenized(vocab, corpus, cfg.max_len)
    trainable = subset(params, scoring_param_names(cfg))
    opt = AdamW(trainable, lr=cfg.finetune_lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    history: list[float] = []
    for _ in range(cfg.stage1_epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), cfg.finetune_batch):
            chunk = [pairs[i] for i in order[start:start + cfg.finetune_batch]]
            if len(chunk) < 2:
                continue
            opt.zero_grad()
            loss = stage1_loss(params,
                               [q_tok[qid] for qid, _ in chunk],
                               [d_tok[did] for _, did in chunk],
                               cfg.temperature)
            T.backward(loss)
            _fill_missing_grads(trainable)
            opt.step()
            history.append(float(loss.data))
    return history


def run_stage2(params: ModelParams, vocab: Vocabulary, queries: dict[str, str],
               corpus: dict[str, str], triples: list[TrainTriple],
               cfg: RunConfig, rng: np.random.Generator) -> list[float]:
    """Contrastive fine-tuning with mined hard negatives in the denominator."""
    if len(triples) < 2:
        raise UsageError("stage 2 needs at least two training triples")
    for t in triples:
        t.validate()
    q_tok = _tokenized(vocab, queries, cfg.max_len)
    d_tok = _tokenized(vocab, corpus, cfg.max_len)
    trainable = subset(params, scoring_param_names(cfg))
    opt = AdamW(trainable, lr=cfg.finetune_lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    history: list[float] = []
    for _ in range(cfg.stage2_epochs):
        order = rng.permutation(len(triples))
        for start in range(0, len(order), cfg.finetune_batch):
            chunk = [triples[i] for i in order[start:start + cfg.finetune_batch]]
            if len(chunk) < 2:
                continue
            opt.zero_grad()
            loss = stage2_loss(params,
                               [q_tok[t.query_id] for t in chunk],
                               [d_tok[t.positive] for t in chunk],
                               [[d_tok[n] for n in t.negatives] for t in chunk],
                               cfg.temperature)
            T.backward(loss)
            _fill_missing_grads(trainable)
            opt.step()
            history.append(float(loss.data))
    return history


def run_stage3(params: ModelParams, vocab: Vocabulary, queries: dict[str, str],
               corpus: dict[str, str], triples: list[TrainTriple],
               teacher_scores: dict[tuple[str, str], float],
               cfg: RunConfig, rng: np.random.Generator) -> list[float]:
    """Distill the teacher's candidate-set distribution into the retriever."""
    if not triples:
        raise UsageError("stage 3 needs training triples")
    q_tok = _tokenized(vocab, queries, cfg.max_len)
    d_tok = _tokenized(vocab, corpus, cfg.max_len)
    trainable = subset(params, scoring_param_names(cfg))
    opt = AdamW(trainable, lr=cfg.finetune_lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    history: list[float] = []
    for _ in range(cfg.stage3_epochs):
        order = rng.permutation(len(triples))
        for start in range(0, len(order), cfg.finetune_batch):
            chunk = [triples[i] for i in order[start:start + cfg.finetune_batch]]
            opt.zero_grad()
            rows = []
            for t in chunk:
                cand = [t.positive] + t.negatives
                try:
                    raw = np.array([teacher_scores[(t.query_id, did)] for did in cand])
                except KeyError as exc:
                    raise ValidationError(
                        f"teacher score missing for query {t.query_id!r}, doc {exc.args[0][1]!r}"
                    ) from None
                rows.append(stage3_kd_loss(params, q_tok[t.query_id],
                                           [d_tok[did] for did in cand],
                                           kd_sigma(raw), cfg.temperature))
            loss = T.reduce_mean(stack_scalars(rows))
            T.backward(loss)
            _fill_missing_grads(trainable)
            opt.step()
            history.append(float(loss.data))
    return history
