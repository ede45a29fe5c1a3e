"""Hybrid dense+sparse representations and query-document scoring.

A document is represented by a d'-dim projection of its sentence embedding
concatenated with the top-k entries of its max-pooled vocabulary-space
scores, stored as sorted (id, weight) pairs.  A query keeps its full
vocabulary-space vector; scoring sums the dense inner product with the
query's values at the document's retained indices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .decoder import ot_maxpool, ot_project
from .encoder import encode
from .errors import UsageError, ValidationError
from .model import ModelParams
from .tensor import Tensor
from .text import Vocabulary

EMB_MAGIC = b"DDEM"
EMB_VERSION = 1


@dataclass
class HybridVector:
    dense: np.ndarray         # (d',) float32
    sparse_ids: np.ndarray    # (k,) uint16, strictly increasing
    sparse_weights: np.ndarray  # (k,) float32, aligned with sparse_ids


@dataclass
class QueryRepresentation:
    dense: np.ndarray         # (d',) float32
    mu: np.ndarray            # (|V|,) float32 vocabulary-space scores


def project_cls(h: np.ndarray, cls_proj: np.ndarray) -> np.ndarray:
    """Project the sentence embedding to d' dimensions: h^T W."""
    h = np.asarray(h).reshape(-1)
    if h.shape[0] != cls_proj.shape[0]:
        raise UsageError(f"projection expects a {cls_proj.shape[0]}-dim embedding, got {h.shape[0]}")
    return h @ cls_proj


def sparsify_ot(mu: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k entries of mu by value (ties keep the lower index), returned
    sorted by index ascending."""
    mu = np.asarray(mu).reshape(-1)
    if not 1 <= k <= mu.shape[0]:
        raise UsageError(f"top-k must satisfy 1 <= k <= {mu.shape[0]}, got {k}")
    order = np.argsort(-mu, kind="stable")[:k]
    idx = np.sort(order)
    return idx, mu[idx]


def _mu_tensor(params: ModelParams, out) -> Tensor | None:
    if out.ot_positions.size == 0:
        return None
    return ot_maxpool(ot_project(params, out.hidden, out.ot_positions))


def document_vector(params: ModelParams, ids) -> HybridVector:
    """Inference-path document representation over unmasked token ids."""
    cfg = params.cfg
    out = encode(params, ids)
    dense = project_cls(out.h_cls.data, params["cls_proj"].data).astype(np.float32)
    mu_t = _mu_tensor(params, out)
    mu = np.zeros(cfg.vocab_size, dtype=np.float64) if mu_t is None else mu_t.data
    idx, weights = sparsify_ot(mu, cfg.top_k)
    return HybridVector(
        dense=dense,
        sparse_ids=idx.astype(np.uint16),
        sparse_weights=weights.astype(np.float32),
    )


def query_vector(params: ModelParams, ids) -> QueryRepresentation:
    """Inference-path query representation; the vocabulary-space vector is
    kept in full unless the config requests symmetric sparsification."""
    cfg = params.cfg
    out = encode(params, ids)
    dense = project_cls(out.h_cls.data, params["cls_proj"].data).astype(np.float32)
    mu_t = _mu_tensor(params, out)
    mu = np.zeros(cfg.vocab_size, dtype=np.float64) if mu_t is None else np.asarray(mu_t.data, dtype=np.float64)
    if cfg.query_sparsify:
        idx, weights = sparsify_ot(mu, cfg.top_k)
        mu = np.zeros_like(mu)
        mu[idx] = weights
    return QueryRepresentation(dense=dense, mu=mu.astype(np.float32))


def encode_document(params: ModelParams, vocab: Vocabulary, text: str) -> HybridVector:
    if not text.strip():
        raise UsageError("cannot encode an empty document")
    return document_vector(params, vocab.encode(text, params.cfg.max_len))


def encode_query(params: ModelParams, vocab: Vocabulary, text: str) -> QueryRepresentation:
    if not text.strip():
        raise UsageError("cannot encode an empty query")
    return query_vector(params, vocab.encode(text, params.cfg.max_len))


def score(q: QueryRepresentation, d: HybridVector) -> float:
    """Dense inner product plus the sparse sum over the document's retained
    indices, accumulated in float64."""
    if q.dense.shape != d.dense.shape:
        raise UsageError(f"dense dims disagree: {q.dense.shape} vs {d.dense.shape}")
    dense_part = float(np.dot(q.dense.astype(np.float64), d.dense.astype(np.float64)))
    sparse_part = float(np.dot(q.mu[d.sparse_ids].astype(np.float64),
                               d.sparse_weights.astype(np.float64)))
    return dense_part + sparse_part


# ---------------------------------------------------------------------------
# Differentiable scoring path (used by fine-tuning losses)
# ---------------------------------------------------------------------------


@dataclass
class DocTensors:
    dense: Tensor             # (1, d')
    mu: Tensor                # (|V|,)
    top_idx: np.ndarray       # (k,) retained indices, fixed by forward values


@dataclass
class QueryTensors:
    dense: Tensor             # (1, d')
    mu: Tensor                # (|V|,)


def document_tensors(params: ModelParams, ids) -> DocTensors:
    cfg = params.cfg
    out = encode(params, ids)
    dense = T.matmul(out.h_cls, params["cls_proj"])
    mu_t = _mu_tensor(params, out)
    if mu_t is None:
        mu_t = T.tensor(np.zeros(cfg.vocab_size), dtype=out.hidden.dtype)
    idx, _ = sparsify_ot(mu_t.data, cfg.top_k)
    return DocTensors(dense=dense, mu=mu_t, top_idx=idx)


def query_tensors(params: ModelParams, ids) -> QueryTensors:
    cfg = params.cfg
    out = encode(params, ids)
    dense = T.matmul(out.h_cls, params["cls_proj"])
    mu_t = _mu_tensor(params, out)
    if mu_t is None:
        mu_t = T.tensor(np.zeros(cfg.vocab_size), dtype=out.hidden.dtype)
    return QueryTensors(dense=dense, mu=mu_t)


def pair_score(q: QueryTensors, d: DocTensors) -> Tensor:
    """Differentiable hybrid score; the document's retained index set is
    treated as fixed (subgradient through the selected entries only)."""
    dense = T.reshape(T.matmul(q.dense, T.transpose(d.dense, (1, 0))), ())
    qs = T.take(q.mu, d.top_idx, axis=0)
    ds = T.take(d.mu, d.top_idx, axis=0)
    sparse = T.reduce_sum(T.mul(qs, ds))
    return T.add(dense, sparse)


def stack_scalars(values: list[Tensor]) -> Tensor:
    """Scalars -> (n,) vector."""
    return T.concat([T.reshape(v, (1,)) for v in values], axis=0)


# ---------------------------------------------------------------------------
# Binary embedding file
# ---------------------------------------------------------------------------


def serialized_record_size(d_prime: int, k: int, id_bits: int = 16) -> int:
    """Payload bytes per document record (doc-id prefix excluded)."""
    if id_bits == 16:
        id_bytes = 2 * k
    else:
        id_bytes = (id_bits * k + 7) // 8
    return 4 * d_prime + 4 * k + id_bytes


def pack_ids(ids: np.ndarray, bits: int = 15) -> bytes:
    """Pack ids into a little-endian bitstream of ``bits`` bits each."""
    acc = 0
    for i, v in enumerate(np.asarray(ids, dtype=np.uint64)):
        if int(v) >= (1 << bits):
            raise UsageError(f"id {int(v)} does not fit in {bits} bits")
        acc |= int(v) << (bits * i)
    n = (bits * len(ids) + 7) // 8
    return acc.to_bytes(n, "little")


def unpack_ids(blob: bytes, count: int, bits: int = 15) -> np.ndarray:
    acc = int.from_bytes(blob, "little")
    mask = (1 << bits) - 1
    return np.array([(acc >> (bits * i)) & mask for i in range(count)], dtype=np.int64)


def write_embeddings(path, records, d_prime: int, k: int) -> None:
    """Records: iterable of (doc_id, HybridVector); fixed d', k throughout."""
    with open(path, "wb") as fh:
        body = []
        count = 0
        for doc_id, vec in records:
            if vec.dense.shape != (d_prime,):
                raise UsageError(f"doc {doc_id!r}: dense dim {vec.dense.shape} != ({d_prime},)")
            if vec.sparse_ids.shape != (k,) or vec.sparse_weights.shape != (k,):
                raise UsageError(f"doc {doc_id!r}: sparse length != k={k}")
            did = doc_id.encode("utf-8")
            rec = struct.pack("<H", len(did)) + did
            rec += vec.dense.astype("<f4").tobytes()
            pairs = np.empty(k, dtype=[("id", "<u2"), ("w", "<f4")])
            pairs["id"] = vec.sparse_ids
            pairs["w"] = vec.sparse_weights
            rec += pairs.tobytes()
            body.append(rec)
            count += 1
        fh.write(EMB_MAGIC + struct.pack("<HIIQ", EMB_VERSION, d_prime, k, count))
        fh.write(b"".join(body))


def read_embeddings(path) -> tuple[list[tuple[str, HybridVector]], int, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMB_MAGIC:
        raise ValidationError(f"{path}: not an embedding file (bad magic)")
    version, d_prime, k, count = struct.unpack_from("<HIIQ", blob, 4)
    if version != EMB_VERSION:
        raise ValidationError(f"{path}: unsupported embedding version {version}")
    off = 4 + struct.calcsize("<HIIQ")
    out = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        doc_id = blob[off:off + id_len].decode("utf-8")
        off += id_len
        dense = np.frombuffer(blob, dtype="<f4", count=d_prime, offset=off).copy()
        off += 4 * d_prime
        pairs = np.frombuffer(blob, dtype=[("id", "<u2"), ("w", "<f4")], count=k, offset=off)
        off += 6 * k
        out.append((doc_id, HybridVector(
            dense=dense,
            sparse_ids=pairs["id"].astype(np.uint16),
            sparse_weights=pairs["w"].astype(np.float32),
        )))
    if off != len(blob):
        raise ValidationError(f"{path}: trailing bytes after {count} records")
    return out, d_prime, k
