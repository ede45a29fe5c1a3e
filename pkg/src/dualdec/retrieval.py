"""Exact hybrid retrieval: dense matrix + inverted lists, plus rank metrics.

The index realizes the hybrid inner product at corpus scale without any
pruning: the sparse partial scores are accumulated by posting traversal,
then the dense dot products are added.  Score ties in rankings break by
doc id ascending so results are reproducible.
"""

from __future__ import annotations

import logging
import struct

import numpy as np

from .errors import UsageError, ValidationError
from .represent import HybridVector, QueryRepresentation

logger = logging.getLogger(__name__)

IDX_MAGIC = b"DDIX"
IDX_VERSION = 1


class HybridIndex:
    """Immutable after build; safe for concurrent searches."""

    def __init__(self, doc_ids: list[str], dense: np.ndarray,
                 postings: dict[int, list[tuple[int, float]]], k: int):
        self.doc_ids = doc_ids
        self.dense = dense                    # (n_docs, d') float32
        self.postings = postings              # vocab id -> [(doc ordinal, weight)]
        self.k = k
        # flat posting arrays for traversal, vocab id ascending
        self._post_vids = np.array(sorted(postings), dtype=np.int64)
        self._post_ordinals = [np.array([o for o, _ in postings[v]], dtype=np.int64)
                               for v in self._post_vids]
        self._post_weights = [np.array([w for _, w in postings[v]], dtype=np.float64)
                              for v in self._post_vids]

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def d_prime(self) -> int:
        return self.dense.shape[1] if self.dense.ndim == 2 else 0


def build_index(records: list[tuple[str, HybridVector]]) -> HybridIndex:
    """Records: (doc_id, HybridVector) with consistent d' and k."""
    doc_ids: list[str] = []
    dense_rows: list[np.ndarray] = []
    postings: dict[int, list[tuple[int, float]]] = {}
    seen: set[str] = set()
    d_prime = None
    k = None
    for ordinal, (doc_id, vec) in enumerate(records):
        if doc_id in seen:
            raise ValidationError(f"duplicate doc id {doc_id!r} in index input")
        seen.add(doc_id)
        if d_prime is None:
            d_prime, k = vec.dense.shape[0], vec.sparse_ids.shape[0]
        elif vec.dense.shape[0] != d_prime or vec.sparse_ids.shape[0] != k:
            raise ValidationError(
                f"doc {doc_id!r}: inconsistent dims (d'={vec.dense.shape[0]}, k={vec.sparse_ids.shape[0]})"
            )
        doc_ids.append(doc_id)
        dense_rows.append(vec.dense.astype(np.float32))
        for vid, w in zip(vec.sparse_ids, vec.sparse_weights):
            postings.setdefault(int(vid), []).append((ordinal, float(w)))
    dense = np.vstack(dense_rows) if dense_rows else np.zeros((0, 0), dtype=np.float32)
    return HybridIndex(doc_ids, dense, postings, k or 0)


def search(index: HybridIndex, q: QueryRepresentation, topk: int) -> list[tuple[str, float]]:
    """Exact top-k by the hybrid inner product; ties break by doc id."""
    n = index.n_docs
    if n == 0:
        return []
    if index.d_prime != q.dense.shape[0]:
        raise UsageError(f"index d'={index.d_prime} does not match query dim {q.dense.shape[0]}")
    mu = q.mu.astype(np.float64)
    scores = np.zeros(n, dtype=np.float64)
    for vid, ordinals, weights in zip(index._post_vids, index._post_ordinals,
                                      index._post_weights):
        np.add.at(scores, ordinals, mu[vid] * weights)
    scores += index.dense.astype(np.float64) @ q.dense.astype(np.float64)
    order = np.lexsort((np.array(index.doc_ids), -scores))[:topk]
    return [(index.doc_ids[i], float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# Index serialization
# ---------------------------------------------------------------------------


def write_index(path, index: HybridIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(IDX_MAGIC)
        fh.write(struct.pack("<HIIQ", IDX_VERSION, index.d_prime, index.k, index.n_docs))
        for doc_id in index.doc_ids:
            did = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(did)) + did)
        fh.write(index.dense.astype("<f4").tobytes())
        fh.write(struct.pack("<I", len(index.postings)))
        for vid in sorted(index.postings):
            plist = index.postings[vid]
            fh.write(struct.pack("<II", vid, len(plist)))
            for ordinal, w in plist:
                fh.write(struct.pack("<If", ordinal, w))


def read_index(path) -> HybridIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != IDX_MAGIC:
        raise ValidationError(f"{path}: not an index file (bad magic)")
    version, d_prime, k, n_docs = struct.unpack_from("<HIIQ", blob, 4)
    if version != IDX_VERSION:
        raise ValidationError(f"{path}: unsupported index version {version}")
    off = 4 + struct.calcsize("<HIIQ")
    doc_ids = []
    for _ in range(n_docs):
        (id_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        doc_ids.append(blob[off:off + id_len].decode("utf-8"))
        off += id_len
    dense = np.frombuffer(blob, dtype="<f4", count=n_docs * d_prime, offset=off)
    dense = dense.reshape(n_docs, d_prime).copy()
    off += 4 * n_docs * d_prime
    (n_lists,) = struct.unpack_from("<I", blob, off)
    off += 4
    postings: dict[int, list[tuple[int, float]]] = {}
    for _ in range(n_lists):
        vid, plen = struct.unpack_from("<II", blob, off)
        off += 8
        plist = []
        for _ in range(plen):
            ordinal, w = struct.unpack_from("<If", blob, off)
            off += 8
            plist.append((ordinal, w))
        postings[vid] = plist
    return HybridIndex(doc_ids, dense, postings, k)


# ---------------------------------------------------------------------------
# Rank metrics
# ---------------------------------------------------------------------------


def _grouped_positives(qrels: dict[tuple[str, str], int]) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for (qid, did), g in qrels.items():
        if g > 0:
            out.setdefault(qid, {})[did] = g
    return out


def evaluate_runs(runs: dict[str, list[tuple[str, float]]],
                  qrels: dict[tuple[str, str], int],
                  cutoffs: dict[str, int] | None = None) -> dict[str, float]:
    """Mean MRR/Recall/NDCG at the given cutoffs over evaluable queries.

    Queries missing from the qrels (or without any positive) are excluded
    and counted in ``queries_skipped``.
    """
    cutoffs = cutoffs or {"mrr": 10, "recall_a": 50, "recall_b": 1000, "ndcg": 10}
    positives = _grouped_positives(qrels)
    mrr_k = cutoffs["mrr"]
    ndcg_k = cutoffs["ndcg"]
    rec_ks = [cutoffs["recall_a"], cutoffs["recall_b"]]

    sums = {f"mrr@{mrr_k}": 0.0, f"ndcg@{ndcg_k}": 0.0}
    for rk in rec_ks:
        sums[f"recall@{rk}"] = 0.0
    n_eval = 0
    n_skipped = 0
    for qid in runs:
        rel = positives.get(qid)
        if not rel:
            logger.warning("query %s missing from qrels (or has no positives); excluded", qid)
            n_skipped += 1
            continue
        ranked = [did for did, _ in runs[qid]]
        n_eval += 1
        sums[f"mrr@{mrr_k}"] += mrr_at_k(ranked, rel, mrr_k)
        for rk in rec_ks:
            sums[f"recall@{rk}"] += recall_at_k(ranked, rel, rk)
        sums[f"ndcg@{ndcg_k}"] += ndcg_at_k(ranked, rel, ndcg_k)

    metrics = {key: (val / n_eval if n_eval else 0.0) for key, val in sums.items()}
    metrics["queries_evaluated"] = n_eval
    metrics["queries_skipped"] = n_skipped
    return metrics


def mrr_at_k(ranked: list[str], relevant: dict[str, int], k: int) -> float:
    for rank, did in enumerate(ranked[:k], start=1):
        if did in relevant:
            return 1.0 / rank
    return 0.0


def recall_at_k(ranked: list[str], relevant: dict[str, int], k: int) -> float:
    hits = sum(1 for did in ranked[:k] if did in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: list[str], relevant: dict[str, int], k: int) -> float:
    """Gain 2^grade - 1, discount log2(rank + 1), normalized by ideal DCG."""
    dcg = 0.0
    for rank, did in enumerate(ranked[:k], start=1):
        grade = relevant.get(did, 0)
        if grade:
            dcg += (2.0**grade - 1.0) / np.log2(rank + 1.0)
    ideal = sorted(relevant.values(), reverse=True)[:k]
    idcg = sum((2.0**g - 1.0) / np.log2(r + 1.0) for r, g in enumerate(ideal, start=1))
    return dcg / idcg if idcg > 0 else 0.0


# ---------------------------------------------------------------------------
# Run file IO (TREC-compatible ordering)
# ---------------------------------------------------------------------------


def write_run(path, runs: dict[str, list[tuple[str, float]]]) -> None:
    """query_id<TAB>doc_id<TAB>rank<TAB>score, ranks starting at 1."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, ranked in runs.items():
            for rank, (did, sc) in enumerate(ranked, start=1):
                fh.write(f"{qid}\t{did}\t{rank}\t{sc:.6f}\n")


def read_run(path) -> dict[str, list[tuple[str, float]]]:
    runs: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 fields")
            qid, did, rank, sc = parts
            lst = runs.setdefault(qid, [])
            if int(rank) != len(lst) + 1:
                raise ValidationError(f"{path}:{lineno}: rank {rank} out of order")
            lst.append((did, float(sc)))
    return runs
