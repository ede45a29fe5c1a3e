"""Vocabulary, tokenization, masking, and corpus/qrels ingestion.

The tokenizer is deliberately simple: lowercase fold, then split into word
and single-punctuation tokens.  A frequency-ranked vocabulary stands in for
a trained subword model; the training mechanics downstream do not depend on
how tokens were produced.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError, ValidationError

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
MASK_ID = 4

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[M]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def text_tokens(text: str) -> list[str]:
    """Lowercased word / punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Immutable token <-> id mapping with fixed special ids 0..4."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.id_to_token[idx]

    def is_special(self, idx: int) -> bool:
        return idx < len(SPECIAL_TOKENS)

    def encode(self, text: str, max_len: int, add_sep: bool = True) -> list[int]:
        """[CLS] + token ids (+ [SEP]), truncated to ``max_len``."""
        ids = [CLS_ID]
        body = max_len - 1 - (1 if add_sep else 0)
        for tok in text_tokens(text)[:body]:
            ids.append(self.token_to_id.get(tok, UNK_ID))
        if add_sep:
            ids.append(SEP_ID)
        return ids

    def decode(self, ids) -> str:
        """Space-joined tokens, specials skipped; inverse of tokenize for
        in-vocab text."""
        return " ".join(self.id_to_token[i] for i in ids if i >= len(SPECIAL_TOKENS))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, tok in enumerate(self.id_to_token):
                fh.write(f"{idx}\t{tok}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        id_to_token: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected 'id<TAB>token'")
                idx, tok = parts
                if int(idx) != len(id_to_token):
                    raise ValidationError(f"{path}:{lineno}: ids must be dense and ordered")
                id_to_token.append(tok)
        if id_to_token[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise ValidationError(f"{path}: special token header mismatch")
        return cls(id_to_token, {t: i for i, t in enumerate(id_to_token)})


def build_vocab(corpus: dict[str, str], size: int) -> Vocabulary:
    """Frequency-ranked vocabulary over the corpus, capped at ``size``.

    Ties are broken lexicographically so the result is reproducible.
    """
    if size < len(SPECIAL_TOKENS) + 1:
        raise UsageError(f"vocab size must be >= {len(SPECIAL_TOKENS) + 1}, got {size}")
    if not corpus:
        raise UsageError("cannot build a vocabulary from an empty corpus")
    counts: dict[str, int] = {}
    for text in corpus.values():
        for tok in text_tokens(text):
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: size - len(SPECIAL_TOKENS)]]
    id_to_token = list(SPECIAL_TOKENS) + keep
    return Vocabulary(id_to_token, {t: i for i, t in enumerate(id_to_token)})


@dataclass
class MaskedInstance:
    """One pre-training example: encoder-side masking plus decoder-side
    per-row visibility samples over the original sequence."""

    enc_ids: np.ndarray              # (L,) with [M] substitutions, position 0 = [CLS]
    original_ids: np.ndarray         # (L,) unmasked sequence
    enc_mlm_positions: np.ndarray    # indices into 1..L-1
    enc_mlm_labels: np.ndarray       # original ids at those positions
    dec_visible: list[np.ndarray]    # per row i: visible column indices


def mask_count(ratio: float, length: int) -> int:
    """Half-up round of ratio * (length - 1); positions 0 is never maskable."""
    return int(np.floor(ratio * (length - 1) + 0.5))


def mask_for_encoder(ids, ratio: float, rng: np.random.Generator):
    """Replace a uniform sample of non-[CLS] positions with [M].

    Returns (masked_ids, positions, labels); the input is not modified.
    """
    ids = np.asarray(ids, dtype=np.int64)
    L = len(ids)
    if not 0.0 < ratio < 1.0:
        raise UsageError(f"encoder masking ratio must be in (0, 1), got {ratio}")
    if L < 3:
        raise UsageError(f"sequence too short to mask (L={L} < 3)")
    n = mask_count(ratio, L)
    positions = np.sort(rng.choice(np.arange(1, L), size=n, replace=False))
    masked = ids.copy()
    labels = ids[positions].copy()
    masked[positions] = MASK_ID
    return masked, positions, labels


def visibility_sample_size(ratio: float, length: int) -> int:
    """ceil((1 - ratio) * (L - 1)) visible context columns per row."""
    return int(np.ceil((1.0 - ratio) * (length - 1)))


def sample_decoder_visibility(length: int, ratio: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Per-row visible column sets for the one-layer decoder.

    Row i sees a fresh uniform sample of non-self columns from 1..L-1, plus
    column 0 for rows i >= 1.  Row i never sees itself.  All rows share the
    same sample cardinality.
    """
    if not 0.0 < ratio < 1.0:
        raise UsageError(f"decoder masking ratio must be in (0, 1), got {ratio}")
    n_vis = visibility_sample_size(ratio, length)
    if n_vis > length - 2:
        raise UsageError(
            f"visibility sample of {n_vis} columns cannot exclude self among "
            f"{length - 1} candidates (L={length}, ratio={ratio}); increase the ratio"
        )
    visible: list[np.ndarray] = []
    for i in range(length):
        candidates = np.arange(1, length)
        candidates = candidates[candidates != i]
        sample = rng.choice(candidates, size=n_vis, replace=False)
        cols = np.sort(np.concatenate(([0], sample))) if i >= 1 else np.sort(sample)
        visible.append(cols.astype(np.int64))
    return visible


def make_instance(ids, r_enc: float, r_dec: float, rng: np.random.Generator) -> MaskedInstance:
    ids = np.asarray(ids, dtype=np.int64)
    masked, positions, labels = mask_for_encoder(ids, r_enc, rng)
    visible = sample_decoder_visibility(len(ids), r_dec, rng)
    return MaskedInstance(
        enc_ids=masked,
        original_ids=ids,
        enc_mlm_positions=positions,
        enc_mlm_labels=labels,
        dec_visible=visible,
    )


# ---------------------------------------------------------------------------
# TSV ingestion (corpus / queries / qrels)
# ---------------------------------------------------------------------------


def _load_id_text(path, kind: str) -> dict[str, str]:
    records: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'id<TAB>text', got {len(parts)} fields")
            rid, text = parts
            if rid in records:
                raise ValidationError(f"{path}:{lineno}: duplicate {kind} id {rid!r}")
            records[rid] = text
    if not records:
        logger.warning("%s: empty %s file", path, kind)
    return records


def load_corpus(path) -> dict[str, str]:
    """doc_id<TAB>text, UTF-8, LF."""
    return _load_id_text(path, "doc")


def load_queries(path) -> dict[str, str]:
    """query_id<TAB>text, UTF-8, LF."""
    return _load_id_text(path, "query")


def load_qrels(path, corpus: dict[str, str] | None = None) -> dict[tuple[str, str], int]:
    """query_id<TAB>0<TAB>doc_id<TAB>grade; doc ids are validated against
    the corpus when one is given."""
    qrels: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 tab-separated fields")
            qid, _, did, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise ValidationError(f"{path}:{lineno}: negative relevance grade {g}")
            if corpus is not None and did not in corpus:
                raise ValidationError(f"{path}:{lineno}: qrels doc id {did!r} not in corpus")
            qrels[(qid, did)] = g
    if not qrels:
        logger.warning("%s: empty qrels file", path)
    return qrels


def save_corpus(path, corpus: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for did, text in corpus.items():
            fh.write(f"{did}\t{text}\n")


def save_qrels(path, qrels: dict[tuple[str, str], int]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, did), grade in qrels.items():
            fh.write(f"{qid}\t0\t{did}\t{grade}\n")


def positives_by_query(qrels: dict[tuple[str, str], int]) -> dict[str, list[str]]:
    """Query id -> doc ids with grade > 0, in file order."""
    out: dict[str, list[str]] = {}
    for (qid, did), grade in qrels.items():
        if grade > 0:
            out.setdefault(qid, []).append(did)
    return out
