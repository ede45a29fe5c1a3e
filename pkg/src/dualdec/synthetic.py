"""Deterministic synthetic corpora and retrieval benchmarks.

Documents are drawn from topic word pools so masked-token prediction has
learnable structure; benchmark documents additionally carry a few anchor
words unique to them, and each query asks for one document through its
anchors.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np


def synth_corpus(n_docs: int, seed: int, n_topics: int = 16,
                 words_per_topic: int = 16, doc_len: tuple[int, int] = (6, 12),
                 noise: float = 0.05) -> dict[str, str]:
    """Topic-structured corpus with sequential regularity.

    Each document is a contiguous run over its topic's cyclic word list,
    with a small rate of shared function-word substitutions, so masked
    tokens are largely inferable from their neighbors.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    shared = [f"fn{j}" for j in range(8)]
    topics = [[f"t{t:02d}w{j:02d}" for j in range(words_per_topic)] for t in range(n_topics)]
    corpus: dict[str, str] = {}
    for i in range(n_docs):
        t = int(rng.integers(0, n_topics))
        offset = int(rng.integers(0, words_per_topic))
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        words = [topics[t][(offset + j) % words_per_topic] for j in range(length)]
        for j in range(length):
            if rng.random() < noise:
                words[j] = shared[int(rng.integers(0, len(shared)))]
        corpus[f"doc{i:05d}"] = " ".join(words)
    return corpus


def synth_transfer_benchmark(n_docs: int, n_queries: int, seed: int,
                             n_topics: int = 8, doc_words: int = 12,
                             n_bridge: int = 4, doc_len: tuple[int, int] = (9, 14)):
    """Benchmark where lexical evidence alone is ambiguous.

    Every anchor word occurs in exactly two documents from different topics,
    and each query pairs one anchor with bridge words of the target's topic
    that the target document itself does not contain.  Ranking the right
    document therefore needs topic-level semantics on top of exact matches.
    Returns (corpus, queries, qrels).
    """
    if n_docs % 2:
        raise ValueError("transfer benchmark needs an even number of docs")
    if n_queries > n_docs:
        raise ValueError(f"cannot build {n_queries} queries over {n_docs} docs")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    body = [[f"t{t:02d}w{j:02d}" for j in range(doc_words)] for t in range(n_topics)]
    bridge = [[f"t{t:02d}b{j}" for j in range(n_bridge)] for t in range(n_topics)]
    corpus: dict[str, str] = {}
    doc_topic: list[int] = []
    doc_bridge: list[str] = []
    doc_anchor: list[str] = []
    for i in range(n_docs):
        # anchor pair (2j, 2j+1): consecutive topics, so partners always differ
        t = i % n_topics
        anchor = f"a{i // 2:04d}"
        own_bridge = bridge[t][int(rng.integers(0, n_bridge))]
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        words = [body[t][int(rng.integers(0, doc_words))] for _ in range(length)]
        words[int(rng.integers(0, length))] = own_bridge
        slot = int(rng.integers(0, length))
        while words[slot] == own_bridge:
            slot = int(rng.integers(0, length))
        words[slot] = anchor
        corpus[f"doc{i:05d}"] = " ".join(words)
        doc_topic.append(t)
        doc_bridge.append(own_bridge)
        doc_anchor.append(anchor)

    target_docs = rng.choice(n_docs, size=n_queries, replace=False)
    queries: dict[str, str] = {}
    qrels: dict[tuple[str, str], int] = {}
    for qi, di in enumerate(target_docs):
        di = int(di)
        t = doc_topic[di]
        others = [b for b in bridge[t] if b != doc_bridge[di]]
        picked = [others[int(j)] for j in rng.choice(len(others), size=2, replace=False)]
        qid = f"q{qi:04d}"
        queries[qid] = " ".join([doc_anchor[di]] + picked)
        qrels[(qid, f"doc{di:05d}")] = 1
    return corpus, queries, qrels


def synth_benchmark(n_docs: int, n_queries: int, seed: int, n_topics: int = 8,
                    words_per_topic: int = 12, anchors_per_doc: int = 3,
                    doc_len: tuple[int, int] = (8, 14)):
    """Retrieval benchmark with one relevant document per query.

    Returns (corpus, queries, qrels).  Queries quote two anchor words of
    their document plus one of its topic words.
    """
    if n_queries > n_docs:
        raise ValueError(f"cannot build {n_queries} queries over {n_docs} docs")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    topics = [[f"t{t:02d}w{j:02d}" for j in range(words_per_topic)] for t in range(n_topics)]
    corpus: dict[str, str] = {}
    doc_topic: list[int] = []
    doc_anchors: list[list[str]] = []
    for i in range(n_docs):
        t = int(rng.integers(0, n_topics))
        anchors = [f"a{i:04d}x{j}" for j in range(anchors_per_doc)]
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        words = [topics[t][int(rng.integers(0, words_per_topic))] for _ in range(length)]
        slots = rng.choice(length, size=min(anchors_per_doc, length), replace=False)
        for slot, anchor in zip(slots, anchors):
            words[int(slot)] = anchor
        corpus[f"doc{i:05d}"] = " ".join(words)
        doc_topic.append(t)
        doc_anchors.append(anchors)

    target_docs = rng.choice(n_docs, size=n_queries, replace=False)
    queries: dict[str, str] = {}
    qrels: dict[tuple[str, str], int] = {}
    for qi, di in enumerate(target_docs):
        di = int(di)
        anchors = doc_anchors[di]
        picked = [anchors[int(j)] for j in rng.choice(len(anchors), size=2, replace=False)]
        topic_word = topics[doc_topic[di]][int(rng.integers(0, words_per_topic))]
        qid = f"q{qi:04d}"
        queries[qid] = " ".join(picked + [topic_word])
        qrels[(qid, f"doc{di:05d}")] = 1
    return corpus, queries, qrels
