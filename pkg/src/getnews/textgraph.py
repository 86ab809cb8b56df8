"""Token sequences and merged-word co-occurrence graphs.

A text becomes a graph by sliding a fixed-size window over its tokens,
connecting each window's center position to every other position, then
merging repeated words into a single node.  Self-edges produced by
merging are dropped; self-connection enters only through the +I term of
the symmetric normalization (A + I scaled by inverse sqrt degrees).

All functions here are pure and deterministic: node order is first
occurrence, and identical input yields bit-identical output.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


def split_words(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip edge punctuation.

    Tokens that are nothing but punctuation are dropped; interior
    punctuation (don't, u.s) survives.
    """
    words = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            words.append(raw[start:end])
    return words


@dataclass(frozen=True)
class TokenSeq:
    """Vocabulary indices for one claim or evidence, post-truncation."""

    tokens: tuple[int, ...]
    raw_len: int = field(default=-1)

    def __post_init__(self):
        if self.raw_len == -1:
            object.__setattr__(self, "raw_len", len(self.tokens))
        if self.raw_len != len(self.tokens):
            raise ValueError(f"raw_len {self.raw_len} != len(tokens) {len(self.tokens)}")

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize(text: str, vocab: Mapping[str, int], unk_index: int, max_len: int) -> TokenSeq:
    """Map text to at most `max_len` vocabulary indices (OOV -> UNK)."""
    words = split_words(text)[:max_len]
    return TokenSeq(tuple(vocab.get(w, unk_index) for w in words))


@dataclass(frozen=True)
class TextGraph:
    """Merged-word graph: binary adjacency plus its normalized form.

    `node_vocab[i]` is the vocabulary index of node i (first-occurrence
    order).  `adj_raw` is symmetric 0/1 with a zero diagonal; `adj_norm`
    entry (i, j) is (adj_raw[i,j] + [i==j]) / sqrt(deg_i * deg_j) with
    deg_i = 1 + sum_j adj_raw[i,j].
    """

    node_vocab: tuple[int, ...]
    adj_raw: np.ndarray
    adj_norm: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_vocab)


def window_spans(length: int, window: int) -> list[tuple[int, int]]:
    """Start/end pairs of every span: full width until the right edge,
    then truncated."""
    return [(i, min(i + window, length)) for i in range(length)]


def span_center(span_len: int) -> int:
    return (span_len - 1) // 2


def position_edges(length: int, window: int) -> set[tuple[int, int]]:
    """Center-to-others position pairs over all spans, as sorted tuples."""
    edges: set[tuple[int, int]] = set()
    for start, end in window_spans(length, window):
        center = start + span_center(end - start)
        for other in range(start, end):
            if other != center:
                edges.add((min(center, other), max(center, other)))
    return edges


def normalize(adj_raw: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization of A with implicit self-loops."""
    n = adj_raw.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    a = np.asarray(adj_raw, dtype=np.float64)
    deg = 1.0 + a.sum(axis=1)
    return (a + np.eye(n)) / np.sqrt(np.outer(deg, deg))


def build_graph(seq: TokenSeq, window: int) -> TextGraph:
    """Co-occurrence graph of a token sequence.

    Duplicate words collapse onto one node; a positional edge whose two
    endpoints merged is discarded rather than kept as a self-edge.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    node_of: dict[int, int] = {}
    for tok in seq.tokens:
        if tok not in node_of:
            node_of[tok] = len(node_of)
    n = len(node_of)
    adj = np.zeros((n, n), dtype=np.int64)
    for i, j in position_edges(len(seq), window):
        u, v = node_of[seq.tokens[i]], node_of[seq.tokens[j]]
        if u != v:
            adj[u, v] = 1
            adj[v, u] = 1
    return TextGraph(tuple(node_of), adj, normalize(adj))


def dump_graphs(graphs: Iterable[tuple[str, TextGraph]], index_to_word, path) -> None:
    """Write one JSON record per graph: {id, node_words, edges, adj_norm}."""
    with open(path, "w", encoding="utf-8") as fh:
        for graph_id, g in graphs:
            upper = np.triu_indices(g.n_nodes, k=1)
            edges = [[int(i), int(j)] for i, j in zip(*upper) if g.adj_raw[i, j]]
            record = {
                "id": graph_id,
                "node_words": [index_to_word[v] for v in g.node_vocab],
                "edges": edges,
                "adj_norm": [[float(x) for x in row] for row in g.adj_norm],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
