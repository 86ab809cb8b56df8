"""Gated graph layers over normalized word-graph adjacencies.

One layer aggregates each node's neighborhood (self-loop included via
the normalized adjacency), then blends the aggregate with the node's
own features through GRU-style update/reset gates:

    a = A_norm @ H @ W_a'
    z = sigmoid(a @ W_z' + H @ U_z' + b_z)
    r = sigmoid(a @ W_r' + H @ U_r' + b_r)
    h = tanh(a @ W_h' + (r * H) @ U_h' + b_h)
    out = h * z + H * (1 - z)

Weights are stored in (out, in) orientation and applied transposed.
Rows flagged dead in the node mask are forced back to exactly zero
after every layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ShapeError
from .textgraph import TextGraph

_GGNN_MATS = ("W_a", "W_z", "U_z", "W_r", "U_r", "W_h", "U_h")
_GGNN_BIASES = ("b_z", "b_r", "b_h")


@dataclass
class NodeFeatures:
    """Per-node feature rows plus a liveness mask (False = discarded)."""

    h: nc.Node
    mask: np.ndarray  # (N,) bool

    @property
    def n_nodes(self) -> int:
        return self.h.value.shape[0]

    @property
    def width(self) -> int:
        return self.h.value.shape[1]

    def live_count(self) -> int:
        return int(self.mask.sum())


def fresh_features(h: nc.Node) -> NodeFeatures:
    return NodeFeatures(h, np.ones(h.value.shape[0], dtype=bool))


@dataclass(frozen=True)
class GgnnParams:
    """Names one gated layer's tensors inside a parameter store."""

    prefix: str
    width: int

    def allocate(self, store: nc.ParamStore) -> None:
        for mat in _GGNN_MATS:
            store.add_glorot(f"{self.prefix}.{mat}", self.width, self.width)
        for bias in _GGNN_BIASES:
            store.add_zeros(f"{self.prefix}.{bias}", 1, self.width)

    def tensor_names(self) -> list[str]:
        return [f"{self.prefix}.{t}" for t in _GGNN_MATS + _GGNN_BIASES]


def ggnn_forward(
    adj_norm: np.ndarray,
    feats: NodeFeatures,
    params: GgnnParams,
    leaves: nc.ParamLeaves,
) -> NodeFeatures:
    """One gated propagation step; masked rows come out exactly zero."""
    h = feats.h
    n = h.value.shape[0]
    if adj_norm.shape != (n, n):
        raise ShapeError(f"adjacency {adj_norm.shape} vs features {h.value.shape}")
    if h.value.shape[1] != params.width:
        raise ShapeError(f"features {h.value.shape} vs layer width {params.width}")

    def p(tensor: str) -> nc.Node:
        return leaves[f"{params.prefix}.{tensor}"]

    a_mat = nc.constant(adj_norm)
    agg = a_mat @ (h @ nc.transpose(p("W_a")))
    z = nc.sigmoid(agg @ nc.transpose(p("W_z")) + h @ nc.transpose(p("U_z")) + p("b_z"))
    r = nc.sigmoid(agg @ nc.transpose(p("W_r")) + h @ nc.transpose(p("U_r")) + p("b_r"))
    cand = nc.tanh(agg @ nc.transpose(p("W_h")) + (r * h) @ nc.transpose(p("U_h")) + p("b_h"))
    out = cand * z + h * (1.0 - z)
    out = nc.masked_fill(out, feats.mask[:, None], 0.0)
    return NodeFeatures(out, feats.mask.copy())


def encode_claim(
    graph: TextGraph,
    feats: NodeFeatures,
    layers: list[GgnnParams],
    leaves: nc.ParamLeaves,
) -> NodeFeatures:
    """Stack of gated layers on the claim graph; zero layers = identity."""
    for layer in layers:
        feats = ggnn_forward(graph.adj_norm, feats, layer, leaves)
    return feats
