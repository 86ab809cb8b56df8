"""Redundancy scoring and node discarding on evidence graphs.

Each refinement step scores every live node with a dedicated 1-wide
gated layer run on projected features, discards the floor(rate * live)
highest scorers by zeroing their adjacency rows and columns (no
re-normalization), and excludes them from all later computation via the
liveness mask.  An evidence miner layer is one semantics-encoder pass
followed by one refinement step; the full evidence pipeline stacks
those and finishes with a final encoder pass.

Scoring parameters are disjoint from the encoder's.  With score gating
off (the default) the discrete discard decision is the scores' only
consumer, so those parameters receive exactly zero gradient; switching
gating on multiplies retained rows by sigmoid(score), which restores a
gradient path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .encoder import GgnnParams, NodeFeatures, ggnn_forward
from .errors import NumericError
from .textgraph import TextGraph


@dataclass(frozen=True)
class RefineParams:
    """Score projector (width x 1) plus the 1-wide scoring layer."""

    prefix: str
    width: int
    score_ggnn: GgnnParams = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "score_ggnn", GgnnParams(f"{self.prefix}.score_ggnn", 1))

    @property
    def projector(self) -> str:
        return f"{self.prefix}.W_s"

    def allocate(self, store: nc.ParamStore) -> None:
        store.add_glorot(self.projector, self.width, 1)
        self.score_ggnn.allocate(store)

    def tensor_names(self) -> list[str]:
        return [self.projector] + self.score_ggnn.tensor_names()


def redundancy_scores(
    adj_norm: np.ndarray,
    feats: NodeFeatures,
    params: RefineParams,
    leaves: nc.ParamLeaves,
) -> nc.Node:
    """Per-node scalar scores (N x 1); dead rows stay zero."""
    projected = feats.h @ leaves[params.projector]
    scored = ggnn_forward(adj_norm, NodeFeatures(projected, feats.mask), params.score_ggnn, leaves)
    return scored.h


def select_discard(scores: np.ndarray, live: np.ndarray, rate: float) -> np.ndarray:
    """Indices of the floor(rate * live_count) highest-scoring live nodes.

    Ties break toward the lower node index.
    """
    live_idx = [i for i in range(len(scores)) if live[i]]
    k = int(rate * len(live_idx))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    ranked = sorted(live_idx, key=lambda i: (-scores[i], i))
    return np.array(sorted(ranked[:k]), dtype=np.int64)


def mask_nodes(adj_norm: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Zero the named rows and columns; everything else is untouched."""
    out = adj_norm.copy()
    if len(idx):
        out[idx, :] = 0.0
        out[:, idx] = 0.0
    return out


@dataclass
class EsmResult:
    adj: np.ndarray
    feats: NodeFeatures
    discarded: np.ndarray  # indices newly discarded by this layer
    scores: nc.Node


def esm_layer(
    adj_norm: np.ndarray,
    feats: NodeFeatures,
    encoder: GgnnParams,
    refine: RefineParams,
    rate: float,
    leaves: nc.ParamLeaves,
    score_gating: bool = False,
) -> EsmResult:
    """One evidence miner step: encode, score, discard, mask."""
    encoded = ggnn_forward(adj_norm, feats, encoder, leaves)
    scores = redundancy_scores(adj_norm, encoded, refine, leaves)
    live_count = encoded.live_count()
    if int(rate * live_count) >= live_count and live_count > 0:
        raise NumericError("discard rate leaves no nodes")
    idx = select_discard(scores.value[:, 0], encoded.mask, rate)
    new_mask = encoded.mask.copy()
    new_mask[idx] = False
    h = encoded.h
    if score_gating:
        h = h * nc.sigmoid(scores)
    h = nc.masked_fill(h, new_mask[:, None], 0.0)
    return EsmResult(mask_nodes(adj_norm, idx), NodeFeatures(h, new_mask), idx, scores)


@dataclass
class EvidenceEncoding:
    feats: NodeFeatures
    adj: np.ndarray
    discarded_per_layer: list[np.ndarray]


def encode_evidence(
    graph: TextGraph,
    feats: NodeFeatures,
    miners: list[tuple[GgnnParams, RefineParams]],
    final_encoder: GgnnParams,
    rate: float,
    leaves: nc.ParamLeaves,
    score_gating: bool = False,
    ssr: bool = True,
) -> EvidenceEncoding:
    """Evidence pipeline: miner stack, then a final encoder pass.

    With zero miner layers this degenerates to a single encoder pass.
    `ssr=False` removes refinement entirely: miner layers become bare
    encoder passes (equivalent to rate 0, with scoring skipped).
    """
    adj = graph.adj_norm
    discards: list[np.ndarray] = []
    for encoder, refine in miners:
        if ssr:
            step = esm_layer(adj, feats, encoder, refine, rate, leaves, score_gating)
            adj, feats = step.adj, step.feats
            discards.append(step.discarded)
        else:
            feats = ggnn_forward(adj, feats, encoder, leaves)
            discards.append(np.zeros(0, dtype=np.int64))
    feats = ggnn_forward(adj, feats, final_encoder, leaves)
    return EvidenceEncoding(feats, adj, discards)
