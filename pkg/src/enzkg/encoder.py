"""Hypergraph transformer encoder producing hyperedge embeddings.

Each hyperedge starts from the mean of its sampled member compounds'
feature rows plus a learned membership-relation vector.  Each layer lets
the target attend over its typed neighbor slots (neighbor state plus the
relation vector of the sharing type feeds the key/value projections),
followed by residual + layer norm, a feed-forward block, and a second
residual + layer norm.  Neighbor states stay at their membership
aggregation; only the target is refined across layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hypergraph import MEMBERSHIP_TYPE, SubHypergraph

N_EDGE_TYPES = 4  # three sharing relations + compound membership

# runtime sanity cap on embedding norms; anything above this means the
# optimization diverged
DEFAULT_NORM_CAP = 1e6


@dataclass
class LayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class EncoderParams:
    """Compound features, relation-type vectors, and per-layer weights."""

    features: Tensor        # (|C|, n) trainable compound features
    edge_types: Tensor      # (4, n) sharing x3 + membership
    layers: list[LayerParams]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"features": self.features, "edge_types": self.edge_types}
        for i, lp in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "ln1_gain", "ln1_bias", "ff_w1",
                         "ff_b1", "ff_w2", "ff_b2", "ln2_gain", "ln2_bias"):
                out[f"layer{i}.{name}"] = getattr(lp, name)
        return out


def init_params(n_compounds: int, dim: int, n_layers: int = 1,
                hidden_dim: int | None = None,
                rng: np.random.Generator | None = None) -> EncoderParams:
    """All entries uniform in [-1/sqrt(dim), 1/sqrt(dim)], deterministic per rng."""
    if rng is None:
        rng = np.random.default_rng(0)
    if n_layers < 1:
        raise ValueError("need at least one layer")
    hidden_dim = hidden_dim if hidden_dim is not None else 2 * dim
    bound = 1.0 / math.sqrt(dim)

    def p(*shape):
        return ad.parameter(None, rng=rng, bound=bound, shape=shape)

    layers = [LayerParams(wq=p(dim, dim), wk=p(dim, dim), wv=p(dim, dim),
                          ln1_gain=p(dim), ln1_bias=p(dim),
                          ff_w1=p(dim, hidden_dim), ff_b1=p(hidden_dim),
                          ff_w2=p(hidden_dim, dim), ff_b2=p(dim),
                          ln2_gain=p(dim), ln2_bias=p(dim))
              for _ in range(n_layers)]
    return EncoderParams(features=p(n_compounds, dim),
                         edge_types=p(N_EDGE_TYPES, dim), layers=layers)


@dataclass(frozen=True)
class HyperedgeEmbedding:
    """Final-layer embedding of one hyperedge."""

    vector: np.ndarray
    hyperedge: int
    layer: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"non-finite embedding for hyperedge {self.hyperedge}")


@dataclass
class PackedBatch:
    """Rectangular index arrays + masks for a batch of sub-hypergraphs.

    Padded compound slots carry index 0 and a False mask; padded neighbor
    slots likewise.  Masked slots never contribute to the forward value.
    """

    target_compounds: np.ndarray   # (B, Cc) int64
    target_mask: np.ndarray        # (B, Cc) bool
    neighbor_compounds: np.ndarray  # (B, K, Cc) int64
    neighbor_comp_mask: np.ndarray  # (B, K, Cc) bool
    neighbor_types: np.ndarray     # (B, K) int64 edge-type rows
    neighbor_mask: np.ndarray      # (B, K) bool

    @property
    def size(self) -> int:
        return self.target_compounds.shape[0]


def pack_batch(subs: list[SubHypergraph]) -> PackedBatch:
    """Pad a list of sub-hypergraphs to shared (neighbor, compound) capacities."""
    if not subs:
        raise ValueError("empty batch")
    b = len(subs)
    k = max(1, max(len(s.entries) for s in subs))
    cc = max(1, max(max((len(s.target_compounds),
                         *(len(e.compounds) for e in s.entries)))
                    for s in subs))
    tgt = np.zeros((b, cc), dtype=np.int64)
    tgt_m = np.zeros((b, cc), dtype=bool)
    nbr = np.zeros((b, k, cc), dtype=np.int64)
    nbr_cm = np.zeros((b, k, cc), dtype=bool)
    types = np.zeros((b, k), dtype=np.int64)
    nbr_m = np.zeros((b, k), dtype=bool)
    for i, s in enumerate(subs):
        tc = s.target_compounds
        tgt[i, :len(tc)] = tc
        tgt_m[i, :len(tc)] = True
        for j, entry in enumerate(s.entries):
            ec = entry.compounds
            nbr[i, j, :len(ec)] = ec
            nbr_cm[i, j, :len(ec)] = True
            # the homogeneous variant folds all sharing relations into one row
            types[i, j] = 0 if s.homogeneous else int(entry.edge_type)
            nbr_m[i, j] = True
    return PackedBatch(tgt, tgt_m, nbr, nbr_cm, types, nbr_m)


def _masked_mean_rows(features: Tensor, idx: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean of feature rows over the last index axis, honoring the mask.

    idx/mask of shape (..., Cc); returns (..., n) with all-masked rows zero.
    """
    n = features.shape[1]
    lead = idx.shape[:-1]
    cc = idx.shape[-1]
    rows = ad.embedding_lookup(features, idx.reshape(-1, cc))  # (prod(lead), Cc, n)
    m = mask.reshape(-1, cc, 1).astype(np.float64)
    counts = np.maximum(m.sum(axis=1), 1.0)  # (prod(lead), 1)
    summed = ad.tsum(ad.mul(rows, Tensor(m)), axis=1)  # (prod(lead), n)
    mean = ad.mul(summed, Tensor(1.0 / counts))
    return ad.reshape(mean, lead + (n,))


def _edge_type_rows(params: EncoderParams, types: np.ndarray) -> Tensor:
    b, k = types.shape
    rows = ad.embedding_lookup(params.edge_types, types.reshape(-1))
    return ad.reshape(rows, (b, k, params.dim))


def layer_forward(lp: LayerParams, target: Tensor, neighbors: Tensor,
                  type_rows: Tensor, neighbor_mask: np.ndarray,
                  dropout_rate: float = 0.0,
                  rng: np.random.Generator | None = None,
                  training: bool = False) -> Tensor:
    """One attention + feed-forward refinement of the target states.

    target (B, n); neighbors (B, K, n); type_rows (B, K, n); mask (B, K).
    Rows with no unmasked neighbor skip attention (zero context) and go
    through the residual/feed-forward path only.
    """
    b, n = target.shape
    key_in = ad.add(neighbors, type_rows)
    q = ad.reshape(ad.matmul(target, lp.wq), (b, 1, n))
    k = ad.matmul(key_in, lp.wk)
    v = ad.matmul(key_in, lp.wv)
    ctx = ad.scaled_dot_attention(q, k, v, neighbor_mask,
                                  dropout_rate=dropout_rate, rng=rng,
                                  training=training)
    u = ad.layer_norm(ad.add(target, ad.reshape(ctx, (b, n))),
                      lp.ln1_gain, lp.ln1_bias)
    h = ad.relu(ad.add(ad.matmul(u, lp.ff_w1), lp.ff_b1))
    h = ad.dropout(h, dropout_rate, rng, training) if training and dropout_rate > 0 else h
    f = ad.add(ad.matmul(h, lp.ff_w2), lp.ff_b2)
    return ad.layer_norm(ad.add(u, f), lp.ln2_gain, lp.ln2_bias)


def encode_batch(params: EncoderParams, batch: PackedBatch,
                 dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None,
                 training: bool = False) -> Tensor:
    """Final target states (B, n) for a packed batch of sub-hypergraphs."""
    membership = ad.reshape(
        ad.embedding_lookup(params.edge_types, np.array([MEMBERSHIP_TYPE])),
        (params.dim,))
    target = ad.add(_masked_mean_rows(params.features, batch.target_compounds,
                                      batch.target_mask), membership)
    neighbors = ad.add(_masked_mean_rows(params.features, batch.neighbor_compounds,
                                         batch.neighbor_comp_mask), membership)
    type_rows = _edge_type_rows(params, batch.neighbor_types)
    for lp in params.layers:
        target = layer_forward(lp, target, neighbors, type_rows,
                               batch.neighbor_mask, dropout_rate, rng, training)
    return target


def encode(sub: SubHypergraph, params: EncoderParams,
           norm_cap: float = DEFAULT_NORM_CAP) -> HyperedgeEmbedding:
    """Embed a single sub-hypergraph (inference path, no dropout)."""
    out = encode_batch(params, pack_batch([sub])).data[0]
    if np.linalg.norm(out) > norm_cap:
        raise ValueError(f"embedding norm exceeds sanity cap {norm_cap:g}")
    return HyperedgeEmbedding(out, sub.target, params.n_layers)


def mean_pool_embedding(params: EncoderParams, members) -> np.ndarray:
    """Plain mean of member compound features; the no-hypergraph ablation."""
    idx = np.asarray(sorted(members), dtype=np.int64)
    return params.features.data[idx].mean(axis=0)


def mean_pool_batch(params: EncoderParams, member_lists) -> Tensor:
    """Trainable mean-pool states for a batch of hyperedge member lists."""
    cc = max(len(m) for m in member_lists)
    idx = np.zeros((len(member_lists), cc), dtype=np.int64)
    mask = np.zeros((len(member_lists), cc), dtype=bool)
    for i, m in enumerate(member_lists):
        mm = sorted(m)
        idx[i, :len(mm)] = mm
        mask[i, :len(mm)] = True
    return _masked_mean_rows(params.features, idx, mask)
