"""Relation scoring and the self-adversarial negative-sampling loss.

The primary scorer keeps a head-half and a tail-half vector per enzyme
and measures ``|| S o m_head - P o m_tail ||_1`` (elementwise products,
L1 distance, lower is more plausible).  That pairing lets a single
relation represent symmetric behavior (equal halves), asymmetric
behavior (unequal halves), and inverse pairs (swapped halves).  The
translation baseline scores ``|| S + m - P ||_1``.

The loss weights each negative by a softmax over the negatives' scores
(treated as constants in backward).  The weight direction is
configurable: ``hard`` concentrates on low-distance (plausible)
negatives, ``easy`` on high-distance ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import EquationKG, EquationTriple, Role

NEGATIVE_GRID = (100, 200, 400)  # conventional search grid for n_negatives


@dataclass
class PairedRelationParams:
    """Per-enzyme head/tail halves for the paired-vector scorer."""

    head: Tensor  # (|M|, n)
    tail: Tensor  # (|M|, n)

    def named_tensors(self):
        return {"rel_head": self.head, "rel_tail": self.tail}


@dataclass
class TranslationRelationParams:
    """Single translation vector per enzyme."""

    vec: Tensor  # (|M|, n)

    def named_tensors(self):
        return {"rel_vec": self.vec}


def init_paired(n_enzymes: int, dim: int, rng: np.random.Generator) -> PairedRelationParams:
    bound = 1.0 / math.sqrt(dim)
    return PairedRelationParams(
        head=ad.parameter(None, rng=rng, bound=bound, shape=(n_enzymes, dim)),
        tail=ad.parameter(None, rng=rng, bound=bound, shape=(n_enzymes, dim)))


def init_translation(n_enzymes: int, dim: int, rng: np.random.Generator) -> TranslationRelationParams:
    bound = 1.0 / math.sqrt(dim)
    return TranslationRelationParams(
        vec=ad.parameter(None, rng=rng, bound=bound, shape=(n_enzymes, dim)))


# -- plain-array scorers (evaluation path) -----------------------------------

def pairre_score(s_emb, p_emb, m_head, m_tail) -> float:
    """L1 distance between the head-scaled and tail-scaled entity vectors."""
    s_emb, p_emb = np.asarray(s_emb), np.asarray(p_emb)
    m_head, m_tail = np.asarray(m_head), np.asarray(m_tail)
    if not s_emb.shape == p_emb.shape == m_head.shape == m_tail.shape:
        raise ValueError(
            f"scorer dimension mismatch: {s_emb.shape} {p_emb.shape} "
            f"{m_head.shape} {m_tail.shape}")
    return float(np.abs(s_emb * m_head - p_emb * m_tail).sum())


def pairre_score_all(s_emb, p_emb, heads, tails) -> np.ndarray:
    """Distances of (s, m, p) for every relation row at once."""
    return np.abs(s_emb[None, :] * heads - p_emb[None, :] * tails).sum(axis=1)


def transe_score(s_emb, p_emb, m_vec) -> float:
    s_emb, p_emb, m_vec = np.asarray(s_emb), np.asarray(p_emb), np.asarray(m_vec)
    if not s_emb.shape == p_emb.shape == m_vec.shape:
        raise ValueError(
            f"scorer dimension mismatch: {s_emb.shape} {p_emb.shape} {m_vec.shape}")
    return float(np.abs(s_emb + m_vec - p_emb).sum())


def transe_score_all(s_emb, p_emb, vecs) -> np.ndarray:
    return np.abs(s_emb[None, :] + vecs - p_emb[None, :]).sum(axis=1)


# -- tensor scorers (training path) -------------------------------------------

def pairre_distance_t(s: Tensor, p: Tensor, m_head: Tensor, m_tail: Tensor) -> Tensor:
    """Batched L1 distance over the last axis; broadcasting follows numpy."""
    return ad.l1_norm(ad.sub(ad.mul(s, m_head), ad.mul(p, m_tail)), axis=-1)

def transe_distance_t(s: Tensor, p: Tensor, m_vec: Tensor) -> Tensor:
    return ad.l1_norm(ad.sub(ad.add(s, m_vec), p), axis=-1)


# -- negative sampling ---------------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    """Margin loss settings.

    ``corruption`` picks what negatives replace: a same-role hyperedge
    (``entity``) or the enzyme (``relation``).  ``adversarial_direction``
    picks which negatives the softmax weight emphasizes: ``hard``
    (low distance) or ``easy`` (high distance).
    """

    margin: float = 6.0
    n_negatives: int = 100
    temperature: float = 1.0
    corruption: str = "entity"
    adversarial_direction: str = "hard"

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.corruption not in ("entity", "relation"):
            raise ValueError(f"unknown corruption mode {self.corruption!r}")
        if self.adversarial_direction not in ("hard", "easy"):
            raise ValueError(
                f"unknown adversarial direction {self.adversarial_direction!r}")


@dataclass(frozen=True)
class CorruptedTriple:
    """One negative: the positive triple with one slot replaced."""

    s_edge: int
    enzyme: int
    p_edge: int
    corrupted_slot: str  # "head" | "tail" | "relation"


def build_true_triple_set(kg: EquationKG, triple_lists) -> set[tuple[int, int, int]]:
    """(s_edge, enzyme, p_edge) keys of every known-true triple."""
    out = set()
    for triples in triple_lists:
        for t in triples:
            if t.enzyme is None:
                continue
            s, p = kg.edge_pair(t)
            out.add((s, t.enzyme, p))
    return out


class NegativeSampler:
    """Filtered uniform corruption of training triples.

    Entity mode flips a coin per negative and replaces the educt- or the
    product-hyperedge with a uniformly random hyperedge of the same role;
    relation mode replaces the enzyme with a uniformly random other
    enzyme.  Corruptions reproducing a known true triple are resampled;
    if one side's pool is exhausted the sampler falls through to the
    other side.
    """

    MAX_RESAMPLE = 64

    def __init__(self, kg: EquationKG, cfg: LossConfig,
                 true_triples: set[tuple[int, int, int]]):
        self.cfg = cfg
        self.true_triples = true_triples
        self.educt_pool = np.array(kg.universe.ids_with_role(Role.EDUCT), dtype=np.int64)
        self.product_pool = np.array(kg.universe.ids_with_role(Role.PRODUCT), dtype=np.int64)
        self.n_enzymes = len(kg.enzymes)

    def _entity_negative(self, s: int, m: int, p: int, prefer_head: bool,
                         rng: np.random.Generator) -> CorruptedTriple:
        for head_side in (prefer_head, not prefer_head):
            pool = self.educt_pool if head_side else self.product_pool
            if len(pool) <= 1:
                continue
            for _ in range(self.MAX_RESAMPLE):
                cand = int(pool[rng.integers(len(pool))])
                key = (cand, m, p) if head_side else (s, m, cand)
                if key not in self.true_triples:
                    return CorruptedTriple(*key, "head" if head_side else "tail")
        # both pools degenerate; fall back to the positive itself so the
        # loss stays defined (contributes ~0 learning signal)
        return CorruptedTriple(s, m, p, "head")

    def _relation_negative(self, s: int, m: int, p: int,
                           rng: np.random.Generator) -> CorruptedTriple:
        if self.n_enzymes <= 1:
            return CorruptedTriple(s, m, p, "relation")
        for _ in range(self.MAX_RESAMPLE):
            cand = int(rng.integers(self.n_enzymes - 1))
            if cand >= m:
                cand += 1  # uniform over enzymes != m
            if (s, cand, p) not in self.true_triples:
                return CorruptedTriple(s, cand, p, "relation")
        return CorruptedTriple(s, (m + 1) % self.n_enzymes, p, "relation")

    def sample(self, s_edge: int, enzyme: int, p_edge: int,
               rng: np.random.Generator) -> list[CorruptedTriple]:
        out = []
        for _ in range(self.cfg.n_negatives):
            if self.cfg.corruption == "relation":
                out.append(self._relation_negative(s_edge, enzyme, p_edge, rng))
            else:
                out.append(self._entity_negative(s_edge, enzyme, p_edge,
                                                 bool(rng.integers(2)), rng))
        return out


def sample_negatives(triple: EquationTriple, kg: EquationKG, cfg: LossConfig,
                     rng: np.random.Generator,
                     true_triples: set | None = None) -> list[CorruptedTriple]:
    """Convenience wrapper sampling ``cfg.n_negatives`` corruptions of one triple."""
    if triple.enzyme is None:
        raise ValueError("cannot corrupt an equation without an enzyme")
    if true_triples is None:
        true_triples = build_true_triple_set(kg, [kg.complete])
    sampler = NegativeSampler(kg, cfg, true_triples)
    s, p = kg.edge_pair(triple)
    return sampler.sample(s, triple.enzyme, p, rng)


# -- loss ----------------------------------------------------------------------

def adversarial_weights(neg_scores: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Softmax weights over negatives (constants under backward)."""
    sign = -1.0 if cfg.adversarial_direction == "hard" else 1.0
    logits = sign * cfg.temperature * np.asarray(neg_scores, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def self_adversarial_loss(pos_score: Tensor, neg_scores: Tensor, cfg: LossConfig,
                          frozen_weights: np.ndarray | None = None) -> Tensor:
    """Margin loss with softmax-weighted negatives.

    ``pos_score``: () or (B,) distances; ``neg_scores``: (n_neg,) or
    (B, n_neg).  Returns the mean over the batch.  ``frozen_weights``
    overrides the stop-gradient weights (used by the gradient checker to
    hold them constant across perturbations).
    """
    if neg_scores.data.size == 0:
        raise ValueError("self_adversarial_loss requires at least one negative")
    if frozen_weights is None:
        frozen_weights = adversarial_weights(neg_scores.data, cfg)
    pos_term = ad.mul(ad.logsigmoid(ad.sub(cfg.margin, pos_score)), -1.0)
    neg_ls = ad.logsigmoid(ad.sub(neg_scores, cfg.margin))
    neg_term = ad.mul(ad.tsum(ad.mul(neg_ls, Tensor(frozen_weights)), axis=-1), -1.0)
    total = ad.add(pos_term, neg_term)
    return tmean_all(total)


def tmean_all(x: Tensor) -> Tensor:
    return ad.tmean(x) if x.data.ndim > 0 else x
