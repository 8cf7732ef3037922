"""Filtered ranking of enzymes for relation prediction, with MR/MRR/Hit@k.

For each test triple the true enzyme competes against every interned
enzyme except those that form a *different* known-true triple with the
same (educt-hyperedge, product-hyperedge) pair.  Candidates are ordered
by the model's scores (ascending distances, or descending logits for
logit decoders); ties resolve to the mean of the optimistic and the
pessimistic rank, which keeps ranks deterministic and unbiased.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kg import EquationKG, EquationTriple
from ._util import substream

HIT_LEVELS = (1, 3, 10)


class FilterSet:
    """All known-true (s_edge, enzyme, p_edge) triples across the splits."""

    def __init__(self):
        self._by_pair: dict[tuple[int, int], set[int]] = {}
        self._triples: set[tuple[int, int, int]] = set()

    def add(self, s_edge: int, enzyme: int, p_edge: int):
        self._by_pair.setdefault((s_edge, p_edge), set()).add(enzyme)
        self._triples.add((s_edge, enzyme, p_edge))

    def __contains__(self, key: tuple[int, int, int]) -> bool:
        return key in self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def competitors_to_exclude(self, s_edge: int, p_edge: int,
                               true_enzyme: int) -> set[int]:
        others = self._by_pair.get((s_edge, p_edge), set())
        return {e for e in others if e != true_enzyme}


def build_filter_set(kg: EquationKG, triple_lists) -> FilterSet:
    filt = FilterSet()
    for triples in triple_lists:
        for t in triples:
            if t.enzyme is None:
                continue
            s, p = kg.edge_pair(t)
            filt.add(s, t.enzyme, p)
    return filt


def rank_with_ties(scores: np.ndarray, true_idx: int, excluded: set[int],
                   higher_is_better: bool = False) -> float:
    """Filtered rank of ``true_idx`` among the non-excluded candidates.

    Rank is 1-based; exact score ties contribute half a position each
    (mean of the best and worst placement the true candidate could get).
    """
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= true_idx < len(s):
        raise IndexError(f"true index {true_idx} outside candidate set of {len(s)}")
    if higher_is_better:
        s = -s
    keep = np.ones(len(s), dtype=bool)
    if excluded:
        keep[list(excluded)] = False
    keep[true_idx] = True
    st = s[true_idx]
    better = int(np.sum((s < st) & keep))
    equal = int(np.sum((s == st) & keep)) - 1  # the true candidate itself
    return better + 1 + equal / 2.0


def rank_relation(model, triple: EquationTriple, filt: FilterSet,
                  kg: EquationKG | None = None,
                  rng: np.random.Generator | None = None) -> float:
    """Filtered rank of a triple's enzyme under the model's scores."""
    kg = kg if kg is not None else model.kg
    if triple.enzyme is None or triple.enzyme >= len(kg.enzymes):
        raise ValueError(f"triple enzyme {triple.enzyme!r} is not interned")
    if rng is None:
        rng = np.random.default_rng(0)
    s_edge, p_edge = kg.edge_pair(triple)
    s_vec, p_vec = model.pair_vectors(triple, rng)
    scores = model.enzyme_scores(s_vec, p_vec)
    excluded = filt.competitors_to_exclude(s_edge, p_edge, triple.enzyme)
    return rank_with_ties(scores, triple.enzyme, excluded, model.higher_is_better)


@dataclass
class RankingReport:
    """Per-triple ranks and their MR / MRR / Hit@k aggregates."""

    ranks: list[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.ranks)

    @property
    def mr(self) -> float:
        return float(np.mean(self.ranks))

    @property
    def mrr(self) -> float:
        return float(np.mean([1.0 / r for r in self.ranks]))

    def hit_at(self, k: int) -> float:
        return float(np.mean([1.0 if r <= k else 0.0 for r in self.ranks]))

    def to_text(self) -> str:
        cols = ["MR", "MRR"] + [f"H@{k}" for k in HIT_LEVELS]
        vals = [f"{self.mr:.2f}", f"{self.mrr:.4f}"]
        vals += [f"{self.hit_at(k):.4f}" for k in HIT_LEVELS]
        width = max(len(c) for c in cols + vals) + 2
        head = "".join(c.rjust(width) for c in cols)
        body = "".join(v.rjust(width) for v in vals)
        return f"{head}\n{body}"

    def to_kv(self) -> str:
        lines = [f"triples {self.count}", f"mr {self.mr:.6f}", f"mrr {self.mrr:.6f}"]
        lines += [f"hit@{k} {self.hit_at(k):.6f}" for k in HIT_LEVELS]
        return "\n".join(lines)


def evaluate(model, triples: list[EquationTriple], filt: FilterSet,
             kg: EquationKG | None = None, seed: int = 0,
             threads: int = 1) -> RankingReport:
    """Rank every triple's enzyme; per-triple RNG substreams keep the
    result independent of evaluation order and thread count."""
    if not triples:
        raise ValueError("evaluate() requires a nonempty triple list")
    kg = kg if kg is not None else model.kg

    def one(i: int) -> float:
        return rank_relation(model, triples[i], filt, kg,
                             substream(seed, "evaluate", i))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranks = list(pool.map(one, range(len(triples))))
    else:
        ranks = [one(i) for i in range(len(triples))]
    return RankingReport(ranks=ranks)


def write_per_triple_tsv(path, kg: EquationKG, triples, ranks) -> None:
    """TSV dump: educts, enzyme, products, rank."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("educts\tenzyme\tproducts\trank\n")
        for t, r in zip(triples, ranks):
            educts = ";".join(kg.compounds.name_of(c) for c in t.educts)
            products = ";".join(kg.compounds.name_of(c) for c in t.products)
            enzyme = kg.enzymes.name_of(t.enzyme)
            fh.write(f"{educts}\t{enzyme}\t{products}\t{r:g}\n")
