"""Two-level hypergraph over reaction equations.

Level one is compound-to-hyperedge incidence (which compounds belong to
which educt/product set); level two is a typed hyperedge-to-hyperedge
adjacency derived from shared compounds.  Edge type follows the roles of
the two overlapping hyperedges: educt/educt sharing, product/product
sharing, or cross sharing between an educt set and a product set.
Self-loops are excluded; a hyperedge's own compounds enter the encoder
through its membership aggregation instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .kg import EquationKG, EquationTriple, Role

log = logging.getLogger(__name__)


class SharingEdgeType(IntEnum):
    EDUCT_SHARING = 0
    PRODUCT_SHARING = 1
    CROSS_SHARING = 2


# index of the compound-membership relation in the encoder's edge-type table
MEMBERSHIP_TYPE = 3


class UnknownHyperedgeError(KeyError):
    pass


class OutOfVocabularyError(ValueError):
    """A query hyperedge contains no known compounds."""


def edge_type_for_roles(role_a: Role, role_b: Role) -> SharingEdgeType:
    if role_a == Role.EDUCT and role_b == Role.EDUCT:
        return SharingEdgeType.EDUCT_SHARING
    if role_a == Role.PRODUCT and role_b == Role.PRODUCT:
        return SharingEdgeType.PRODUCT_SHARING
    return SharingEdgeType.CROSS_SHARING


@dataclass(frozen=True)
class NeighborEntry:
    """One typed attention slot: a neighboring hyperedge and its sampled members."""

    hyperedge: int
    edge_type: SharingEdgeType
    compounds: tuple[int, ...]


@dataclass(frozen=True)
class SubHypergraph:
    """The sampled neighborhood of one target hyperedge (encoder input).

    ``entries`` hold up to eta1 typed neighbor slots; ``target_compounds``
    and each entry's ``compounds`` hold up to eta2 member compounds.
    Padding to rectangular arrays (and the masks that mark padded slots)
    happens in the encoder's batch packer.
    """

    target: int
    target_compounds: tuple[int, ...]
    entries: tuple[NeighborEntry, ...]
    homogeneous: bool = False


class Hypergraph:
    """Immutable incidence + typed adjacency over a chosen equation subset."""

    def __init__(self, n_compounds: int, homogeneous: bool = False):
        self.n_compounds = n_compounds
        self.homogeneous = homogeneous
        self._members: dict[int, tuple[int, ...]] = {}
        self._roles: dict[int, Role] = {}
        self._compound_edges: dict[int, list[int]] = {}
        # ordered pair (i, j) -> set of SharingEdgeType
        self._adjacency: dict[int, dict[int, set[SharingEdgeType]]] = {}

    # -- construction (module-internal; use build()) -------------------
    def _add_hyperedge(self, edge_id: int, role: Role, members: tuple[int, ...]):
        if edge_id in self._members:
            return
        self._members[edge_id] = members
        self._roles[edge_id] = role
        self._adjacency[edge_id] = {}
        for c in members:
            self._compound_edges.setdefault(c, []).append(edge_id)

    def _link_all(self):
        for c, edges in self._compound_edges.items():
            for a in edges:
                for b in edges:
                    if a == b:
                        continue
                    t = edge_type_for_roles(self._roles[a], self._roles[b])
                    self._adjacency[a].setdefault(b, set()).add(t)

    # -- queries --------------------------------------------------------
    def __contains__(self, edge_id: int) -> bool:
        return edge_id in self._members

    def hyperedges(self) -> list[int]:
        return sorted(self._members)

    def members(self, edge_id: int) -> tuple[int, ...]:
        self._check(edge_id)
        return self._members[edge_id]

    def role(self, edge_id: int) -> Role:
        self._check(edge_id)
        return self._roles[edge_id]

    def neighbors(self, edge_id: int) -> dict[int, set[SharingEdgeType]]:
        self._check(edge_id)
        return self._adjacency[edge_id]

    def incidence_column(self, edge_id: int) -> tuple[int, ...]:
        return self.members(edge_id)

    def incidence_row(self, compound: int) -> tuple[int, ...]:
        return tuple(sorted(self._compound_edges.get(compound, ())))

    def typed_edges(self):
        """All (i, j, type) entries, both orientations, deterministic order."""
        out = []
        for i in sorted(self._adjacency):
            for j in sorted(self._adjacency[i]):
                for t in sorted(self._adjacency[i][j]):
                    out.append((i, j, t))
        return out

    def _check(self, edge_id: int):
        if edge_id not in self._members:
            raise UnknownHyperedgeError(f"hyperedge {edge_id} not in graph")

    # -- sampling --------------------------------------------------------
    def _sample(self, pool: list, budget: int, rng: np.random.Generator | None):
        if len(pool) <= budget:
            return list(pool)
        if rng is None:
            raise ValueError("sampling above budget requires an rng")
        picked = rng.choice(len(pool), size=budget, replace=False)
        return [pool[i] for i in sorted(picked)]

    def sample_neighborhood(self, target: int, eta1: int, eta2: int,
                            rng: np.random.Generator | None = None) -> SubHypergraph:
        """Uniformly sample up to eta1 neighbors and eta2 compounds per hyperedge.

        Take-all when a pool fits its budget; the eta2 bound applies to the
        target's own compounds as well as to each neighbor's.
        """
        self._check(target)
        if eta1 < 1 or eta2 < 1:
            raise ValueError("eta1 and eta2 must be >= 1")
        neighbor_ids = self._sample(sorted(self._adjacency[target]), eta1, rng)
        tgt_comp = tuple(self._sample(list(self._members[target]), eta2, rng))
        entries = []
        for j in neighbor_ids:
            comp = tuple(self._sample(list(self._members[j]), eta2, rng))
            for t in sorted(self._adjacency[target][j]):
                entries.append(NeighborEntry(j, t, comp))
        return SubHypergraph(target, tgt_comp, tuple(entries), self.homogeneous)

    def attach_query_hyperedge(self, compound_set, role: Role,
                               eta2: int | None = None,
                               rng: np.random.Generator | None = None) -> SubHypergraph:
        """Neighborhood for an unseen hyperedge, typed against the built graph.

        Every known hyperedge overlapping ``compound_set`` becomes a
        neighbor, except one identical in role and compounds (mirroring
        the no-self-loop rule, so querying an existing hyperedge's own
        set reproduces its built neighborhood).  Unknown compounds are
        dropped with a warning; no parameters are touched.
        """
        requested = list(dict.fromkeys(compound_set))
        known = [c for c in requested if 0 <= c < self.n_compounds]
        if len(known) < len(requested):
            log.warning("attach: dropped %d unknown compounds",
                        len(requested) - len(known))
        if not known:
            raise OutOfVocabularyError(
                "out-of-vocabulary hyperedge: no known compounds in query set")
        members = tuple(sorted(set(known)))
        candidates: set[int] = set()
        for c in members:
            candidates.update(self._compound_edges.get(c, ()))
        self_key = (role, members)
        entries = []
        member_set = set(members)
        tgt_comp = tuple(self._sample(list(members), eta2, rng)) if eta2 else members
        for j in sorted(candidates):
            if (self._roles[j], self._members[j]) == self_key:
                continue
            if member_set.isdisjoint(self._members[j]):
                continue
            comp = list(self._members[j])
            comp = tuple(self._sample(comp, eta2, rng)) if eta2 else tuple(comp)
            entries.append(NeighborEntry(j, edge_type_for_roles(role, self._roles[j]), comp))
        return SubHypergraph(-1, tgt_comp, tuple(entries), self.homogeneous)


def build(kg: EquationKG, triples: list[EquationTriple] | None = None,
          include_incomplete: bool = True, homogeneous: bool = False) -> Hypergraph:
    """Build incidence and typed adjacency over the given equations.

    ``triples`` defaults to every complete equation; the incomplete set is
    included unless switched off, so collaboration signals from
    enzyme-less equations are available during training.
    """
    if triples is None:
        triples = kg.complete
    pool = list(triples) + (kg.incomplete if include_incomplete else [])
    g = Hypergraph(len(kg.compounds), homogeneous=homogeneous)
    for t in pool:
        s, p = kg.edge_pair(t)
        g._add_hyperedge(s, Role.EDUCT, t.educts)
        g._add_hyperedge(p, Role.PRODUCT, t.products)
    g._link_all()
    return g


def dump_typed_edges(graph: Hypergraph, path) -> int:
    """Debug dump, one ``i <TAB> j <TAB> type`` line per typed edge."""
    edges = graph.typed_edges()
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, t in edges:
            fh.write(f"{i}\t{j}\t{SharingEdgeType(t).name}\n")
    return len(edges)
