"""Reaction-equation knowledge graph: interning, parsing, splits, hyperedges.

An equation is a triple (educt set, enzyme, product set).  Compounds and
enzymes are interned to dense integer ids; equations whose enzyme column
carries the literal sentinel ``?`` are kept separately as the incomplete
set.  Educt sets and product sets are deduplicated across all equations
into a role-keyed hyperedge universe: two equations with the same educt
compounds share one educt hyperedge, but an identical compound set used
once as educts and once as products yields two distinct hyperedges.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MISSING_ENZYME = "?"


class EquationFormatError(ValueError):
    """Malformed input row; message carries the line number."""


class Role(str, Enum):
    EDUCT = "educt"
    PRODUCT = "product"


class InternTable:
    """Bijective string<->dense-id mapping in first-seen order."""

    def __init__(self, names=()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> int | None:
        return self._ids.get(name)

    def name_of(self, idx: int) -> str:
        return self._names[idx]

    def names(self) -> list[str]:
        return list(self._names)

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids


@dataclass(frozen=True)
class EquationTriple:
    """One reaction: educts -> products, optionally catalyzed by an enzyme.

    Compound sets are stored sorted by id and duplicate-free; the two
    sides may overlap (reversible reactions, shared co-factors).
    """

    educts: tuple[int, ...]
    enzyme: int | None
    products: tuple[int, ...]

    def __post_init__(self):
        if not self.educts or not self.products:
            raise ValueError("equation requires nonempty educts and products")

    @property
    def complete(self) -> bool:
        return self.enzyme is not None


def _canonical(ids) -> tuple[int, ...]:
    return tuple(sorted(set(ids)))


@dataclass(frozen=True)
class HyperedgeKey:
    role: Role
    compounds: tuple[int, ...]


class HyperedgeUniverse:
    """Role-keyed deduplicated educt/product sets with dense ids."""

    def __init__(self):
        self._ids: dict[HyperedgeKey, int] = {}
        self._keys: list[HyperedgeKey] = []

    def intern(self, role: Role, compounds: tuple[int, ...]) -> int:
        key = HyperedgeKey(role, _canonical(compounds))
        idx = self._ids.get(key)
        if idx is None:
            idx = len(self._keys)
            self._ids[key] = idx
            self._keys.append(key)
        return idx

    def id_of(self, role: Role, compounds) -> int | None:
        return self._ids.get(HyperedgeKey(role, _canonical(compounds)))

    def key_of(self, idx: int) -> HyperedgeKey:
        return self._keys[idx]

    def role_of(self, idx: int) -> Role:
        return self._keys[idx].role

    def members(self, idx: int) -> tuple[int, ...]:
        return self._keys[idx].compounds

    def ids_with_role(self, role: Role) -> list[int]:
        return [i for i, k in enumerate(self._keys) if k.role == role]

    def __len__(self) -> int:
        return len(self._keys)


@dataclass
class EquationKG:
    """Parsed equation corpus plus intern tables and hyperedge universe."""

    compounds: InternTable
    enzymes: InternTable
    complete: list[EquationTriple]
    incomplete: list[EquationTriple]
    duplicates_dropped: int = 0
    universe: HyperedgeUniverse = field(default_factory=HyperedgeUniverse)
    # per-triple (educt hyperedge, product hyperedge), aligned with
    # complete + incomplete concatenated in that order
    _edge_pairs: dict[int, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self._edge_pairs:
            self._index_hyperedges()

    def _index_hyperedges(self):
        for i, triple in enumerate(self.all_triples()):
            s = self.universe.intern(Role.EDUCT, triple.educts)
            p = self.universe.intern(Role.PRODUCT, triple.products)
            self._edge_pairs[i] = (s, p)

    def all_triples(self) -> list[EquationTriple]:
        return self.complete + self.incomplete

    def edge_pair(self, triple: EquationTriple) -> tuple[int, int]:
        s = self.universe.id_of(Role.EDUCT, triple.educts)
        p = self.universe.id_of(Role.PRODUCT, triple.products)
        if s is None or p is None:
            raise KeyError(f"triple not indexed: {triple}")
        return s, p

    def compound_roles(self) -> tuple[set[int], set[int]]:
        """Compound ids appearing in complete vs incomplete equations."""
        in_complete: set[int] = set()
        in_incomplete: set[int] = set()
        for t in self.complete:
            in_complete.update(t.educts)
            in_complete.update(t.products)
        for t in self.incomplete:
            in_incomplete.update(t.educts)
            in_incomplete.update(t.products)
        return in_complete, in_incomplete


def hyperedge_universe(kg: EquationKG) -> HyperedgeUniverse:
    """The role-keyed hyperedge table shared by complete and incomplete equations."""
    return kg.universe


# -- parsing -----------------------------------------------------------------

def _ingest(rows, compounds: InternTable, enzymes: InternTable):
    """rows: iterable of (lineno, educt_names, enzyme_name_or_None, product_names)."""
    complete: list[EquationTriple] = []
    incomplete: list[EquationTriple] = []
    seen: set[tuple] = set()
    dropped = 0
    for lineno, educts, enzyme, products in rows:
        if not educts or not products:
            raise EquationFormatError(f"line {lineno}: empty compound list")
        e_ids = _canonical(compounds.intern(c) for c in educts)
        p_ids = _canonical(compounds.intern(c) for c in products)
        m = None if enzyme is None else enzymes.intern(enzyme)
        key = (e_ids, m, p_ids)
        if key in seen:
            dropped += 1
            continue
        seen.add(key)
        triple = EquationTriple(e_ids, m, p_ids)
        (complete if m is not None else incomplete).append(triple)
    return complete, incomplete, dropped


def _tsv_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise EquationFormatError(
                    f"line {lineno}: expected 3 tab-separated columns, got {len(cols)}")
            educts = [c.strip() for c in cols[0].split(";") if c.strip()]
            products = [c.strip() for c in cols[2].split(";") if c.strip()]
            enzyme = cols[1].strip()
            yield lineno, educts, (None if enzyme == MISSING_ENZYME else enzyme), products


def _json_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise EquationFormatError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(records, list):
        raise EquationFormatError("line 1: top-level JSON value must be an array")
    for i, rec in enumerate(records, start=1):
        if not isinstance(rec, dict) or "educts" not in rec or "products" not in rec:
            raise EquationFormatError(f"line {i}: object needs 'educts' and 'products'")
        enzyme = rec.get("enzyme")
        if enzyme == MISSING_ENZYME:
            enzyme = None
        yield i, list(rec["educts"]), enzyme, list(rec["products"])


def parse_equation_file(path, fmt: str | None = None,
                        compounds: InternTable | None = None,
                        enzymes: InternTable | None = None) -> EquationKG:
    """Read a TSV or JSON equation file into an EquationKG.

    TSV rows are ``educts <TAB> enzyme <TAB> products`` with semicolon-joined
    compound lists and ``?`` marking a missing enzyme; ``#`` lines are
    comments.  ``fmt`` defaults from the file extension.  Existing intern
    tables may be passed to share an id space across several files.
    """
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "tsv"
    if fmt not in ("tsv", "json"):
        raise ValueError(f"unknown equation format: {fmt!r}")
    compounds = compounds if compounds is not None else InternTable()
    enzymes = enzymes if enzymes is not None else InternTable()
    rows = _tsv_rows(path) if fmt == "tsv" else _json_rows(path)
    complete, incomplete, dropped = _ingest(rows, compounds, enzymes)
    if dropped:
        log.warning("%s: dropped %d duplicate equations", path.name, dropped)
    return EquationKG(compounds, enzymes, complete, incomplete, dropped)


def load_equations(data_path, incomplete_path=None) -> EquationKG:
    """Parse a complete-equation file, optionally merging an incomplete file."""
    kg = parse_equation_file(data_path)
    if incomplete_path is not None:
        extra = parse_equation_file(incomplete_path,
                                    compounds=kg.compounds, enzymes=kg.enzymes)
        merged_complete = kg.complete + extra.complete
        merged_incomplete = kg.incomplete + extra.incomplete
        return EquationKG(kg.compounds, kg.enzymes, merged_complete,
                          merged_incomplete,
                          kg.duplicates_dropped + extra.duplicates_dropped)
    return kg


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Train/valid/test ratios over the complete equations, plus RNG seed."""

    ratios: tuple[float, float, float] = (8.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios):
            raise ValueError("split ratios must be positive")


def _largest_remainder(n: int, ratios) -> list[int]:
    total = sum(ratios)
    exact = [n * r / total for r in ratios]
    sizes = [int(e) for e in exact]
    for _ in range(n - sum(sizes)):
        rem = [e - s for e, s in zip(exact, sizes)]
        i = int(np.argmax(rem))
        sizes[i] += 1
        exact[i] = sizes[i]  # prevent re-picking the same bucket
    return sizes


def split(kg: EquationKG, spec: SplitSpec):
    """Deterministic 3-way partition of the complete equations.

    Sizes follow the largest-remainder rounding of the requested ratios
    (each within one of exact).  Incomplete equations are never split;
    they stay available to graph construction as a whole.
    """
    n = len(kg.complete)
    if n < 10:
        raise ValueError(f"need at least 10 complete equations to split, have {n}")
    sizes = _largest_remainder(n, spec.ratios)
    order = np.random.default_rng(spec.seed).permutation(n)
    bounds = np.cumsum(sizes)
    train = [kg.complete[i] for i in order[:bounds[0]]]
    valid = [kg.complete[i] for i in order[bounds[0]:bounds[1]]]
    test = [kg.complete[i] for i in order[bounds[1]:bounds[2]]]
    return train, valid, test
