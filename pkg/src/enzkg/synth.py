"""Synthetic reaction-equation corpora with plantable relation patterns.

The generator designates a fraction of enzymes as symmetric (every
emitted equation is accompanied by its educt/product swap under the same
enzyme) and a fraction as inverse pairs (the swap goes to the partner
enzyme).  A slice of those pattern-completing companions is withheld
into a separate held-out list: their enzyme-less versions join the
incomplete set, so a model sees the structure but never the label, and
pattern learning becomes measurable as ranking accuracy on the held-out
triples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import MISSING_ENZYME


class InfeasibleSpecError(ValueError):
    pass


Row = tuple[tuple[str, ...], str | None, tuple[str, ...]]


@dataclass(frozen=True)
class SyntheticSpec:
    n_compounds: int
    n_enzymes: int
    n_complete: int
    n_incomplete: int
    mean_educts: float = 2.0
    mean_products: float = 2.0
    symmetric_fraction: float = 0.0
    inverse_fraction: float = 0.0
    holdout_fraction: float = 0.25
    # when set, each enzyme draws its compounds from an own random pool of
    # this size, giving relations a learnable compound signature
    enzyme_pool_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_compounds, self.n_enzymes, self.n_complete, self.n_incomplete)
        if any(c <= 0 for c in counts[:3]) or self.n_incomplete < 0:
            raise InfeasibleSpecError("all corpus counts must be positive")
        for name in ("symmetric_fraction", "inverse_fraction", "holdout_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InfeasibleSpecError(f"{name} must lie in [0, 1]")
        if self.mean_educts < 1 or self.mean_products < 1:
            raise InfeasibleSpecError("mean set sizes must be at least 1")
        if self.enzyme_pool_size is not None and not (
                1 <= self.enzyme_pool_size <= self.n_compounds):
            raise InfeasibleSpecError(
                "enzyme_pool_size must lie in [1, n_compounds]")


@dataclass
class SynthData:
    complete: list[Row] = field(default_factory=list)
    incomplete: list[Row] = field(default_factory=list)
    heldout: list[Row] = field(default_factory=list)
    symmetric_enzymes: list[str] = field(default_factory=list)
    inverse_pairs: list[tuple[str, str]] = field(default_factory=list)


def _draw_set(rng: np.random.Generator, pool: list[str], mean: float) -> tuple[str, ...]:
    size = 1 + rng.poisson(max(mean - 1.0, 0.0))
    size = int(min(size, len(pool)))
    picked = rng.choice(len(pool), size=size, replace=False)
    return tuple(sorted(pool[i] for i in picked))


def generate(spec: SyntheticSpec) -> SynthData:
    """Build a corpus honoring the designated pattern closures.

    Symmetric enzyme m: the emitted (S, m, P) set is closed under swap
    across complete + heldout.  Inverse pair (m1, m2): every (S, m1, P)
    has (P, m2, S) in complete + heldout.  Held-out companions also
    appear enzyme-less in the incomplete list.
    """
    rng = np.random.default_rng(spec.seed)
    compounds = [f"c{i}" for i in range(spec.n_compounds)]
    enzymes = [f"e{i}" for i in range(spec.n_enzymes)]

    n_sym = round(spec.symmetric_fraction * spec.n_enzymes)
    n_inv = round(spec.inverse_fraction * spec.n_enzymes / 2.0)
    if n_sym + 2 * n_inv > spec.n_enzymes:
        raise InfeasibleSpecError(
            f"{n_sym} symmetric enzymes plus {n_inv} inverse pairs exceed "
            f"{spec.n_enzymes} enzymes")
    symmetric = set(enzymes[:n_sym])
    inverse_of = {}
    pairs = []
    for i in range(n_inv):
        a, b = enzymes[n_sym + 2 * i], enzymes[n_sym + 2 * i + 1]
        inverse_of[a] = b
        inverse_of[b] = a
        pairs.append((a, b))

    pools = {m: compounds for m in enzymes}
    if spec.enzyme_pool_size is not None:
        for m in enzymes:
            picked = rng.choice(spec.n_compounds, size=spec.enzyme_pool_size,
                                replace=False)
            pools[m] = [compounds[i] for i in sorted(picked)]

    data = SynthData(symmetric_enzymes=sorted(symmetric), inverse_pairs=pairs)
    seen: set[Row] = set()
    pattern_incomplete: list[Row] = []
    seen_incomplete: set[Row] = set()

    def fresh_equation(max_tries: int = 200) -> Row:
        for _ in range(max_tries):
            m = enzymes[rng.integers(spec.n_enzymes)]
            s = _draw_set(rng, pools[m], spec.mean_educts)
            p = _draw_set(rng, pools[m], spec.mean_products)
            row = (s, m, p)
            mirror_m = m if m in symmetric else inverse_of.get(m)
            mirror = (p, mirror_m, s) if mirror_m else None
            if row not in seen and (mirror is None or
                                    (mirror not in seen and mirror != row)):
                return row
        raise InfeasibleSpecError(
            "could not draw a fresh equation; corpus too large for the pools")

    while len(data.complete) < spec.n_complete:
        s, m, p = fresh_equation()
        seen.add((s, m, p))
        data.complete.append((s, m, p))
        mirror_m = m if m in symmetric else inverse_of.get(m)
        if mirror_m is None:
            continue
        mirror = (p, mirror_m, s)
        seen.add(mirror)
        if (rng.random() < spec.holdout_fraction
                or len(data.complete) >= spec.n_complete):
            data.heldout.append(mirror)
            blank = (p, None, s)
            if blank not in seen_incomplete:
                seen_incomplete.add(blank)
                pattern_incomplete.append(blank)
        else:
            data.complete.append(mirror)

    if len(pattern_incomplete) > spec.n_incomplete:
        raise InfeasibleSpecError(
            f"{len(pattern_incomplete)} held-out pattern equations exceed the "
            f"incomplete budget {spec.n_incomplete}")
    data.incomplete.extend(pattern_incomplete)
    while len(data.incomplete) < spec.n_incomplete:
        s, _, p = fresh_equation()
        row = (s, None, p)
        if row in seen_incomplete:
            continue
        seen_incomplete.add(row)
        data.incomplete.append(row)
    return data


def check_pattern_closure(data: SynthData) -> bool:
    """Brute-force verification of the declared closures over complete + heldout."""
    by_enzyme: dict[str, set[tuple]] = {}
    for s, m, p in data.complete + data.heldout:
        by_enzyme.setdefault(m, set()).add((s, p))
    for m in data.symmetric_enzymes:
        triples = by_enzyme.get(m, set())
        if any((p, s) not in triples for s, p in triples):
            return False
    for a, b in data.inverse_pairs:
        fwd = by_enzyme.get(a, set())
        bwd = by_enzyme.get(b, set())
        if any((p, s) not in bwd for s, p in fwd):
            return False
        if any((p, s) not in fwd for s, p in bwd):
            return False
    return True


def rows_to_tsv(rows: list[Row], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, m, p in rows:
            enzyme = MISSING_ENZYME if m is None else m
            fh.write(f"{';'.join(s)}\t{enzyme}\t{';'.join(p)}\n")


def write_corpus(data: SynthData, outdir) -> dict[str, Path]:
    """Write complete.tsv / incomplete.tsv / heldout.tsv plus meta.json."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "complete": outdir / "complete.tsv",
        "incomplete": outdir / "incomplete.tsv",
        "heldout": outdir / "heldout.tsv",
    }
    rows_to_tsv(data.complete, paths["complete"])
    rows_to_tsv(data.incomplete, paths["incomplete"])
    rows_to_tsv(data.heldout, paths["heldout"])
    meta = {"symmetric_enzymes": data.symmetric_enzymes,
            "inverse_pairs": data.inverse_pairs,
            "counts": {"complete": len(data.complete),
                       "incomplete": len(data.incomplete),
                       "heldout": len(data.heldout)}}
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2))
    return paths
