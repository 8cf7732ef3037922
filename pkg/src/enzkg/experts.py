"""Three-expert enzyme retrieval for a query substrate, plus the fusion step.

Experts: a knowledge-base lookup over complete equations, the trained
relation-prediction model applied to every equation containing the
substrate, and an adapter over externally supplied pair-level logits.
Which experts run is decided by where the substrate appears (complete
equations, incomplete equations, both, or neither); active experts'
logits are z-score normalized per expert, combined as a weighted sum,
and turned into probabilities with a softmax over every enzyme scored
by at least one active expert.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .kg import EquationKG, InternTable

log = logging.getLogger(__name__)


class ExpertId(str, Enum):
    KB = "kb"    # direct lookup of complete equations
    KGE = "kge"  # relation prediction with the trained graph model
    ML = "ml"    # external pair-level classifier logits


class NoExpertFiredError(RuntimeError):
    pass


@dataclass
class ExpertOutput:
    expert: ExpertId
    logits: dict[int, float]
    coverage: bool

    def __post_init__(self):
        if bool(self.logits) != self.coverage:
            raise ValueError("coverage flag must match logit-map emptiness")
        if self.logits and not all(np.isfinite(list(self.logits.values()))):
            raise ValueError("expert logits must be finite")


@dataclass(frozen=True)
class FusionWeights:
    """Non-negative weights (kb, kge, ml); renormalized over active experts."""

    kb: float = 0.1
    kge: float = 0.3
    ml: float = 0.6

    # conventional search grid for the three weights
    GRID = ((0.1, 0.1, 0.8), (0.1, 0.3, 0.6), (0.1, 0.7, 0.2),
            (0.3, 0.1, 0.6), (0.4, 0.1, 0.5), (0.7, 0.1, 0.2))

    def __post_init__(self):
        if min(self.kb, self.kge, self.ml) < 0:
            raise ValueError("fusion weights must be non-negative")
        if self.kb + self.kge + self.ml <= 0:
            raise ValueError("at least one fusion weight must be positive")

    def of(self, expert: ExpertId) -> float:
        return {ExpertId.KB: self.kb, ExpertId.KGE: self.kge,
                ExpertId.ML: self.ml}[expert]


# -- the three experts ---------------------------------------------------------

def kb_expert(substrate: int, kg: EquationKG) -> ExpertOutput:
    """Count enzymes of complete equations that involve the substrate."""
    counts: dict[int, float] = {}
    for t in kg.complete:
        if substrate in t.educts or substrate in t.products:
            counts[t.enzyme] = counts.get(t.enzyme, 0.0) + 1.0
    return ExpertOutput(ExpertId.KB, counts, bool(counts))


def kge_expert(substrate: int, kg: EquationKG, model,
               rng: np.random.Generator | None = None) -> ExpertOutput:
    """Relation-predict every equation containing the substrate.

    Per-enzyme logits are the model's scores, negated for distance
    decoders so that higher always means more plausible; equations are
    aggregated by per-enzyme maximum.
    """
    if model is None:
        raise ValueError("kge_expert requires a trained model")
    if rng is None:
        rng = np.random.default_rng(0)
    best: dict[int, float] = {}
    for t in kg.all_triples():
        if substrate not in t.educts and substrate not in t.products:
            continue
        s_vec, p_vec = model.pair_vectors(t, rng)
        scores = model.enzyme_scores(s_vec, p_vec)
        logits = scores if model.higher_is_better else -scores
        for e in range(len(logits)):
            v = float(logits[e])
            if e not in best or v > best[e]:
                best[e] = v
    return ExpertOutput(ExpertId.KGE, best, bool(best))


class LogitTable:
    """Pair-level logits loaded from the expert-logit TSV.

    Columns: substrate, enzyme, logit.  Enzyme names missing from the
    intern table are interned on load so fusion can rank them; duplicate
    (substrate, enzyme) rows keep the last value and count a warning.
    """

    def __init__(self):
        self.rows: dict[str, dict[int, float]] = {}
        self.duplicates = 0

    def lookup(self, substrate_name: str) -> dict[int, float]:
        return dict(self.rows.get(substrate_name, {}))


def load_logit_table(path, enzymes: InternTable) -> LogitTable:
    table = LogitTable()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(
                    f"{path}: line {lineno}: expected 3 columns, got {len(cols)}")
            if lineno == 1 and cols[2].strip().lower() == "logit":
                continue  # optional header row
            substrate, enzyme, logit = (c.strip() for c in cols)
            try:
                value = float(logit)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: logit {logit!r} is not a number") from None
            e_id = enzymes.intern(enzyme)
            bucket = table.rows.setdefault(substrate, {})
            if e_id in bucket:
                table.duplicates += 1
            bucket[e_id] = value
    if table.duplicates:
        log.warning("%s: %d duplicate (substrate, enzyme) rows, last value kept",
                    path, table.duplicates)
    return table


def ml_expert(substrate_name: str, table: LogitTable) -> ExpertOutput:
    """Verbatim logits from the external table; the universal fallback."""
    logits = table.lookup(substrate_name)
    return ExpertOutput(ExpertId.ML, logits, bool(logits))


# -- routing and fusion ----------------------------------------------------------

def route(substrate: int, kg: EquationKG,
          membership: tuple[set[int], set[int]] | None = None) -> tuple[ExpertId, ...]:
    """Active experts for a substrate, by where it appears.

    in both complete and incomplete equations -> (KB, KGE, ML);
    only incomplete -> (KGE, ML); only complete -> (KB, ML);
    nowhere -> (ML,).
    """
    in_complete, in_incomplete = (membership if membership is not None
                                  else kg.compound_roles())
    known = substrate in in_complete
    pending = substrate in in_incomplete
    if known and pending:
        return (ExpertId.KB, ExpertId.KGE, ExpertId.ML)
    if pending:
        return (ExpertId.KGE, ExpertId.ML)
    if known:
        return (ExpertId.KB, ExpertId.ML)
    return (ExpertId.ML,)


@dataclass
class FusionResult:
    ranked: list[tuple[int, float]]                 # (enzyme, probability) top-k
    fused: dict[int, float] = field(default_factory=dict)
    zscores: dict[ExpertId, dict[int, float]] = field(default_factory=dict)


def _zscore(logits: dict[int, float]) -> dict[int, float]:
    vals = np.array(list(logits.values()), dtype=np.float64)
    mu = float(vals.mean())
    sigma = float(vals.std())
    if sigma == 0.0:
        # constant logits carry no ordering information; neutral zero
        return {e: 0.0 for e in logits}
    return {e: (v - mu) / sigma for e, v in logits.items()}


def fuse(outputs: list[ExpertOutput], weights: FusionWeights, k: int = 10) -> FusionResult:
    """z-score normalize, weight, sum, softmax; ties break on enzyme id.

    Experts without coverage are skipped and the weights renormalize over
    the remainder; enzymes an active expert never scored contribute zero
    from that expert.  The softmax runs over the union of scored enzymes.
    """
    active = [o for o in outputs if o.coverage]
    if not active:
        raise NoExpertFiredError("no expert fired for this substrate")
    total_w = sum(weights.of(o.expert) for o in active)
    if total_w <= 0:
        raise ValueError("active experts have zero total weight")
    zs = {o.expert: _zscore(o.logits) for o in active}
    candidates = sorted({e for o in active for e in o.logits})
    fused = {e: sum(weights.of(o.expert) / total_w * zs[o.expert].get(e, 0.0)
                    for o in active)
             for e in candidates}
    raw = np.array([fused[e] for e in candidates], dtype=np.float64)
    shifted = np.exp(raw - raw.max())
    probs = shifted / shifted.sum()
    order = sorted(range(len(candidates)), key=lambda i: (-probs[i], candidates[i]))
    ranked = [(candidates[i], float(probs[i])) for i in order[:k]]
    return FusionResult(ranked=ranked, fused=fused, zscores=zs)


def predict_substrate(substrate_name: str, kg: EquationKG, model,
                      table: LogitTable | None, weights: FusionWeights,
                      k: int = 10,
                      rng: np.random.Generator | None = None) -> FusionResult:
    """Route, run the active experts, and fuse, for one substrate string."""
    substrate = kg.compounds.id_of(substrate_name)
    membership = kg.compound_roles()
    active = route(substrate, kg, membership) if substrate is not None else (ExpertId.ML,)
    outputs = []
    for expert in active:
        if expert == ExpertId.KB:
            outputs.append(kb_expert(substrate, kg))
        elif expert == ExpertId.KGE:
            outputs.append(kge_expert(substrate, kg, model, rng))
        else:
            empty = ExpertOutput(ExpertId.ML, {}, False)
            outputs.append(ml_expert(substrate_name, table) if table else empty)
    return fuse(outputs, weights, k)
