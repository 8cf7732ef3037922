"""Enzyme prediction over reaction-equation knowledge graphs.

Pipeline: parse equations into a compound/enzyme-interned KG, build a
two-level hypergraph (compound membership plus typed hyperedge
adjacency), encode hyperedges with a small attention encoder, score
enzymes with paired-vector or translation decoders trained under a
self-adversarial margin loss, evaluate with filtered ranking, and fuse
three prediction experts for substrate-level queries.
"""

__version__ = "0.1.0"

from . import (autodiff, encoder, evaluation, experts, hypergraph, kg,
               scoring, synth, training)

__all__ = ["autodiff", "encoder", "evaluation", "experts", "hypergraph",
           "kg", "scoring", "synth", "training", "__version__"]
