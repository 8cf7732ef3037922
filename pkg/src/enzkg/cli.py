"""Command-line entry point: gen-synth, build-graph, train, evaluate, predict, fuse.

Configuration comes from a flat ``key = value`` text file whose keys
match the training-config field names; command-line flags override file
values.  One ``--seed`` feeds every named randomness stream.  Exit code
2 flags usage/config problems, 1 runtime failures; failures print a
single machine-parsable line ``error: category=<cat>: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, experts, synth, training
from .hypergraph import OutOfVocabularyError, build, dump_typed_edges
from .kg import (EquationFormatError, EquationKG, Role, SplitSpec,
                 load_equations, split)
from ._util import substream


class UsageError(ValueError):
    pass


ERROR_CATEGORIES = {
    EquationFormatError: "equation-format",
    training.CheckpointCorruptError: "checkpoint-corrupt",
    training.CheckpointVersionError: "checkpoint-version",
    training.TrainingDivergedError: "training-diverged",
    OutOfVocabularyError: "oov-hyperedge",
    synth.InfeasibleSpecError: "infeasible-spec",
    experts.NoExpertFiredError: "no-expert-fired",
    FileNotFoundError: "missing-input",
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; # starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(name: str, raw: str, target_type) -> object:
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {name}: {raw!r} is not a boolean")
    try:
        return target_type(raw)
    except ValueError:
        raise UsageError(f"config key {name}: {raw!r} is not {target_type.__name__}") from None


def build_train_config(config_path=None, overrides=None, **flag_values) -> training.TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(training.TrainConfig)}
    merged: dict = {}
    raw = dict(read_config_file(config_path)) if config_path else {}
    for key, value in (overrides or {}).items():
        raw[key] = value
    for key, value in raw.items():
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        ftype = fields[key].type
        base = {"int": int, "float": float, "str": str, "bool": bool,
                "int | None": int}.get(ftype, str)
        merged[key] = _coerce(key, str(value), base)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    try:
        return training.TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_kg(args) -> EquationKG:
    if not args.data:
        raise UsageError("--data is required")
    return load_equations(args.data, getattr(args, "incomplete_data", None))


def _splits(kg: EquationKG, seed: int):
    return split(kg, SplitSpec(seed=seed))


def _rebuild_model(args):
    ckpt = training.load_checkpoint(args.ckpt)
    kg = _load_kg(args)
    train_triples, valid_triples, test_triples = _splits(kg, ckpt.config.seed)
    model = training.restore_model(ckpt, kg, train_triples)
    return model, (train_triples, valid_triples, test_triples)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    spec = synth.SyntheticSpec(
        n_compounds=args.compounds, n_enzymes=args.enzymes,
        n_complete=args.complete, n_incomplete=args.incomplete,
        mean_educts=args.mean_educts, mean_products=args.mean_products,
        symmetric_fraction=args.symmetric_fraction,
        inverse_fraction=args.inverse_fraction,
        holdout_fraction=args.holdout_fraction, seed=args.seed)
    data = synth.generate(spec)
    paths = synth.write_corpus(data, args.out)
    print(f"wrote {len(data.complete)} complete, {len(data.incomplete)} "
          f"incomplete, {len(data.heldout)} held-out equations to {args.out}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def cmd_build_graph(args) -> int:
    kg = _load_kg(args)
    graph = build(kg, homogeneous=args.homogeneous)
    n = dump_typed_edges(graph, args.out)
    print(f"{len(graph.hyperedges())} hyperedges, {n} typed edges -> {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    config = build_train_config(
        args.config, overrides, seed=args.seed, decoder=args.decoder,
        encoder_kind=args.encoder, homogeneous=(True if args.homogeneous else None))
    kg = _load_kg(args)
    train_triples, valid_triples, test_triples = _splits(kg, config.seed)
    model = training.build_model(kg, train_triples, config)
    result = training.fit(model, train_triples, valid_triples or None,
                          filter_triples=[train_triples, valid_triples, test_triples],
                          log_every=args.log_every)
    training.save_checkpoint(args.out, model, epoch=result.epochs_run,
                             best_val_mrr=max(result.best_val_mrr, 0.0))
    print(f"trained {result.epochs_run} epochs; final loss "
          f"{result.losses[-1]:.4f}; checkpoint -> {args.out}")
    if result.val_mrr:
        print(f"best validation mrr {result.best_val_mrr:.4f} "
              f"at epoch {result.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    model, (train_triples, valid_triples, test_triples) = _rebuild_model(args)
    triples = {"train": train_triples, "valid": valid_triples,
               "test": test_triples}[args.split]
    filt = evaluation.build_filter_set(
        model.kg, [train_triples, valid_triples, test_triples])
    report = evaluation.evaluate(model, triples, filt,
                                 seed=model.config.seed, threads=args.threads)
    print(report.to_text())
    print(report.to_kv())
    if args.per_triple:
        evaluation.write_per_triple_tsv(args.per_triple, model.kg, triples,
                                        report.ranks)
        print(f"per-triple ranks -> {args.per_triple}")
    return 0


def cmd_predict(args) -> int:
    model, _ = _rebuild_model(args)
    kg = model.kg
    rng = substream(model.config.seed, "predict")

    def resolve(names: str, side: str) -> list[int]:
        ids = []
        for name in names.split(","):
            cid = kg.compounds.id_of(name.strip())
            if cid is None:
                print(f"warning: unknown {side} compound {name.strip()!r} dropped",
                      file=sys.stderr)
            else:
                ids.append(cid)
        return ids

    educts = resolve(args.educts, "educt")
    products = resolve(args.products, "product")
    if not educts or not products:
        raise OutOfVocabularyError("out-of-vocabulary hyperedge: no known compounds")
    s_vec = _embed_query(model, educts, Role.EDUCT, rng)
    p_vec = _embed_query(model, products, Role.PRODUCT, rng)
    scores = model.enzyme_scores(s_vec, p_vec)
    order = np.argsort(scores if model.higher_is_better else -scores)[::-1]
    print("rank\tenzyme\tscore")
    for rank, idx in enumerate(order[:args.topk], start=1):
        print(f"{rank}\t{kg.enzymes.name_of(int(idx))}\t{scores[int(idx)]:.6f}")
    return 0


def _embed_query(model, compound_ids, role, rng):
    edge = model.kg.universe.id_of(role, compound_ids)
    if edge is not None and edge in model.graph:
        sub = model.graph.sample_neighborhood(edge, model.config.eta1,
                                              model.config.eta2, rng)
    else:
        sub = model.graph.attach_query_hyperedge(compound_ids, role,
                                                 eta2=model.config.eta2, rng=rng)
    from .encoder import encode_batch, pack_batch
    return encode_batch(model.encoder_params, pack_batch([sub])).data[0]


def cmd_fuse(args) -> int:
    kg = load_equations(args.kb, args.incomplete_data)
    model = None
    if args.ckpt:
        ckpt = training.load_checkpoint(args.ckpt)
        train_triples, _, _ = _splits(kg, ckpt.config.seed)
        model = training.restore_model(ckpt, kg, train_triples)
    table = experts.load_logit_table(args.ml_logits, kg.enzymes) if args.ml_logits else None
    w = [float(x) for x in args.weights.split(",")]
    if len(w) != 3:
        raise UsageError("--weights needs exactly three comma-separated values")
    weights = experts.FusionWeights(kb=w[0], kge=w[1], ml=w[2])
    rng = substream(args.seed, "fuse")
    result = experts.predict_substrate(args.substrate, kg, model, table,
                                       weights, k=args.topk, rng=rng)
    header = "substrate\trank\tenzyme\tprobability"
    if args.provenance:
        header += "\t" + "\t".join(f"z_{e.value}" for e in experts.ExpertId)
    print(header)
    for rank, (enzyme, prob) in enumerate(result.ranked, start=1):
        line = f"{args.substrate}\t{rank}\t{kg.enzymes.name_of(enzyme)}\t{prob:.6f}"
        if args.provenance:
            for e in experts.ExpertId:
                z = result.zscores.get(e, {}).get(enzyme)
                line += "\t" + ("-" if z is None else f"{z:.4f}")
        print(line)
    return 0


# -- parser ---------------------------------------------------------------------

def _add_data_flags(p, incomplete=True):
    p.add_argument("--data", help="complete-equation TSV/JSON file")
    if incomplete:
        p.add_argument("--incomplete-data", help="enzyme-less equation file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enzkg",
        description="enzyme prediction over reaction-equation knowledge graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--compounds", type=int, default=50)
    g.add_argument("--enzymes", type=int, default=20)
    g.add_argument("--complete", type=int, default=200)
    g.add_argument("--incomplete", type=int, default=100)
    g.add_argument("--mean-educts", type=float, default=2.0)
    g.add_argument("--mean-products", type=float, default=2.0)
    g.add_argument("--symmetric-fraction", type=float, default=0.0)
    g.add_argument("--inverse-fraction", type=float, default=0.0)
    g.add_argument("--holdout-fraction", type=float, default=0.25)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synth)

    b = sub.add_parser("build-graph", help="dump the typed hyperedge adjacency")
    _add_data_flags(b)
    b.add_argument("--out", required=True)
    b.add_argument("--homogeneous", action="store_true")
    b.set_defaults(func=cmd_build_graph)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(t)
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--decoder", choices=("pairre", "transe", "mlp"), default=None)
    t.add_argument("--encoder", choices=("hyper", "meanpool"), default=None)
    t.add_argument("--homogeneous", action="store_true")
    t.add_argument("--threads", type=int, default=1)
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="filtered ranking metrics on a split")
    _add_data_flags(e)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=("train", "valid", "test"), default="test")
    e.add_argument("--per-triple", help="write per-triple ranks TSV here")
    e.add_argument("--threads", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank enzymes for one educt/product query")
    _add_data_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--educts", required=True, help="comma-separated compounds")
    p.add_argument("--products", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.set_defaults(func=cmd_predict)

    f = sub.add_parser("fuse", help="multi-expert substrate-level prediction")
    f.add_argument("--kb", required=True, help="complete-equation file")
    f.add_argument("--incomplete-data")
    f.add_argument("--ckpt", help="trained model for the graph expert")
    f.add_argument("--ml-logits", help="external pair-level logit TSV")
    f.add_argument("--weights", default="0.1,0.3,0.6",
                   help="kb,model,ml weights")
    f.add_argument("--substrate", required=True)
    f.add_argument("--topk", type=int, default=10)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--provenance", action="store_true",
                   help="append per-expert z-score columns")
    f.set_defaults(func=cmd_fuse)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: category=usage: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # map known failures to one-line categories
        for etype, category in ERROR_CATEGORIES.items():
            if isinstance(exc, etype):
                print(f"error: category={category}: {exc}", file=sys.stderr)
                return 1
        print(f"error: category=runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
