"""End-to-end optimization of the encoder and relation embeddings.

The trainer owns batching, negative sampling, the Adam update, optional
validation-based early stopping, and versioned checkpoints.  Variant
switches cover the ablations: a mean-pooling encoder (no hypergraph), a
homogeneous edge-type table, a translation decoder, and an MLP decoder
trained with cross-entropy instead of the margin loss.

Training is single-threaded and bitwise deterministic for a fixed
(seed, config, data); all randomness flows through named substreams of
one seed.
"""

from __future__ import annotations

import copy
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import scoring
from .autodiff import Tensor
from .hypergraph import Hypergraph, SubHypergraph, build
from .kg import EquationKG, EquationTriple, InternTable, Role
from ._util import substream

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

DROPOUT_GRID = (0.1, 0.3, 0.5)
L2_GRID = (0.001, 0.005, 0.01, 0.05)
DIM_GRID = (64, 128, 256, 512)
ETA1_GRID = (5, 10, 30, 50)
ETA2_GRID = (1, 3, 5, 10)


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointCorruptError(ValueError):
    pass


class CheckpointVersionError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters and variant switches.

    Conventional search grids: dim in {64,128,256,512}, eta1 in
    {5,10,30,50}, eta2 in {1,3,5,10}, n_negatives in {100,200,400},
    dropout in {0.1,0.3,0.5}, l2_weight in {0.001,0.005,0.01,0.05}.
    """

    dim: int = 64
    n_layers: int = 1
    hidden_dim: int | None = None  # defaults to 2*dim
    learning_rate: float = 1e-3
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 10
    eval_every: int = 1
    eta1: int = 10
    eta2: int = 5
    dropout: float = 0.1
    l2_weight: float = 0.001
    margin: float = 6.0
    n_negatives: int = 100
    temperature: float = 1.0
    corruption: str = "entity"
    adversarial_direction: str = "hard"
    decoder: str = "pairre"       # pairre | transe | mlp
    encoder_kind: str = "hyper"   # hyper | meanpool
    homogeneous: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.decoder not in ("pairre", "transe", "mlp"):
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.encoder_kind not in ("hyper", "meanpool"):
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.dropout < 0 or self.dropout >= 1:
            raise ValueError("dropout must be in [0, 1)")

    def loss_config(self) -> scoring.LossConfig:
        return scoring.LossConfig(
            margin=self.margin, n_negatives=self.n_negatives,
            temperature=self.temperature, corruption=self.corruption,
            adversarial_direction=self.adversarial_direction)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MLPDecoderParams:
    """Feed-forward scorer over [s_emb, p_emb] producing one logit per enzyme."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_tensors(self):
        return {"mlp_w1": self.w1, "mlp_b1": self.b1,
                "mlp_w2": self.w2, "mlp_b2": self.b2}


def init_mlp_decoder(dim: int, n_enzymes: int, rng: np.random.Generator,
                     hidden: int | None = None) -> MLPDecoderParams:
    hidden = hidden if hidden is not None else 2 * dim
    bound = 1.0 / np.sqrt(2 * dim)
    return MLPDecoderParams(
        w1=ad.parameter(None, rng=rng, bound=bound, shape=(2 * dim, hidden)),
        b1=ad.parameter(None, rng=rng, bound=bound, shape=(hidden,)),
        w2=ad.parameter(None, rng=rng, bound=bound, shape=(hidden, n_enzymes)),
        b2=ad.parameter(None, rng=rng, bound=bound, shape=(n_enzymes,)))


def mlp_logits_t(mlp: MLPDecoderParams, s: Tensor, p: Tensor) -> Tensor:
    x = ad.concat([s, p], axis=-1)
    h = ad.relu(ad.add(ad.matmul(x, mlp.w1), mlp.b1))
    return ad.add(ad.matmul(h, mlp.w2), mlp.b2)


def mlp_decoder_score(mlp: MLPDecoderParams, s_emb: np.ndarray,
                      p_emb: np.ndarray) -> np.ndarray:
    """Per-enzyme logits for one (s, p) pair; higher means more plausible."""
    logits = mlp_logits_t(mlp, Tensor(s_emb.reshape(1, -1)),
                          Tensor(p_emb.reshape(1, -1)))
    return logits.data[0].copy()


class Adam:
    """Standard Adam with bias correction over a named tensor dict."""

    def __init__(self, tensors: dict[str, Tensor], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.tensors = tensors
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, tens in self.tensors.items():
            if tens.grad is None:
                continue
            g = tens.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            tens.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.int64)}
        for k in self.tensors:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.t = int(arrays["t"][0])
        for k in self.tensors:
            self.m[k] = arrays[f"m.{k}"].copy()
            self.v[k] = arrays[f"v.{k}"].copy()


class Model:
    """Trained (or in-training) bundle: graph, encoder, decoder, tables."""

    def __init__(self, config: TrainConfig, kg: EquationKG, graph: Hypergraph,
                 encoder_params: enc.EncoderParams, relations,
                 mlp: MLPDecoderParams | None = None):
        self.config = config
        self.kg = kg
        self.graph = graph
        self.encoder_params = encoder_params
        self.relations = relations
        self.mlp = mlp

    # -- parameter plumbing -------------------------------------------
    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.encoder_params.named_tensors())
        if self.relations is not None:
            out.update(self.relations.named_tensors())
        if self.mlp is not None:
            out.update(self.mlp.named_tensors())
        return out

    @property
    def n_enzymes(self) -> int:
        return len(self.kg.enzymes)

    @property
    def higher_is_better(self) -> bool:
        return self.config.decoder == "mlp"

    # -- embedding ------------------------------------------------------
    def sub_for_edge(self, edge_id: int, rng: np.random.Generator) -> SubHypergraph:
        cfg = self.config
        if edge_id in self.graph:
            return self.graph.sample_neighborhood(edge_id, cfg.eta1, cfg.eta2, rng)
        key = self.kg.universe.key_of(edge_id)
        return self.graph.attach_query_hyperedge(key.compounds, key.role,
                                                 eta2=cfg.eta2, rng=rng)

    def encode_edges_t(self, edge_ids: list[int], rng: np.random.Generator,
                       training: bool = False,
                       dropout_rng: np.random.Generator | None = None) -> Tensor:
        """Stacked embeddings (len(edge_ids), n), differentiable."""
        if self.config.encoder_kind == "meanpool":
            members = [self.kg.universe.members(e) for e in edge_ids]
            return enc.mean_pool_batch(self.encoder_params, members)
        subs = [self.sub_for_edge(e, rng) for e in edge_ids]
        batch = enc.pack_batch(subs)
        rate = self.config.dropout if training else 0.0
        return enc.encode_batch(self.encoder_params, batch, dropout_rate=rate,
                                rng=dropout_rng, training=training)

    def pair_vectors(self, triple: EquationTriple,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Inference-path embeddings of a triple's educt and product hyperedges."""
        s_edge, p_edge = self.kg.edge_pair(triple)
        out = self.encode_edges_t([s_edge, p_edge], rng).data
        return out[0].copy(), out[1].copy()

    # -- scoring ----------------------------------------------------------
    def enzyme_scores(self, s_vec: np.ndarray, p_vec: np.ndarray) -> np.ndarray:
        """Score of every enzyme for one (s, p) pair.

        Distances (lower better) for the geometric decoders, logits
        (higher better) for the MLP decoder.
        """
        if self.config.decoder == "pairre":
            return scoring.pairre_score_all(s_vec, p_vec,
                                            self.relations.head.data,
                                            self.relations.tail.data)
        if self.config.decoder == "transe":
            return scoring.transe_score_all(s_vec, p_vec, self.relations.vec.data)
        return mlp_decoder_score(self.mlp, s_vec, p_vec)

    def score_triple(self, triple: EquationTriple, rng: np.random.Generator) -> float:
        s_vec, p_vec = self.pair_vectors(triple, rng)
        return float(self.enzyme_scores(s_vec, p_vec)[triple.enzyme])


def build_model(kg: EquationKG, train_triples: list[EquationTriple],
                config: TrainConfig) -> Model:
    """Graph over train + incomplete equations, freshly initialized parameters."""
    graph = build(kg, triples=train_triples, include_incomplete=True,
                  homogeneous=config.homogeneous)
    init_rng = substream(config.seed, "init")
    encoder_params = enc.init_params(len(kg.compounds), config.dim,
                                     n_layers=config.n_layers,
                                     hidden_dim=config.hidden_dim, rng=init_rng)
    relations = None
    mlp = None
    if config.decoder == "pairre":
        relations = scoring.init_paired(len(kg.enzymes), config.dim, init_rng)
    elif config.decoder == "transe":
        relations = scoring.init_translation(len(kg.enzymes), config.dim, init_rng)
    else:
        mlp = init_mlp_decoder(config.dim, len(kg.enzymes), init_rng,
                               hidden=config.hidden_dim)
    return Model(config, kg, graph, encoder_params, relations, mlp)


# -- one epoch -----------------------------------------------------------------

def _batch_negative_arrays(negatives, slot_of, n_neg):
    """Index arrays (B, n_neg) for corrupted head/tail slots and relations."""
    b = len(negatives)
    s_slots = np.empty((b, n_neg), dtype=np.int64)
    p_slots = np.empty((b, n_neg), dtype=np.int64)
    rels = np.empty((b, n_neg), dtype=np.int64)
    for i, negs in enumerate(negatives):
        for j, c in enumerate(negs):
            s_slots[i, j] = slot_of[c.s_edge]
            p_slots[i, j] = slot_of[c.p_edge]
            rels[i, j] = c.enzyme
    return s_slots, p_slots, rels


def train_epoch(model: Model, train_triples: list[EquationTriple],
                optimizer: Adam, sampler: scoring.NegativeSampler | None,
                rngs: dict[str, np.random.Generator]) -> float:
    """One pass over the training triples; returns the mean batch loss."""
    cfg = model.config
    loss_cfg = cfg.loss_config()
    order = rngs["shuffle"].permutation(len(train_triples))
    losses = []
    for lo in range(0, len(order), cfg.batch_size):
        idx = order[lo:lo + cfg.batch_size]
        batch = [train_triples[i] for i in idx]
        pairs = [model.kg.edge_pair(t) for t in batch]
        enzymes = np.array([t.enzyme for t in batch], dtype=np.int64)

        if cfg.decoder == "mlp":
            loss = _mlp_batch_loss(model, pairs, enzymes, rngs)
        else:
            negatives = [sampler.sample(s, m, p, rngs["negatives"])
                         for (s, p), m in zip(pairs, enzymes)]
            loss = _margin_batch_loss(model, pairs, enzymes, negatives,
                                      loss_cfg, rngs)

        loss = ad.add(loss, _l2_penalty(model))
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(
                f"non-finite loss in batch starting at {lo}; "
                f"triples={idx[:5].tolist()}...")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else 0.0


def _unique_slots(edge_ids) -> tuple[list[int], dict[int, int]]:
    uniq = sorted(set(edge_ids))
    return uniq, {e: i for i, e in enumerate(uniq)}


def _margin_batch_loss(model, pairs, enzymes, negatives, loss_cfg, rngs):
    cfg = model.config
    needed = [e for s, p in pairs for e in (s, p)]
    for negs in negatives:
        for c in negs:
            needed.append(c.s_edge)
            needed.append(c.p_edge)
    uniq, slot_of = _unique_slots(needed)
    embs = model.encode_edges_t(uniq, rngs["subgraphs"], training=True,
                                dropout_rng=rngs["dropout"])
    n = cfg.dim
    b = len(pairs)
    s_idx = np.array([slot_of[s] for s, _ in pairs], dtype=np.int64)
    p_idx = np.array([slot_of[p] for _, p in pairs], dtype=np.int64)
    s_pos = ad.embedding_lookup(embs, s_idx)                  # (B, n)
    p_pos = ad.embedding_lookup(embs, p_idx)
    ns, np_, nm = _batch_negative_arrays(negatives, slot_of, loss_cfg.n_negatives)
    s_neg = ad.embedding_lookup(embs, ns)                     # (B, nneg, n)
    p_neg = ad.embedding_lookup(embs, np_)

    if cfg.decoder == "pairre":
        mh = ad.embedding_lookup(model.relations.head, enzymes)
        mt = ad.embedding_lookup(model.relations.tail, enzymes)
        d_pos = scoring.pairre_distance_t(s_pos, p_pos, mh, mt)
        nmh = ad.embedding_lookup(model.relations.head, nm)
        nmt = ad.embedding_lookup(model.relations.tail, nm)
        d_neg = scoring.pairre_distance_t(s_neg, p_neg, nmh, nmt)
    else:
        mv = ad.embedding_lookup(model.relations.vec, enzymes)
        d_pos = scoring.transe_distance_t(s_pos, p_pos, mv)
        nmv = ad.embedding_lookup(model.relations.vec, nm)
        d_neg = scoring.transe_distance_t(s_neg, p_neg, nmv)
    assert d_pos.shape == (b,) and d_neg.shape == (b, loss_cfg.n_negatives)
    return scoring.self_adversarial_loss(d_pos, d_neg, loss_cfg)


def _mlp_batch_loss(model, pairs, enzymes, rngs):
    needed = [e for s, p in pairs for e in (s, p)]
    uniq, slot_of = _unique_slots(needed)
    embs = model.encode_edges_t(uniq, rngs["subgraphs"], training=True,
                                dropout_rng=rngs["dropout"])
    s_idx = np.array([slot_of[s] for s, _ in pairs], dtype=np.int64)
    p_idx = np.array([slot_of[p] for _, p in pairs], dtype=np.int64)
    logits = mlp_logits_t(model.mlp, ad.embedding_lookup(embs, s_idx),
                          ad.embedding_lookup(embs, p_idx))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(pairs)), enzymes] = 1.0
    logp = ad.log_softmax(logits, axis=-1)
    return ad.mul(ad.tmean(ad.tsum(ad.mul(logp, Tensor(onehot)), axis=-1)), -1.0)


def _l2_penalty(model: Model) -> Tensor:
    """Weight decay on compound features and relation embeddings only."""
    cfg = model.config
    if cfg.l2_weight == 0:
        return Tensor(0.0)
    feats = model.encoder_params.features
    total = ad.tsum(ad.mul(feats, feats))
    if model.relations is not None:
        for t in model.relations.named_tensors().values():
            total = ad.add(total, ad.tsum(ad.mul(t, t)))
    return ad.mul(total, cfg.l2_weight)


# -- the fit loop -----------------------------------------------------------------

@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    val_mrr: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mrr: float = float("-inf")
    epochs_run: int = 0


def fit(model: Model, train_triples: list[EquationTriple],
        valid_triples: list[EquationTriple] | None = None,
        filter_triples: list[list[EquationTriple]] | None = None,
        log_every: int = 0) -> TrainResult:
    """Train until max_epochs or until validation MRR stalls past patience.

    When a validation set is supplied, the returned model carries the
    parameters of the best validation epoch, never a later worse one.
    """
    from .evaluation import build_filter_set, evaluate  # cycle-free at runtime

    cfg = model.config
    rngs = {name: substream(cfg.seed, name)
            for name in ("shuffle", "negatives", "subgraphs", "dropout")}
    sampler = None
    if cfg.decoder != "mlp":
        pools = _graph_pools(model)
        truth = scoring.build_true_triple_set(
            model.kg, filter_triples if filter_triples is not None
            else [model.kg.complete])
        sampler = scoring.NegativeSampler(model.kg, cfg.loss_config(), truth)
        sampler.educt_pool, sampler.product_pool = pools
    filt = None
    if valid_triples:
        filt = build_filter_set(model.kg, filter_triples or [model.kg.complete])

    result = TrainResult()
    best_arrays = None
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss = train_epoch(model, train_triples, _ensure_optimizer(model),
                           sampler, rngs)
        result.losses.append(loss)
        result.epochs_run = epoch
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.4f", epoch, loss)
        if valid_triples and epoch % cfg.eval_every == 0:
            report = evaluate(model, valid_triples, filt, seed=cfg.seed)
            result.val_mrr.append((epoch, report.mrr))
            if report.mrr > result.best_val_mrr:
                result.best_val_mrr = report.mrr
                result.best_epoch = epoch
                best_arrays = {k: t.data.copy()
                               for k, t in model.named_tensors().items()}
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
    if best_arrays is not None:
        for k, t in model.named_tensors().items():
            t.data = best_arrays[k]
    return result


def _graph_pools(model: Model):
    """Entity-corruption pools restricted to hyperedges present in the graph."""
    educts, products = [], []
    for e in model.graph.hyperedges():
        (educts if model.graph.role(e) == Role.EDUCT else products).append(e)
    return (np.array(educts, dtype=np.int64), np.array(products, dtype=np.int64))


def _ensure_optimizer(model: Model) -> Adam:
    opt = getattr(model, "_optimizer", None)
    if opt is None:
        opt = Adam(model.named_tensors(), lr=model.config.learning_rate)
        model._optimizer = opt
    return opt


# -- checkpointing -----------------------------------------------------------------

def save_checkpoint(path, model: Model, epoch: int = 0,
                    best_val_mrr: float = 0.0) -> None:
    """Versioned npz container: config, intern tables, parameters, Adam state."""
    tensors = model.named_tensors()
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "compounds": model.kg.compounds.names(),
        "enzymes": model.kg.enzymes.names(),
        "epoch": epoch,
        "best_val_mrr": best_val_mrr,
        "params": sorted(tensors),
    }
    arrays = {f"param.{k}": t.data for k, t in tensors.items()}
    opt = getattr(model, "_optimizer", None)
    if opt is not None:
        for k, arr in opt.state_arrays().items():
            arrays[f"adam.{k}"] = arr
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


@dataclass
class Checkpoint:
    config: TrainConfig
    compounds: list[str]
    enzymes: list[str]
    params: dict[str, np.ndarray]
    adam: dict[str, np.ndarray]
    epoch: int
    best_val_mrr: float


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data:
                raise CheckpointCorruptError(f"{path}: missing metadata entry")
            meta = json.loads(str(data["__meta__"][()]))
            version = meta.get("format_version")
            if version != CHECKPOINT_VERSION:
                raise CheckpointVersionError(
                    f"checkpoint format version {version}, "
                    f"this build reads version {CHECKPOINT_VERSION}")
            params = {k: data[f"param.{k}"] for k in meta["params"]}
            adam = {k[len("adam."):]: data[k] for k in data.files
                    if k.startswith("adam.")}
    except (zipfile.BadZipFile, OSError, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: unreadable checkpoint ({exc})") from None
    return Checkpoint(TrainConfig.from_dict(meta["config"]), meta["compounds"],
                      meta["enzymes"], params, adam, meta["epoch"],
                      meta["best_val_mrr"])


def restore_model(ckpt: Checkpoint, kg: EquationKG,
                  train_triples: list[EquationTriple]) -> Model:
    """Rebuild a model from checkpoint parameters over a re-parsed corpus.

    The corpus must re-intern to the same tables the checkpoint was
    trained with; a mismatch means the data files changed.
    """
    if kg.compounds.names() != ckpt.compounds or kg.enzymes.names() != ckpt.enzymes:
        raise CheckpointCorruptError(
            "checkpoint intern tables do not match the supplied data files")
    model = build_model(kg, train_triples, ckpt.config)
    tensors = model.named_tensors()
    if sorted(tensors) != sorted(ckpt.params):
        raise CheckpointCorruptError("checkpoint parameter set mismatch")
    for k, t in tensors.items():
        if t.data.shape != ckpt.params[k].shape:
            raise CheckpointCorruptError(
                f"checkpoint parameter {k} has shape {ckpt.params[k].shape}, "
                f"expected {t.data.shape}")
        t.data = ckpt.params[k].astype(np.float64).copy()
    if ckpt.adam:
        opt = _ensure_optimizer(model)
        opt.load_state_arrays(ckpt.adam)
    return model
