"""Relational graph encoder with a ComplEx decoder and an order-aware score term.

Encoder: two relational graph convolution layers over 11 channels (5 forward
relations, their inverses and a self-loop), mean-normalized per relation,
ReLU after the first layer. Each 128-d node embedding is read as a 64-d
complex vector (first half real, second half imaginary).

Decoder logit for a triple::

    s(h, r, t) = Re<e_h, e_r, conj(e_t)> + lambda * order_score(d)

Gradients are derived by hand; :func:`finite_difference_check` validates them.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    AlignmentMismatch,
    LengthMismatch,
    MalformedCheckpoint,
    NonFiniteLoss,
    NoTrainableTriples,
    ShapeMismatch,
)
from .features import NUM_KINDS, FeatureMatrix, PcaModel
from .kg import NUM_RELATIONS, RERANK_CLASS, KnowledgeGraph, OrderDistance, Relation, process_distance
from .metrics import metrics_at_n

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "fmea-ckpt"
CHECKPOINT_VERSION = 1
NUM_CHANNELS = 2 * NUM_RELATIONS + 1
SELF_LOOP = 2 * NUM_RELATIONS
HAS_CAUSE = Relation.HAS_CAUSE.index


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    negative_ratio: int = 5
    split: tuple[float, float, float] = (0.81, 0.09, 0.10)
    alpha: float = 0.7
    beta: float = -0.1
    lam: float = 0.6
    k_overlap: float = 1.0
    seed: int = 0
    weight_decay: float = 0.01
    hidden_dim: int = 128
    text_dim: int = 128
    type_dim: int = 16
    eval_every: int = 50
    eval_k: int = 10
    process_rerank: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.split = tuple(float(x) for x in self.split)
        self.adam_betas = tuple(float(x) for x in self.adam_betas)
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {self.split}")
        if self.negative_ratio < 1 or self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("negative_ratio >= 1, learning_rate > 0 and epochs >= 0 are required")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.hidden_dim % 2:
            raise ValueError("hidden_dim must be even (real and imaginary halves)")

    @property
    def complex_dim(self) -> int:
        return self.hidden_dim // 2

    def to_json(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**{**obj, "split": tuple(obj["split"]), "adam_betas": tuple(obj["adam_betas"])})


# ---------------------------------------------------------------------------
# parameters


PARAM_NAMES = ("W1", "W2", "rel", "type_table")


@dataclass
class ModelParams:
    W1: np.ndarray  # (channels, text_dim + type_dim, hidden)
    W2: np.ndarray  # (channels, hidden, hidden)
    rel: np.ndarray  # (relations, hidden): [real | imaginary]
    type_table: np.ndarray  # (kinds, type_dim)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays().values()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())

    def to_json(self) -> dict:
        return {name: a.tolist() for name, a in self.arrays().items()}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelParams":
        return cls(*(np.asarray(obj[name], dtype=np.float64) for name in PARAM_NAMES))


def init_params(cfg: TrainConfig, rng: np.random.Generator) -> ModelParams:
    d_in = cfg.text_dim + cfg.type_dim
    h = cfg.hidden_dim

    def glorot(fan_in, fan_out):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(NUM_CHANNELS, fan_in, fan_out))

    W1 = glorot(d_in, h)
    W2 = glorot(h, h)
    rel = rng.normal(0.0, 1.0 / math.sqrt(cfg.complex_dim), size=(NUM_RELATIONS, h))
    type_table = rng.normal(0.0, 0.1, size=(NUM_KINDS, cfg.type_dim))
    return ModelParams(W1, W2, rel, type_table)


# ---------------------------------------------------------------------------
# encoder


def channel_adjacency(num_nodes: int, triples: np.ndarray) -> sp.csr_matrix:
    """Stacked mean-normalized adjacency ``[A_0 | ... | A_9]`` of shape (N, 10N).

    Channel r < 5 carries messages src -> dst of relation r; channel r + 5 the
    inverse direction.
    """
    blocks = []
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    for inverse in (False, True):
        for r in range(NUM_RELATIONS):
            sel = triples[triples[:, 1] == r]
            rows, cols = (sel[:, 0], sel[:, 2]) if inverse else (sel[:, 2], sel[:, 0])
            a = sp.coo_matrix((np.ones(len(sel)), (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()
            a.sum_duplicates()
            a.data[:] = 1.0
            deg = np.asarray(a.sum(axis=1)).ravel()
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            blocks.append(sp.diags(inv) @ a)
    return sp.hstack(blocks, format="csr")


@dataclass
class EncoderCache:
    x: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    z: np.ndarray


def _layer(adj: sp.csr_matrix, h: np.ndarray, W: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    c, d_in, d_out = W.shape
    hw = (h @ W.transpose(1, 0, 2).reshape(d_in, c * d_out)).reshape(n, c, d_out)
    msgs = hw[:, :SELF_LOOP, :].transpose(1, 0, 2).reshape(SELF_LOOP * n, d_out)
    return adj @ msgs + hw[:, SELF_LOOP, :]


def _layer_backward(adj: sp.csr_matrix, h: np.ndarray, W: np.ndarray, dpre: np.ndarray):
    n = h.shape[0]
    c, d_in, d_out = W.shape
    dmsgs = (adj.T @ dpre).reshape(SELF_LOOP, n, d_out)
    dhw = np.empty((n, c, d_out))
    dhw[:, :SELF_LOOP, :] = dmsgs.transpose(1, 0, 2)
    dhw[:, SELF_LOOP, :] = dpre
    dhw = dhw.reshape(n, c * d_out)
    wcat = W.transpose(1, 0, 2).reshape(d_in, c * d_out)
    dh = dhw @ wcat.T
    dW = (h.T @ dhw).reshape(d_in, c, d_out).transpose(1, 0, 2)
    return dh, dW


def input_features(features: FeatureMatrix, p: ModelParams) -> np.ndarray:
    return np.hstack([features.text, p.type_table[features.kinds]])


def encode(adj: sp.csr_matrix, features: FeatureMatrix, p: ModelParams) -> EncoderCache:
    x = input_features(features, p)
    if adj.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"{x.shape[0]} feature rows for {adj.shape[0]} nodes")
    if x.shape[1] != p.W1.shape[1]:
        raise ShapeMismatch(f"feature width {x.shape[1]} != encoder input {p.W1.shape[1]}")
    pre1 = _layer(adj, x, p.W1)
    h1 = np.maximum(pre1, 0.0)
    z = _layer(adj, h1, p.W2)
    return EncoderCache(x, pre1, h1, z)


def rgcn_forward(g: KnowledgeGraph, x: FeatureMatrix, p: ModelParams) -> np.ndarray:
    """Node embeddings (|V| x hidden) using every edge of ``g``."""
    return encode(graph_adjacency(g), x, p).z


def encoder_backward(adj, features: FeatureMatrix, p: ModelParams, cache: EncoderCache, dz: np.ndarray):
    dh1, dW2 = _layer_backward(adj, cache.h1, p.W2, dz)
    dpre1 = dh1 * (cache.pre1 > 0)
    dx, dW1 = _layer_backward(adj, cache.x, p.W1, dpre1)
    dtype = _scatter_rows(features.kinds, dx[:, features.text.shape[1]:], p.type_table.shape[0])
    return dW1, dW2, dtype


def graph_triples(g: KnowledgeGraph) -> np.ndarray:
    return np.array([(e.src, e.rel.index, e.dst) for e in g.edges], dtype=np.int64).reshape(-1, 3)


def graph_adjacency(g: KnowledgeGraph) -> sp.csr_matrix:
    return channel_adjacency(len(g), graph_triples(g))


# ---------------------------------------------------------------------------
# scoring


def complex_score(e_h: np.ndarray, e_r: np.ndarray, e_t: np.ndarray) -> float:
    """Re(sum_i e_h[i] * e_r[i] * conj(e_t[i])) for complex vectors."""
    e_h, e_r, e_t = (np.asarray(v) for v in (e_h, e_r, e_t))
    if not (e_h.shape == e_r.shape == e_t.shape):
        raise LengthMismatch(f"lengths {e_h.shape}, {e_r.shape}, {e_t.shape} differ")
    hr, hi = e_h.real, e_h.imag
    rr, ri = e_r.real, e_r.imag
    tr, ti = e_t.real, e_t.imag
    return float(np.sum((hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti))


def as_complex(v: np.ndarray) -> np.ndarray:
    half = v.shape[-1] // 2
    return v[..., :half] + 1j * v[..., half:]


def order_score(d: OrderDistance, alpha: float, beta: float, k: float = 1.0) -> float:
    if d is OrderDistance.PRECEDES:
        return 1.0
    if d is OrderDistance.OVERLAP:
        return alpha ** k
    if d is OrderDistance.DISJOINT:
        return -1.0
    return beta


def order_endpoints(rel_index: int, h: int, t: int) -> tuple[int, int]:
    """Endpoints in causal direction: has_Cause compares the cause's process to the failure's."""
    return (t, h) if rel_index == HAS_CAUSE else (h, t)


def triple_order(g: KnowledgeGraph, h: int, rel: Relation, t: int,
                 positions: dict | None = None) -> OrderDistance:
    a, b = order_endpoints(rel.index, h, t)
    return process_distance(g, a, b, positions)


def combined_score(g: KnowledgeGraph, embeddings: np.ndarray, p: ModelParams,
                   triple: tuple[int, Relation, int], cfg: TrainConfig) -> float:
    h, rel, t = triple
    s = complex_score(as_complex(embeddings[h]), as_complex(p.rel[rel.index]), as_complex(embeddings[t]))
    d = triple_order(g, h, rel, t)
    return s + cfg.lam * order_score(d, cfg.alpha, cfg.beta, cfg.k_overlap)


class OrderTable:
    """Vectorized process positions for batched order scores."""

    def __init__(self, g: KnowledgeGraph, positions: dict | None = None):
        pos = g.positions() if positions is None else positions
        lines = {name: i for i, name in enumerate(sorted({p[0] for p in pos.values()}))}
        self.line = np.full(len(g), -1, dtype=np.int64)
        self.pos = np.zeros(len(g), dtype=np.int64)
        for node, (line, idx) in pos.items():
            self.line[node] = lines[line]
            self.pos[node] = idx

    def categories(self, triples: np.ndarray) -> np.ndarray:
        """0 precedes, 1 overlap, 2 disjoint, 3 unknown."""
        h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
        flip = r == HAS_CAUSE
        a = np.where(flip, t, h)
        b = np.where(flip, h, t)
        la, lb = self.line[a], self.line[b]
        pa, pb = self.pos[a], self.pos[b]
        cat = np.where(pa < pb, 0, np.where(pa == pb, 1, 2))
        return np.where((la < 0) | (lb < 0) | (la != lb), 3, cat)

    def offsets(self, triples: np.ndarray, cfg: TrainConfig) -> np.ndarray:
        if cfg.lam == 0:
            return np.zeros(len(triples))
        table = np.array([1.0, cfg.alpha ** cfg.k_overlap, -1.0, cfg.beta])
        return cfg.lam * table[self.categories(triples)]


CATEGORY_ORDER = (OrderDistance.PRECEDES, OrderDistance.OVERLAP, OrderDistance.DISJOINT, OrderDistance.UNKNOWN)


def score_triples(z: np.ndarray, rel: np.ndarray, triples: np.ndarray) -> np.ndarray:
    zc, rc = as_complex(z), as_complex(rel)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    return np.einsum("ij,ij->i", zc[h] * rc[r], zc[t].conj()).real


def _scatter_rows(index: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """Sum ``values`` rows into ``num_rows`` buckets (a faster ``np.add.at``)."""
    m = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(num_rows, len(index)))
    return np.asarray(m @ values)


def _score_backward(z, rel, triples, dscore):
    # with s = Re sum(h r conj(t)) the gradients, packed as complex numbers, are
    # conj(r) t for h, h r for t and conj(h) t for r; per relation they reduce
    # to products with the sparse matrix of upstream gradients G[h, t]
    zc, rc = as_complex(z), as_complex(rel)
    n, half = zc.shape
    dzc = np.zeros((n, half), dtype=complex)
    drc = np.zeros_like(rc)
    for r in range(rel.shape[0]):
        sel = triples[:, 1] == r
        if not sel.any():
            continue
        G = sp.csr_matrix((dscore[sel], (triples[sel, 0], triples[sel, 2])), shape=(n, n))
        gz = G @ zc
        dzc += gz * rc[r].conj()
        dzc += (G.T @ zc) * rc[r]
        drc[r] = np.einsum("ij,ij->j", zc.conj(), gz)
    return np.hstack([dzc.real, dzc.imag]), np.hstack([drc.real, drc.imag])


# ---------------------------------------------------------------------------
# loss


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_with_logits_loss(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise LengthMismatch(f"{logits.shape} logits vs {labels.shape} labels")
    if logits.size == 0:
        return 0.0
    return float(np.mean(softplus(logits) - labels * logits))


@dataclass
class Batch:
    """Scored triples with labels and fixed order offsets."""

    triples: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray


def loss_and_grads(adj, features: FeatureMatrix, p: ModelParams, batch: Batch):
    cache = encode(adj, features, p)
    if len(batch.triples) == 0:
        return 0.0, ModelParams(*(np.zeros_like(a) for a in p.arrays().values()))
    logits = score_triples(cache.z, p.rel, batch.triples) + batch.offsets
    loss = bce_with_logits_loss(logits, batch.labels)
    dlogits = (sigmoid(logits) - batch.labels) / len(logits)
    dz, drel = _score_backward(cache.z, p.rel, batch.triples, dlogits)
    dW1, dW2, dtype = encoder_backward(adj, features, p, cache, dz)
    return loss, ModelParams(dW1, dW2, drel, dtype)


def loss_value(adj, features: FeatureMatrix, p: ModelParams, batch: Batch) -> float:
    if len(batch.triples) == 0:
        return 0.0
    z = encode(adj, features, p).z
    return bce_with_logits_loss(score_triples(z, p.rel, batch.triples) + batch.offsets, batch.labels)


# ---------------------------------------------------------------------------
# sampling and splitting


def sample_negatives(positives: np.ndarray, ratio: int, rng: np.random.Generator, num_nodes: int) -> np.ndarray:
    """``ratio`` tail corruptions per positive, tails uniform over the other nodes."""
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    if num_nodes < 2 and len(positives):
        raise ValueError("tail corruption needs at least two nodes")
    reps = np.repeat(positives, ratio, axis=0)
    u = rng.integers(0, num_nodes - 1, size=len(reps)) if len(reps) else np.zeros(0, dtype=np.int64)
    reps[:, 2] = u + (u >= reps[:, 2])
    return reps


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder apportionment; leftover items go to the largest share first."""
    exact = [n * f for f in fractions]
    sizes = [math.floor(x) for x in exact]
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - sizes[i]), -fractions[i], i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split_triples(triples: np.ndarray, fractions=(0.81, 0.09, 0.10), rng: np.random.Generator | None = None):
    """Partition into (train, val, test); only has_Cause triples are held out."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = rng or np.random.default_rng(0)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    eligible = np.flatnonzero(triples[:, 1] == HAS_CAUSE)
    others = np.flatnonzero(triples[:, 1] != HAS_CAUSE)
    n_train, n_val, _ = split_sizes(len(eligible), fractions)
    perm = eligible[rng.permutation(len(eligible))]
    train_idx = np.sort(np.concatenate([others, perm[:n_train]]))
    val_idx = np.sort(perm[n_train:n_train + n_val])
    test_idx = np.sort(perm[n_train + n_val:])
    return triples[train_idx], triples[val_idx], triples[test_idx]


# ---------------------------------------------------------------------------
# ranking used for validation


def rank_candidates(logits: np.ndarray, candidates: np.ndarray, classes: np.ndarray | None = None) -> np.ndarray:
    """Candidates sorted by descending logit (ties: lower id), optionally partitioned by class first."""
    keys = [candidates, -logits]
    if classes is not None:
        keys.append(classes)
    return candidates[np.lexsort(keys)]


def validation_f1(z, p: ModelParams, order: OrderTable, cfg: TrainConfig, val: np.ndarray,
                  train: np.ndarray, candidates: np.ndarray) -> float:
    if len(val) == 0 or len(candidates) == 0:
        return float("nan")
    known: dict[int, set[int]] = {}
    for h, r, t in train[train[:, 1] == HAS_CAUSE]:
        known.setdefault(int(h), set()).add(int(t))
    truth: dict[int, set[int]] = {}
    for h, _, t in val:
        truth.setdefault(int(h), set()).add(int(t))
    scores = []
    for h, wanted in sorted(truth.items()):
        cands = np.array([c for c in candidates if c not in known.get(h, ())], dtype=np.int64)
        trip = np.column_stack([np.full(len(cands), h), np.full(len(cands), HAS_CAUSE), cands])
        logits = score_triples(z, p.rel, trip) + order.offsets(trip, cfg)
        classes = None
        if cfg.process_rerank:
            cats = order.categories(trip)
            classes = np.array([RERANK_CLASS[CATEGORY_ORDER[c]] for c in cats])
        ranked = rank_candidates(logits, cands, classes)
        _, _, f1 = metrics_at_n(list(ranked), wanted, cfg.eval_k)
        scores.append(f1)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    def __init__(self, params: ModelParams, lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        self.v = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for name, theta in params.arrays().items():
            g = getattr(grads, name)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            np.square(g, out=g)
            g *= 1 - b2
            v += g
            # decoupled weight decay first, then the Adam update
            theta *= 1 - self.lr * self.wd
            denom = np.sqrt(v, out=g)
            denom /= math.sqrt(c2)
            denom += self.eps
            theta -= (self.lr / c1) * m / denom


# ---------------------------------------------------------------------------
# training


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    pca: PcaModel | None
    alignment: dict
    loss_trace: list[float] = field(default_factory=list)
    val_trace: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int = 0
    split: dict = field(default_factory=dict)
    provider: dict = field(default_factory=dict)
    run_config: dict = field(default_factory=dict)

    def check_alignment(self, g: KnowledgeGraph) -> None:
        if self.alignment.get("num_nodes") != len(g) or self.alignment.get("graph_sha256") != g.fingerprint():
            raise AlignmentMismatch(
                f"checkpoint was trained on a graph with {self.alignment.get('num_nodes')} nodes "
                f"(sha256 {str(self.alignment.get('graph_sha256'))[:12]}); got {len(g)} nodes "
                f"(sha256 {g.fingerprint()[:12]})"
            )

    def to_json(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_json(),
            "run_config": self.run_config,
            "alignment": self.alignment,
            "provider": self.provider,
            "best_epoch": self.best_epoch,
            "loss_trace": self.loss_trace,
            "val_trace": [list(x) for x in self.val_trace],
            "split": self.split,
            "pca": None if self.pca is None else self.pca.to_json(),
            "params": self.params.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Checkpoint":
        if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
            raise MalformedCheckpoint("not a version-1 fmea checkpoint")
        try:
            return cls(
                params=ModelParams.from_json(obj["params"]),
                config=TrainConfig.from_json(obj["config"]),
                pca=None if obj["pca"] is None else PcaModel.from_json(obj["pca"]),
                alignment=obj["alignment"],
                loss_trace=list(obj["loss_trace"]),
                val_trace=[(int(e), float(f)) for e, f in obj["val_trace"]],
                best_epoch=int(obj["best_epoch"]),
                split=obj.get("split", {}),
                provider=obj.get("provider", {}),
                run_config=obj.get("run_config", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedCheckpoint(f"bad checkpoint field: {exc}") from None


def dump_checkpoint(ckpt: Checkpoint) -> str:
    return json.dumps(ckpt.to_json(), separators=(",", ":"), allow_nan=True) + "\n"


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(dump_checkpoint(ckpt), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise MalformedCheckpoint(f"{path}: {exc}") from None
    return Checkpoint.from_json(obj)


def write_loss_trace(ckpt: Checkpoint, path: str | Path) -> None:
    val = dict(ckpt.val_trace)
    lines = ["epoch,train_loss,val_f1_at_10"]
    for epoch, loss in enumerate(ckpt.loss_trace, start=1):
        f1 = val.get(epoch)
        lines.append(f"{epoch},{loss!r},{'' if f1 is None else repr(f1)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def train(
    g: KnowledgeGraph,
    features: FeatureMatrix,
    cfg: TrainConfig,
    pca: PcaModel | None = None,
    provider: dict | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """Full-batch training; returns the parameters with the best validation F1@k."""
    if len(g) == 0:
        raise NoTrainableTriples("graph is empty")
    triples = graph_triples(g)
    if not np.any(triples[:, 1] == HAS_CAUSE):
        raise NoTrainableTriples("graph has no has_Cause triples")
    rng_init, rng_split, rng_neg = _streams(cfg.seed)
    params = init_params(cfg, rng_init)
    if features.type_table.shape == params.type_table.shape:
        params.type_table = features.type_table.copy()
    train_t, val_t, test_t = split_triples(triples, cfg.split, rng_split)
    adj = channel_adjacency(len(g), train_t)
    order = OrderTable(g)
    candidates = np.array(g.cause_nodes(), dtype=np.int64)
    opt = AdamW(params, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
    pos_offsets = order.offsets(train_t, cfg)

    best = params.copy()
    best_f1, best_epoch = -math.inf, 0
    loss_trace: list[float] = []
    val_trace: list[tuple[int, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        neg = sample_negatives(train_t, cfg.negative_ratio, rng_neg, len(g))
        batch = Batch(
            np.vstack([train_t, neg]),
            np.concatenate([np.ones(len(train_t)), np.zeros(len(neg))]),
            np.concatenate([pos_offsets, order.offsets(neg, cfg)]),
        )
        loss, grads = loss_and_grads(adj, features, params, batch)
        if not math.isfinite(loss):
            raise NonFiniteLoss(epoch)
        opt.step(params, grads)
        if not params.is_finite():
            raise NonFiniteLoss(epoch)
        loss_trace.append(loss)
        if progress is not None:
            progress(epoch, loss)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            z = encode(adj, features, params).z
            f1 = validation_f1(z, params, order, cfg, val_t, train_t, candidates)
            if math.isnan(f1):
                best, best_epoch = params.copy(), epoch
                continue
            val_trace.append((epoch, f1))
            if f1 >= best_f1:
                best, best_f1, best_epoch = params.copy(), f1, epoch
            logger.debug("epoch %d loss %.6f val F1@%d %.4f", epoch, loss, cfg.eval_k, f1)

    return Checkpoint(
        params=best,
        config=copy.deepcopy(cfg),
        pca=pca,
        alignment={"num_nodes": len(g), "graph_sha256": g.fingerprint()},
        loss_trace=loss_trace,
        val_trace=val_trace,
        best_epoch=best_epoch,
        split={"train": train_t.tolist(), "val": val_t.tolist(), "test": test_t.tolist()},
        provider=provider or {},
    )


# ---------------------------------------------------------------------------
# gradient check


def finite_difference_check(
    g: KnowledgeGraph,
    features: FeatureMatrix,
    p: ModelParams,
    probes: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
    cfg: TrainConfig | None = None,
    grad_fn: Callable | None = None,
    floor: float = 1e-6,
) -> dict:
    """Compare analytic gradients of the training loss with central differences.

    Probes are spread round-robin over the parameter tensors. The relative
    error of each probe is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(seed)
    triples = graph_triples(g)
    adj = channel_adjacency(len(g), triples)
    order = OrderTable(g)
    if len(triples):
        neg = sample_negatives(triples, cfg.negative_ratio, rng, len(g))
        all_t = np.vstack([triples, neg])
        labels = np.concatenate([np.ones(len(triples)), np.zeros(len(neg))])
    else:
        all_t, labels = triples, np.zeros(0)
    batch = Batch(all_t, labels, order.offsets(all_t, cfg))
    p = p.copy()
    _, grads = (grad_fn or loss_and_grads)(adj, features, p, batch)

    results = []
    names = list(PARAM_NAMES)
    for i in range(probes):
        name = names[i % len(names)]
        arr = getattr(p, name)
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + eps
        up = loss_value(adj, features, p, batch)
        arr[idx] = old - eps
        down = loss_value(adj, features, p, batch)
        arr[idx] = old
        numeric = (up - down) / (2 * eps)
        analytic = float(getattr(grads, name)[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        results.append({"param": name, "index": list(idx), "analytic": analytic, "numeric": numeric,
                        "rel_error": rel})
    return {
        "probes": results,
        "max_rel_error": max((r["rel_error"] for r in results), default=0.0),
        "max_abs_grad": max((max(abs(r["analytic"]), abs(r["numeric"])) for r in results), default=0.0),
        "eps": eps,
    }
