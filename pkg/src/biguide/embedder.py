"""State-graph embeddings: hashed node features, k-layer mean-aggregation
message passing, mean pooling, and pairwise similarity-regression training.

Node labels are encoded with a signed-hash bag of tokens (deterministic, no
external models).  Each layer mixes a node's vector with the mean of its
undirected neighbors' vectors through a learned linear map and a rectifier;
the pooled, L2-normalized mean over nodes is the state embedding.  Training
minimizes the absolute gap between set-based graph similarity and embedding
cosine over sampled state pairs.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels as K
from .errors import ConfigError, ModelError, TrainingError
from .ontology import Ontology
from .stategraph import (
    Enrichment,
    N_NODE_KINDS,
    NodeKind,
    StateContext,
    StateGraph,
    build_state_graph,
)

_TOKEN_RE = re.compile(r"[^0-9a-zA-Z]+")
_HUBER_DELTA = 1e-6
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    """Hashed-token text block width plus the node-kind one-hot."""

    input_dim: int = 32
    hash_scheme: str = "crc32-v1"

    def validate(self) -> None:
        if self.input_dim < 8:
            raise ConfigError("encoder input_dim must be >= 8")
        if self.hash_scheme != "crc32-v1":
            raise ConfigError(f"unknown hash scheme: {self.hash_scheme!r}")

    @property
    def feature_dim(self) -> int:
        return self.input_dim + N_NODE_KINDS


@lru_cache(maxsize=131072)
def _encode_cached(input_dim: int, label: str, kind_value: int) -> np.ndarray:
    vec = np.zeros(input_dim + N_NODE_KINDS)
    tokens = [t for t in _TOKEN_RE.split(label.lower()) if t]
    for tok in tokens:
        h = zlib.crc32(tok.encode("utf-8"))
        bucket = h % input_dim
        sign = 1.0 if (h >> 16) & 1 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec[:input_dim])
    if norm > _NORM_EPS:
        vec[:input_dim] /= norm
    vec[input_dim + kind_value] = 1.0
    vec.setflags(write=False)
    return vec


def encode_node_features(cfg: EncoderConfig, node) -> np.ndarray:
    """Deterministic fixed-length feature vector for one graph node."""
    cfg.validate()
    return _encode_cached(cfg.input_dim, node.label, node.kind.value)


def encode_graph_features(cfg: EncoderConfig, g: StateGraph) -> np.ndarray:
    cfg.validate()
    out = np.empty((len(g.nodes), cfg.feature_dim))
    for i, node in enumerate(g.nodes):
        out[i] = _encode_cached(cfg.input_dim, node.label, node.kind.value)
    return out


@dataclass
class EmbedderConfig:
    output_dim: int = 64
    k: int = 3
    encoder: EncoderConfig = EncoderConfig()
    level: Enrichment = Enrichment.BI_MG_EM

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.output_dim < 1:
            raise ConfigError("output_dim must be >= 1")
        self.encoder.validate()


@dataclass
class EmbedderModel:
    config: EmbedderConfig
    weights: list[np.ndarray]   # layer i: (d_i, 2 * d_{i-1})
    biases: list[np.ndarray]    # layer i: (d_i,)
    nonlinearity: str = "relu"
    pooling: str = "mean"
    loss_trace: list[float] = field(default_factory=list)

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    @property
    def level(self) -> Enrichment:
        return self.config.level

    def dims(self) -> list[int]:
        return [self.config.encoder.feature_dim] + [self.config.output_dim] * self.config.k

    def validate_shapes(self) -> None:
        dims = self.dims()
        if len(self.weights) != self.config.k or len(self.biases) != self.config.k:
            raise ModelError("layer count does not match k")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (dims[i + 1], 2 * dims[i])
            if w.shape != want or b.shape != (dims[i + 1],):
                raise ModelError(
                    f"layer {i + 1} shape {w.shape} does not chain (expected {want})")


def init_model(cfg: EmbedderConfig, seed: int) -> EmbedderModel:
    """Seeded uniform Glorot initialization."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    dims = [cfg.encoder.feature_dim] + [cfg.output_dim] * cfg.k
    weights, biases = [], []
    for i in range(cfg.k):
        fan_in, fan_out = 2 * dims[i], dims[i + 1]
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EmbedderModel(config=cfg, weights=weights, biases=biases)


# -- forward / backward ----------------------------------------------------------


@dataclass
class _ForwardCache:
    indptr: np.ndarray
    indices: np.ndarray
    hs: list[np.ndarray]      # H_0 .. H_k
    zs: list[np.ndarray]      # Z_1 .. Z_k (concat inputs)
    acts: list[np.ndarray]    # pre-activations A_1 .. A_k
    pooled: np.ndarray
    norm: float
    emb: np.ndarray


def _forward(model: EmbedderModel, g: StateGraph) -> _ForwardCache:
    feats = encode_graph_features(model.config.encoder, g)
    if model.weights[0].shape[1] != 2 * feats.shape[1]:
        raise ModelError(
            f"encoder produces {feats.shape[1]}-dim features but layer 1 expects "
            f"{model.weights[0].shape[1] // 2}")
    indptr, indices = g.csr()
    h = feats
    hs, zs, acts = [feats], [], []
    for w, b in zip(model.weights, model.biases):
        neigh = K.neighbor_mean(h, indptr, indices)
        z = np.concatenate([h, neigh], axis=1)
        a = z @ w.T + b
        h = np.maximum(a, 0.0)
        zs.append(z)
        acts.append(a)
        hs.append(h)
    pooled = h.mean(axis=0)
    norm = float(np.linalg.norm(pooled))
    if not np.isfinite(norm):
        emb = np.full_like(pooled, np.nan)  # surfaces as a non-finite loss
    elif norm > _NORM_EPS:
        emb = pooled / norm
    else:
        emb = np.zeros_like(pooled)
    return _ForwardCache(indptr, indices, hs, zs, acts, pooled, norm, emb)


def embed_graph(model: EmbedderModel, g: StateGraph) -> np.ndarray:
    """Unit-norm (or zero) embedding of one state graph."""
    return _forward(model, g).emb


def embed_contexts(model: EmbedderModel, ont: Ontology,
                   ctxs: list[StateContext]) -> np.ndarray:
    """Embedding matrix for a batch of states at the model's enrichment level."""
    out = np.empty((len(ctxs), model.output_dim))
    for i, ctx in enumerate(ctxs):
        g = build_state_graph(ont, ctx.state, ctx.on, model.level)
        out[i] = embed_graph(model, g)
    return out


def _zero_grads(model: EmbedderModel):
    return ([np.zeros_like(w) for w in model.weights],
            [np.zeros_like(b) for b in model.biases])


def _backward(model: EmbedderModel, cache: _ForwardCache, demb: np.ndarray,
              gw: list[np.ndarray], gb: list[np.ndarray]) -> None:
    """Accumulate parameter gradients for one graph given dL/d(embedding)."""
    if cache.norm <= _NORM_EPS:
        return
    e = cache.emb
    dp = (demb - float(e @ demb) * e) / cache.norm
    n = cache.hs[-1].shape[0]
    dh = np.broadcast_to(dp / n, cache.hs[-1].shape).copy()
    for i in range(model.config.k - 1, -1, -1):
        da = dh * (cache.acts[i] > 0.0)
        gw[i] += da.T @ cache.zs[i]
        gb[i] += da.sum(axis=0)
        dz = da @ model.weights[i]
        d_prev = cache.hs[i].shape[1]
        dh = dz[:, :d_prev] + K.neighbor_mean_grad(
            np.ascontiguousarray(dz[:, d_prev:]), cache.indptr, cache.indices)


def _huber_abs(x: float) -> tuple[float, float]:
    """Smoothed |x| and its derivative (quadratic inside |x| < delta)."""
    if abs(x) < _HUBER_DELTA:
        return x * x / (2.0 * _HUBER_DELTA), x / _HUBER_DELTA
    return abs(x) - _HUBER_DELTA / 2.0, float(np.sign(x))


def pair_loss(model: EmbedderModel, ga: StateGraph, gb: StateGraph,
              sim: float) -> float:
    ca, cb = _forward(model, ga), _forward(model, gb)
    loss, _ = _huber_abs(sim - float(ca.emb @ cb.emb))
    return loss


def pair_loss_grad(model: EmbedderModel, ga: StateGraph, gb: StateGraph,
                   sim: float):
    """Loss plus analytic parameter gradients for one training pair."""
    ca, cb = _forward(model, ga), _forward(model, gb)
    cos = float(ca.emb @ cb.emb)
    loss, dldx = _huber_abs(sim - cos)
    dcos = -dldx
    gw, gb_ = _zero_grads(model)
    _backward(model, ca, dcos * cb.emb, gw, gb_)
    _backward(model, cb, dcos * ca.emb, gw, gb_)
    return loss, gw, gb_


# -- parameter flattening (numeric gradients, checks) ------------------------------


def flatten_params(model: EmbedderModel) -> np.ndarray:
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def set_params(model: EmbedderModel, theta: np.ndarray) -> None:
    pos = 0
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        model.weights[i] = theta[pos:pos + w.size].reshape(w.shape).copy()
        pos += w.size
        model.biases[i] = theta[pos:pos + b.size].copy()
        pos += b.size


def numeric_pair_grad(model: EmbedderModel, ga: StateGraph, gb: StateGraph,
                      sim: float, h: float = 1e-5):
    """Central-difference gradient of the pair loss; slow, for verification."""
    theta = flatten_params(model)
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        orig = theta[i]
        theta[i] = orig + h
        set_params(model, theta)
        lp = pair_loss(model, ga, gb, sim)
        theta[i] = orig - h
        set_params(model, theta)
        lm = pair_loss(model, ga, gb, sim)
        theta[i] = orig
        grad[i] = (lp - lm) / (2.0 * h)
    set_params(model, theta)
    gw, gb_ = _zero_grads(model)
    pos = 0
    for i, (w, b) in enumerate(zip(gw, gb_)):
        gw[i] = grad[pos:pos + w.size].reshape(w.shape)
        pos += w.size
        gb_[i] = grad[pos:pos + b.size]
        pos += b.size
    return gw, gb_


def gradient_check(model: EmbedderModel, ga: StateGraph, gb: StateGraph,
                   sim: float, h: float = 1e-5) -> float:
    """Relative L2 gap between analytic and central-difference gradients."""
    _, gw_a, gb_a = pair_loss_grad(model, ga, gb, sim)
    gw_n, gb_n = numeric_pair_grad(model, ga, gb, sim, h=h)
    a = np.concatenate([g.ravel() for g in gw_a + gb_a])
    nmr = np.concatenate([g.ravel() for g in gw_n + gb_n])
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(nmr)), 1e-12)
    return float(np.linalg.norm(a - nmr)) / denom


# -- training ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    pairs_per_epoch: int | None = None   # None: use every provided pair
    learning_rate: float = 0.05
    lr_decay: float = 0.1                # lr_e = lr / (1 + decay * epoch)
    momentum: float = 0.0
    batch_size: int = 8
    clip_norm: float = 5.0
    seed: int = 0
    gradient: str = "analytic"           # or "numeric" (verification only)

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr_decay < 0 or self.clip_norm <= 0:
            raise ConfigError("lr_decay must be >= 0 and clip_norm > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.gradient not in ("analytic", "numeric"):
            raise ConfigError(f"unknown gradient method: {self.gradient!r}")


def train_embedder(pairs, tcfg: TrainConfig, mcfg: EmbedderConfig) -> EmbedderModel:
    """Seeded minibatch SGD over sampled pairs; loss trace recorded per epoch.

    Steps use batch-averaged gradients with a global-norm clip and a mild
    per-epoch learning-rate decay, which keeps the absolute-error objective
    from oscillating near its optimum.
    """
    tcfg.validate()
    if not pairs:
        raise ConfigError("training requires at least one pair")
    init_seed, shuffle_seed = [
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(tcfg.seed).spawn(2)
    ]
    model = init_model(mcfg, init_seed)
    rng = np.random.default_rng(shuffle_seed)
    vel_w, vel_b = _zero_grads(model)
    trace: list[float] = []
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(pairs))
        if tcfg.pairs_per_epoch is not None:
            order = order[:tcfg.pairs_per_epoch]
        lr = tcfg.learning_rate / (1.0 + tcfg.lr_decay * epoch)
        losses = []
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            gw_sum, gb_sum = _zero_grads(model)
            for idx in batch:
                pair = pairs[int(idx)]
                if tcfg.gradient == "analytic":
                    loss, gw, gb = pair_loss_grad(
                        model, pair.graph_a, pair.graph_b, pair.similarity)
                else:
                    loss = pair_loss(model, pair.graph_a, pair.graph_b,
                                     pair.similarity)
                    gw, gb = numeric_pair_grad(
                        model, pair.graph_a, pair.graph_b, pair.similarity)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}",
                                        epoch=epoch)
                for i in range(mcfg.k):
                    gw_sum[i] += gw[i]
                    gb_sum[i] += gb[i]
                losses.append(loss)
            scale = 1.0 / len(batch)
            sq = sum(float((g * g).sum()) for g in gw_sum + gb_sum)
            gnorm = np.sqrt(sq) * scale
            if not np.isfinite(gnorm):
                raise TrainingError(f"non-finite gradient at epoch {epoch}",
                                    epoch=epoch)
            step = lr * scale * min(1.0, tcfg.clip_norm / max(gnorm, 1e-12))
            for i in range(mcfg.k):
                vel_w[i] = tcfg.momentum * vel_w[i] + step * gw_sum[i]
                vel_b[i] = tcfg.momentum * vel_b[i] + step * gb_sum[i]
                model.weights[i] -= vel_w[i]
                model.biases[i] -= vel_b[i]
        mean_loss = float(np.mean(losses)) if losses else 0.0
        if not np.isfinite(mean_loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        trace.append(mean_loss)
    model.loss_trace = trace
    return model


def pair_match(model: EmbedderModel, g1: StateGraph, g2: StateGraph,
               threshold: float = 0.5) -> tuple[float, bool]:
    """Embedding cosine and whether it exceeds the match threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError("threshold must lie in (0, 1)")
    cos = float(embed_graph(model, g1) @ embed_graph(model, g2))
    return cos, cos > threshold


# -- persistence -------------------------------------------------------------------

MODEL_SCHEMA_VERSION = 1


def _level_key(level: Enrichment) -> str:
    return level.name.lower().replace("_", "-")


def save_model(model: EmbedderModel, path) -> None:
    doc = {
        "version": MODEL_SCHEMA_VERSION,
        "k": model.config.k,
        "output_dim": model.config.output_dim,
        "nonlinearity": model.nonlinearity,
        "pooling": model.pooling,
        "level": _level_key(model.config.level),
        "encoder": {
            "input_dim": model.config.encoder.input_dim,
            "hash_scheme": model.config.encoder.hash_scheme,
        },
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "loss_trace": model.loss_trace,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_model(path) -> EmbedderModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ModelError(f"unsupported model version: {doc.get('version')!r}")
    cfg = EmbedderConfig(
        output_dim=doc["output_dim"],
        k=doc["k"],
        encoder=EncoderConfig(**doc["encoder"]),
        level=Enrichment.from_name(doc["level"]),
    )
    model = EmbedderModel(
        config=cfg,
        weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        nonlinearity=doc.get("nonlinearity", "relu"),
        pooling=doc.get("pooling", "mean"),
        loss_trace=list(doc.get("loss_trace", [])),
    )
    model.validate_shapes()
    return model


def write_loss_trace(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,mean_loss\n")
        for i, v in enumerate(trace):
            f.write(f"{i},{v:.10g}\n")
