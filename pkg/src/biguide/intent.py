"""Next-step intent prediction: (operation, measure group) multi-class labels
and a bagged CART forest with Gini splits over state embeddings.

Labels pair the op of the next issued query with the MG parent of that
query's measures; states touching several MGs contribute one example per MG.
Trees store class-count histograms at the leaves, so top-k prediction is the
mean of per-leaf frequency distributions across the forest.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .embedder import EmbedderModel, embed_contexts
from .errors import ConfigError, ModelError
from .ontology import Ontology, parent_measure_group
from .stategraph import state_contexts
from .workload import BiOp, Workload


@dataclass(frozen=True)
class BiIntent:
    op: BiOp
    mg: str


@dataclass
class RFConfig:
    n_trees: int = 20
    max_depth: int = 10
    min_samples_split: int = 2
    max_features: str = "sqrt"      # per-split feature subsample rule
    bootstrap_fraction: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1:
            raise ConfigError("n_trees and max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.max_features not in ("sqrt", "all"):
            raise ConfigError(f"unknown max_features rule: {self.max_features!r}")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ConfigError("bootstrap_fraction must lie in (0, 1]")


@dataclass
class DecisionTree:
    """Array-encoded binary tree; feature[i] == -1 marks a leaf."""

    feature: np.ndarray      # int64 (n_nodes,)
    threshold: np.ndarray    # float64 (n_nodes,)
    left: np.ndarray         # int64 (n_nodes,)
    right: np.ndarray        # int64 (n_nodes,)
    leaf_counts: np.ndarray  # float64 (n_nodes, n_classes)


@dataclass
class IntentModel:
    classes: list[BiIntent]            # class index -> intent
    feature_dim: int
    trees: list[DecisionTree]
    # Stacked arrays over all trees for the traversal kernel.
    _feature: np.ndarray = field(repr=False, default=None)
    _threshold: np.ndarray = field(repr=False, default=None)
    _left: np.ndarray = field(repr=False, default=None)
    _right: np.ndarray = field(repr=False, default=None)
    _leaf_dist: np.ndarray = field(repr=False, default=None)
    _roots: np.ndarray = field(repr=False, default=None)
    oob_indices: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self._feature is None:
            self._stack()

    def _stack(self) -> None:
        offsets = np.cumsum([0] + [len(t.feature) for t in self.trees])
        self._roots = offsets[:-1].astype(np.int64)
        self._feature = np.concatenate([t.feature for t in self.trees])
        self._threshold = np.concatenate([t.threshold for t in self.trees])
        self._left = np.concatenate(
            [t.left + off for t, off in zip(self.trees, self._roots)])
        self._right = np.concatenate(
            [t.right + off for t, off in zip(self.trees, self._roots)])
        dists = np.concatenate([t.leaf_counts for t in self.trees], axis=0)
        sums = dists.sum(axis=1, keepdims=True)
        self._leaf_dist = np.where(sums > 0, dists / np.maximum(sums, 1), 0.0)


def build_intent_examples(w: Workload, model: EmbedderModel,
                          sessions=None) -> list[tuple[np.ndarray, BiIntent]]:
    """One (embedding, intent) example per transition, duplicated per MG."""
    ont = w.ontology
    ctxs = state_contexts(w, sessions)
    by_session: dict[str, list] = {}
    for ctx in ctxs:
        by_session.setdefault(ctx.session_id, []).append(ctx)
    embs = embed_contexts(model, ont, ctxs)
    pos_of = {(c.session_id, c.position): i for i, c in enumerate(ctxs)}

    examples: list[tuple[np.ndarray, BiIntent]] = []
    for sid, sctxs in by_session.items():
        sctxs.sort(key=lambda c: c.position)
        for cur, nxt in zip(sctxs, sctxs[1:]):
            emb = embs[pos_of[(sid, cur.position)]]
            mgs = sorted({parent_measure_group(ont, m.id)
                          for m in nxt.state.pattern.measures})
            for mg in mgs:
                examples.append((emb, BiIntent(nxt.state.pattern.op, mg)))
    return examples


def _build_tree(X: np.ndarray, y: np.ndarray, n_classes: int, cfg: RFConfig,
                rng: np.random.Generator) -> DecisionTree:
    n, d = X.shape
    n_feats = max(1, int(np.sqrt(d))) if cfg.max_features == "sqrt" else d
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes).astype(float))
        return node

    def grow(idx, depth):
        node = new_node(idx)
        if (depth >= cfg.max_depth or len(idx) < cfg.min_samples_split
                or len(np.unique(y[idx])) < 2):
            return node
        feats = np.sort(rng.choice(d, size=min(n_feats, d), replace=False))
        sub = np.ascontiguousarray(X[idx][:, feats])
        f_local, thr, cost = K.best_split(sub, y[idx], n_classes, 1)
        if f_local < 0 or not np.isfinite(cost):
            return node
        f_global = int(feats[f_local])
        mask = X[idx, f_global] <= thr
        if not mask.any() or mask.all():
            return node
        feature[node] = f_global
        threshold[node] = float(thr)
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(n), 0)
    return DecisionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_counts=np.asarray(counts),
    )


def train_intent_model(examples, cfg: RFConfig) -> IntentModel:
    """Bagged CART forest; per-tree seeds derive from the master seed."""
    cfg.validate()
    if not examples:
        raise ConfigError("no training examples")
    X = np.asarray([e[0] for e in examples], dtype=float)
    labels = [e[1] for e in examples]
    classes = sorted(set(labels), key=lambda it: (it.op.value, it.mg))
    if len(classes) < 2:
        warnings.warn("single intent class; model will always predict it",
                      stacklevel=2)
    class_of = {c: i for i, c in enumerate(classes)}
    y = np.asarray([class_of[l] for l in labels], dtype=np.int64)
    n = len(y)
    n_boot = max(1, int(round(cfg.bootstrap_fraction * n)))

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees, oob = [], []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(seeds[t])
        boot = rng.integers(0, n, size=n_boot)
        trees.append(_build_tree(X[boot], y[boot], len(classes), cfg, rng))
        oob.append(np.setdiff1d(np.arange(n), boot))
    return IntentModel(classes=classes, feature_dim=X.shape[1], trees=trees,
                       oob_indices=oob)


def predict_proba(model: IntentModel, emb: np.ndarray) -> np.ndarray:
    """Mean of per-leaf class distributions across trees; sums to 1."""
    emb = np.asarray(emb, dtype=float)
    if emb.shape != (model.feature_dim,):
        raise ModelError(
            f"embedding dim {emb.shape} does not match model ({model.feature_dim},)")
    leaves = K.forest_apply(model._feature, model._threshold, model._left,
                            model._right, model._roots, emb)
    return model._leaf_dist[leaves].mean(axis=0)


def predict_topk_intents(model: IntentModel, emb: np.ndarray,
                         k: int) -> list[tuple[BiIntent, float]]:
    """Ranked (intent, probability); ties break toward the lower class index."""
    if not 1 <= k <= len(model.classes):
        raise ConfigError(f"k={k} out of range for {len(model.classes)} classes")
    probs = predict_proba(model, emb)
    order = np.lexsort((np.arange(len(probs)), -probs))
    return [(model.classes[int(i)], float(probs[int(i)])) for i in order[:k]]


def oob_accuracy(model: IntentModel, examples) -> float:
    """Out-of-bag accuracy from the bootstrap masks recorded at training."""
    if not model.oob_indices:
        raise ModelError("model was not trained in-process; no OOB records")
    X = np.asarray([e[0] for e in examples], dtype=float)
    class_of = {c: i for i, c in enumerate(model.classes)}
    y = np.asarray([class_of[e[1]] for e in examples], dtype=np.int64)
    votes = np.zeros((len(y), len(model.classes)))
    for tree, oob in zip(model.trees, model.oob_indices):
        for i in oob:
            node = 0
            while tree.feature[node] >= 0:
                node = (tree.left[node] if X[i, tree.feature[node]] <= tree.threshold[node]
                        else tree.right[node])
            dist = tree.leaf_counts[node]
            total = dist.sum()
            if total > 0:
                votes[i] += dist / total
    covered = votes.sum(axis=1) > 0
    if not covered.any():
        raise ModelError("no out-of-bag samples; lower bootstrap_fraction")
    pred = votes[covered].argmax(axis=1)
    return float((pred == y[covered]).mean())


# -- persistence -------------------------------------------------------------------

INTENT_SCHEMA_VERSION = 1


def save_intent_model(model: IntentModel, path) -> None:
    doc = {
        "version": INTENT_SCHEMA_VERSION,
        "feature_dim": model.feature_dim,
        "classes": [{"op": c.op.value, "mg": c.mg} for c in model.classes],
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "leaf_counts": t.leaf_counts.tolist(),
            }
            for t in model.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_intent_model(path) -> IntentModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != INTENT_SCHEMA_VERSION:
        raise ModelError(f"unsupported intent model version: {doc.get('version')!r}")
    classes = [BiIntent(BiOp(c["op"]), c["mg"]) for c in doc["classes"]]
    trees = [
        DecisionTree(
            feature=np.asarray(t["feature"], dtype=np.int64),
            threshold=np.asarray(t["threshold"], dtype=float),
            left=np.asarray(t["left"], dtype=np.int64),
            right=np.asarray(t["right"], dtype=np.int64),
            leaf_counts=np.asarray(t["leaf_counts"], dtype=float),
        )
        for t in doc["trees"]
    ]
    return IntentModel(classes=classes, feature_dim=doc["feature_dim"], trees=trees)
