"""End-to-end evaluation: fold replay, accuracy metrics, feedback metrics,
latency measurement, and report emission.

Pattern accuracy is the set Jaccard over a pattern's flattened elements; the
per-element breakdown scores the predicted candidate closest to the expected
pattern among the top-3.  Feedback logs yield precision@3 (share of queries
with at least one useful pick) and mean reciprocal rank of the most-voted
recommendation.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
import zlib
from dataclasses import dataclass, asdict

import numpy as np

from .embedder import (
    EmbedderConfig,
    EncoderConfig,
    TrainConfig,
    embed_graph,
    init_model,
    train_embedder,
)
from .errors import ConfigError
from .intent import (
    BiIntent,
    RFConfig,
    build_intent_examples,
    predict_topk_intents,
    train_intent_model,
)
from .ontology import Ontology, parent_measure_group
from .recommender import (
    build_cooccurrence,
    build_exhaustive_corpus,
    build_task_index,
    filter_sessions_by_summary,
    recommend_exhaustive,
    recommend_indexed,
    recommend_svd,
    refine,
    train_svd_cf,
)
from .stategraph import Enrichment, build_state_graph, ontology_neighborhood, sample_pairs
from .workload import BiPattern, Workload, split_folds


def derive_seed(master: int, tag: str) -> int:
    """Stable per-stage seed fan-out from one master seed."""
    return zlib.crc32(f"{master}:{tag}".encode("utf-8")) & 0x7FFFFFFF


# -- metrics ---------------------------------------------------------------------


def pattern_elements(p: BiPattern) -> set:
    """Flattened element set: tagged op, (measure, agg), (dim, role, value)."""
    out = {("op", p.op.value)}
    out |= {("m", m.id, m.agg.value) for m in p.measures}
    out |= {("d", d.id, d.role.value, d.value) for d in p.dimensions}
    return out


def pattern_jaccard(expected: BiPattern, predicted: BiPattern) -> float:
    a, b = pattern_elements(expected), pattern_elements(predicted)
    return len(a & b) / len(a | b)


def intent_accuracy(expected: BiIntent, predicted) -> float:
    """Best top-k score: half for the op match, half for the MG match."""
    if not predicted:
        return 0.0
    best = 0.0
    for item in predicted:
        intent = item[0] if isinstance(item, tuple) else item
        score = 0.5 * (intent.op is expected.op) + 0.5 * (intent.mg == expected.mg)
        best = max(best, score)
    return best


@dataclass(frozen=True)
class FeedbackEntry:
    top_ids: tuple[str, ...]
    selected_ranks: frozenset[int]
    votes: tuple[tuple[int, int], ...]   # (rank, count) pairs

    def vote_map(self) -> dict[int, int]:
        return dict(self.votes)


@dataclass
class FeedbackLog:
    entries: list[FeedbackEntry]


def precision_at_3(log: FeedbackLog) -> float:
    """Share of queries where the user selected at least one recommendation."""
    if not log.entries:
        raise ConfigError("feedback log is empty")
    hits = sum(1 for e in log.entries
               if e.selected_ranks or any(c > 0 for _, c in e.votes))
    return hits / len(log.entries)


def mrr(log: FeedbackLog) -> float:
    """Mean reciprocal rank of each query's most-voted recommendation.

    Vote ties resolve to the lower rank; queries with no votes contribute 0.
    """
    if not log.entries:
        raise ConfigError("feedback log is empty")
    recips = []
    for e in log.entries:
        votes = e.vote_map()
        positive = {r: c for r, c in votes.items() if c > 0}
        if not positive:
            recips.append(0.0)
            continue
        top = max(positive.values())
        rank = min(r for r, c in positive.items() if c == top)
        recips.append(1.0 / rank)
    return math.fsum(recips) / len(recips)


def _measure_ids(p: BiPattern) -> set[str]:
    return {m.id for m in p.measures}


def _dimension_ids(p: BiPattern) -> set[str]:
    return {d.id for d in p.dimensions}


def _recall(expected: set, predicted: set) -> float:
    if not expected:
        return 1.0
    return len(expected & predicted) / len(expected)


def element_breakdown(ont: Ontology, expected: BiPattern,
                      predicted: BiPattern) -> dict[str, float]:
    """Per-element accuracy: op equality plus recall of expected elements."""
    exp_mg = {parent_measure_group(ont, m) for m in _measure_ids(expected)}
    pred_mg = {parent_measure_group(ont, m) for m in _measure_ids(predicted)}
    return {
        "op": 1.0 if expected.op is predicted.op else 0.0,
        "measure": _recall(_measure_ids(expected), _measure_ids(predicted)),
        "mg": _recall(exp_mg, pred_mg),
        "dimension": _recall(_dimension_ids(expected), _dimension_ids(predicted)),
    }


def dimension_accuracy(expected: BiPattern, predicted: BiPattern) -> float:
    return _recall(_dimension_ids(expected), _dimension_ids(predicted))


# -- pipeline config ----------------------------------------------------------------


@dataclass
class EvalConfig:
    folds: int = 5
    seed: int = 0
    level: Enrichment = Enrichment.BI_MG_EM
    embed_dim: int = 64
    encoder_dim: int = 32
    k_layers: int = 3
    train_pairs: int = 600
    epochs: int = 12
    learning_rate: float = 0.05
    n_trees: int = 20
    max_depth: int = 10
    k: int = 3
    w_s: float = 0.5
    n_inferred: int = 0
    n_inferred_sweep: tuple[int, ...] = (0, 1, 2, 3)
    methods: tuple[str, ...] = ("indexed",)
    exhaustive_top_n: int = 10
    svd_rank: int = 20
    svd_iters: int = 40

    def echo(self) -> dict:
        doc = asdict(self)
        doc["level"] = self.level.name.lower().replace("_", "-")
        doc["methods"] = list(self.methods)
        doc["n_inferred_sweep"] = list(self.n_inferred_sweep)
        return doc


def _embedder_config(cfg: EvalConfig) -> EmbedderConfig:
    return EmbedderConfig(output_dim=cfg.embed_dim, k=cfg.k_layers,
                          encoder=EncoderConfig(input_dim=cfg.encoder_dim),
                          level=cfg.level)


# -- embedding pair evaluation (component-level) --------------------------------------


def pair_match_accuracy(model, pairs, threshold: float = 0.5) -> float:
    """Accuracy of cosine-thresholded matching against the pair labels."""
    if not pairs:
        raise ConfigError("no pairs to evaluate")
    hits = 0
    for p in pairs:
        cos = float(embed_graph(model, p.graph_a) @ embed_graph(model, p.graph_b))
        hits += (cos > threshold) == p.matching
    return hits / len(pairs)


def split_sessions(w: Workload, test_fraction: float, seed: int):
    """Seeded whole-session holdout split."""
    n_test = max(1, int(round(test_fraction * len(w.sessions))))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(w.sessions))
    test_ids = {w.sessions[int(i)].id for i in order[:n_test]}
    train = [s for s in w.sessions if s.id not in test_ids]
    test = [s for s in w.sessions if s.id in test_ids]
    return (Workload(w.ontology, train, {"kind": "holdout-train"}),
            Workload(w.ontology, test, {"kind": "holdout-test"}))


@dataclass
class SweepConfig:
    """Settings for the enrichment-level and embedding-width sweeps.

    Each sweep point averages over `train_seeds`: the single-seed spread of
    SGD on these small models is larger than the effects being compared.
    """

    train_pairs: int = 1500
    test_pairs: int = 600
    epochs: int = 30
    learning_rate: float = 0.08
    lr_decay: float = 0.15
    momentum: float = 0.0
    encoder_dim: int = 32
    k_layers: int = 3
    seed: int = 0
    train_seeds: tuple[int, ...] = (3, 4, 5)
    test_fraction: float = 0.2


def sweep_point(train_w: Workload, test_w: Workload, level: Enrichment,
                output_dim: int, cfg: SweepConfig) -> float:
    """Seed-averaged held-out pair-match accuracy for one (level, width)."""
    if not cfg.train_seeds:
        raise ConfigError("train_seeds must be non-empty")
    train_pairs = sample_pairs(train_w, cfg.train_pairs, seed=cfg.seed + 1,
                               level=level)
    test_pairs = sample_pairs(test_w, cfg.test_pairs, seed=cfg.seed + 2,
                              level=level)
    mcfg = EmbedderConfig(output_dim=output_dim, k=cfg.k_layers,
                          encoder=EncoderConfig(input_dim=cfg.encoder_dim),
                          level=level)
    accs = []
    for s in cfg.train_seeds:
        model = train_embedder(
            train_pairs,
            TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                        lr_decay=cfg.lr_decay, momentum=cfg.momentum, seed=s),
            mcfg)
        accs.append(pair_match_accuracy(model, test_pairs))
    return float(np.mean(accs))


def enrichment_sweep(w: Workload, cfg: SweepConfig,
                     output_dim: int = 64) -> dict[str, float]:
    train_w, test_w = split_sessions(w, cfg.test_fraction, cfg.seed)
    return {level.name: sweep_point(train_w, test_w, level, output_dim, cfg)
            for level in Enrichment}


def dimension_sweep(w: Workload, cfg: SweepConfig,
                    dims: tuple[int, ...] = (32, 64, 128),
                    level: Enrichment = Enrichment.BI_MG_EM) -> dict[int, float]:
    train_w, test_w = split_sessions(w, cfg.test_fraction, cfg.seed)
    return {d: sweep_point(train_w, test_w, level, d, cfg) for d in dims}


# -- full evaluation -------------------------------------------------------------------


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _replay_session(ont, session, model, imodel, stats, cfg, recommenders):
    """Yield per-query records for one test session, using prefix context."""
    task: set[str] = set()
    prefix_embs: list[np.ndarray] = []
    prefix_patterns: list[BiPattern] = []
    records = []
    k_eff = min(cfg.k, len(imodel.classes))
    for i, st in enumerate(session.states):
        task |= {parent_measure_group(ont, m.id) for m in st.pattern.measures}
        on = ontology_neighborhood(ont, st, task)
        g = build_state_graph(ont, st, on, model.level)
        prefix_embs.append(embed_graph(model, g))
        prefix_patterns.append(st.pattern)
        if i == len(session.states) - 1:
            break
        expected = session.states[i + 1].pattern
        expected_intents = [
            BiIntent(expected.op, mg)
            for mg in sorted({parent_measure_group(ont, m.id)
                              for m in expected.measures})
        ]
        t0 = time.perf_counter()
        intents = predict_topk_intents(imodel, prefix_embs[-1], k_eff)
        intent_ms = (time.perf_counter() - t0) * 1000.0

        rec = {
            "expected": expected,
            "intent_accuracy": max(intent_accuracy(e, intents)
                                   for e in expected_intents),
            "intent_ms": intent_ms,
            "methods": {},
        }
        for name, fn in recommenders.items():
            t0 = time.perf_counter()
            recs, filter_ms = fn(np.asarray(prefix_embs), prefix_patterns,
                                 intents, k_eff)
            predict_ms = intent_ms + (time.perf_counter() - t0) * 1000.0
            refined = [refine(r, stats, cfg.n_inferred) for r in recs]
            jacc = [pattern_jaccard(expected, r.pattern) for r in refined]
            topk = {
                f"top{j}": (max(jacc[:j]) if jacc[:j] else 0.0)
                for j in (1, 2, 3)
            }
            exact = any(r.pattern == expected for r in refined)
            closest = int(np.argmax(jacc)) if jacc else None
            breakdown = (element_breakdown(ont, expected, refined[closest].pattern)
                         if closest is not None else
                         {"op": 0.0, "measure": 0.0, "mg": 0.0, "dimension": 0.0})
            dim_by_n = {}
            for n in cfg.n_inferred_sweep:
                refs = [refine(r, stats, n) for r in recs]
                js = [pattern_jaccard(expected, r.pattern) for r in refs]
                ci = int(np.argmax(js)) if js else None
                dim_by_n[str(n)] = (dimension_accuracy(expected, refs[ci].pattern)
                                    if ci is not None else 0.0)
            rec["methods"][name] = {
                "topk": topk,
                "exact": 1.0 if exact else 0.0,
                "breakdown": breakdown,
                "dimension_by_n_inferred": dim_by_n,
                "timing": {"predict_ms": predict_ms, "filter_ms": filter_ms},
            }
        records.append(rec)
    return records


def evaluate(w: Workload, ont: Ontology, cfg: EvalConfig) -> dict:
    """k-fold train/replay evaluation; returns the full report document."""
    folds = split_folds(w, cfg.folds, derive_seed(cfg.seed, "folds"))
    fold_reports = []
    for fold_i, (train_sessions, test_sessions) in enumerate(folds):
        fold_seed = derive_seed(cfg.seed, f"fold{fold_i}")
        train_w = Workload(ont, train_sessions, {"kind": "fold-train"})

        timing: dict[str, float] = {}
        t0 = time.perf_counter()
        pairs = sample_pairs(train_w, cfg.train_pairs,
                             derive_seed(fold_seed, "pairs"), cfg.level)
        model = train_embedder(
            pairs,
            TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                        seed=derive_seed(fold_seed, "embedder")),
            _embedder_config(cfg))
        timing["embedder_train_s"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        examples = build_intent_examples(train_w, model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            imodel = train_intent_model(
                examples,
                RFConfig(n_trees=cfg.n_trees, max_depth=cfg.max_depth,
                         seed=derive_seed(fold_seed, "rf")))
        timing["intent_train_s"] = time.perf_counter() - t0
        single_class = len(imodel.classes) < 2
        if single_class:
            warnings.warn(f"fold {fold_i}: single intent class; intent metrics skipped",
                          stacklevel=2)

        t0 = time.perf_counter()
        idx = build_task_index(train_w, ont, model)
        timing["index_build_s"] = time.perf_counter() - t0
        stats = build_cooccurrence(train_w)

        recommenders = {}
        if "indexed" in cfg.methods:
            def rec_indexed(prefix_embs, prefix_patterns, intents, k_eff,
                            _idx=idx):
                t0 = time.perf_counter()
                for item in intents:
                    _idx.blocks.get(item[0].mg)
                filter_ms = (time.perf_counter() - t0) * 1000.0
                return recommend_indexed(prefix_embs[-1], intents, _idx,
                                         cfg.w_s), filter_ms
            recommenders["indexed"] = rec_indexed
        if "exhaustive" in cfg.methods:
            t0 = time.perf_counter()
            corpus = build_exhaustive_corpus(train_w, model)
            timing["summary_build_s"] = time.perf_counter() - t0

            def rec_exhaustive(prefix_embs, prefix_patterns, intents, k_eff,
                               _corpus=corpus):
                t0 = time.perf_counter()
                filter_sessions_by_summary(prefix_embs, _corpus,
                                           cfg.exhaustive_top_n)
                filter_ms = (time.perf_counter() - t0) * 1000.0
                return recommend_exhaustive(prefix_embs, intents, _corpus,
                                            cfg.w_s, cfg.exhaustive_top_n), filter_ms
            recommenders["exhaustive"] = rec_exhaustive
        if "svd" in cfg.methods:
            n_patterns = len({st.pattern for s in train_sessions for st in s.states})
            rank = min(cfg.svd_rank, len(train_sessions), n_patterns)
            svd_model = train_svd_cf(train_w, rank, cfg.svd_iters,
                                     seed=derive_seed(fold_seed, "svd"))

            def rec_svd(prefix_embs, prefix_patterns, intents, k_eff,
                        _svd=svd_model):
                t0 = time.perf_counter()
                recs = recommend_svd(_svd, prefix_patterns, k_eff)
                return recs, (time.perf_counter() - t0) * 1000.0
            recommenders["svd"] = rec_svd

        records = []
        for s in test_sessions:
            records.extend(_replay_session(ont, s, model, imodel, stats, cfg,
                                           recommenders))

        fold_doc = {
            "fold": fold_i,
            "n_train_sessions": len(train_sessions),
            "n_test_sessions": len(test_sessions),
            "n_queries": len(records),
            "intent_accuracy": (None if single_class or not records else
                                _mean([r["intent_accuracy"] for r in records])),
            "methods": {},
            "timing": {**timing,
                       "intent_predict_ms": _mean([r["intent_ms"] for r in records])},
        }
        for name in recommenders:
            mrecs = [r["methods"][name] for r in records]
            fold_doc["methods"][name] = {
                "pattern_jaccard": {
                    f"top{j}": _mean([m["topk"][f"top{j}"] for m in mrecs])
                    for j in (1, 2, 3)
                },
                "exact_match": _mean([m["exact"] for m in mrecs]),
                "breakdown": {
                    key: _mean([m["breakdown"][key] for m in mrecs])
                    for key in ("op", "measure", "mg", "dimension")
                },
                "dimension_by_n_inferred": {
                    str(n): _mean([m["dimension_by_n_inferred"][str(n)] for m in mrecs])
                    for n in cfg.n_inferred_sweep
                },
                "timing": {
                    "predict_ms": _mean([m["timing"]["predict_ms"] for m in mrecs]),
                    "filter_ms": _mean([m["timing"]["filter_ms"] for m in mrecs]),
                },
            }
        fold_reports.append(fold_doc)

    return {
        "config": cfg.echo(),
        "folds": fold_reports,
        "aggregate": _aggregate(fold_reports),
    }


_TIMING_KEYS = ("timing",)


def _aggregate(fold_reports: list[dict]) -> dict:
    """Leaf-wise mean over folds (None-skipping), same nesting as one fold."""

    def agg(values):
        if all(isinstance(v, dict) for v in values):
            keys = values[0].keys()
            return {k: agg([v[k] for v in values]) for k in keys}
        nums = [v for v in values if isinstance(v, (int, float))]
        return _mean(nums)

    skip = {"fold"}
    keys = [k for k in fold_reports[0] if k not in skip]
    return {k: agg([f[k] for f in fold_reports]) for k in keys}


def strip_timing(doc):
    """Copy of a report with all timing subtrees removed (for determinism checks)."""
    if isinstance(doc, dict):
        return {k: strip_timing(v) for k, v in doc.items()
                if k not in _TIMING_KEYS}
    if isinstance(doc, list):
        return [strip_timing(v) for v in doc]
    return doc


# -- latency benchmark --------------------------------------------------------------


@dataclass
class BenchConfig:
    sizes: tuple[int, ...] = (100, 300, 1000)
    trials: int = 30
    warmup: int = 5
    queries: int = 25
    seed: int = 0
    level: Enrichment = Enrichment.BI_MG_EM
    embed_dim: int = 64
    encoder_dim: int = 32
    k_layers: int = 3
    k: int = 3
    w_s: float = 0.5
    n_inferred: int = 3
    exhaustive_top_n: int = 10
    rf_examples_cap: int = 400


def latency_bench(w: Workload, cfg: BenchConfig) -> list[dict]:
    """Median filter/predict latencies for both recommenders across corpus sizes.

    The embedder is seeded but untrained (forward cost is weight-agnostic);
    one intent model trained on the smallest corpus serves every size.
    """
    sizes = sorted(cfg.sizes)
    if len(sizes) < 2:
        raise ConfigError("bench needs at least two corpus sizes")
    if sizes[-1] > len(w.sessions):
        raise ConfigError(f"largest size {sizes[-1]} exceeds workload "
                          f"({len(w.sessions)} sessions)")
    ont = w.ontology
    mcfg = EmbedderConfig(output_dim=cfg.embed_dim, k=cfg.k_layers,
                          encoder=EncoderConfig(input_dim=cfg.encoder_dim),
                          level=cfg.level)
    model = init_model(mcfg, derive_seed(cfg.seed, "bench-model"))
    base_w = Workload(ont, w.sessions[:sizes[0]], {"kind": "bench-train"})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        imodel = train_intent_model(
            build_intent_examples(base_w, model)[:cfg.rf_examples_cap],
            RFConfig(seed=derive_seed(cfg.seed, "bench-rf")))
    k_eff = min(cfg.k, len(imodel.classes))

    rows: list[dict] = []
    for size in sizes:
        sub = Workload(ont, w.sessions[:size], {"kind": "bench"})
        t0 = time.perf_counter()
        idx = build_task_index(sub, ont, model)
        prep_indexed = time.perf_counter() - t0
        t0 = time.perf_counter()
        corpus = build_exhaustive_corpus(sub, model)
        prep_exh = time.perf_counter() - t0
        stats = build_cooccurrence(sub)

        queries = []
        for s in sub.sessions[:cfg.queries]:
            entry = idx.sessions[s.id]
            upto = min(2, len(s.states))
            prefix = entry.embeddings[:upto]
            intents = predict_topk_intents(imodel, prefix[-1], k_eff)
            queries.append((prefix, intents))
        if not queries:
            raise ConfigError("no queries available for benchmarking")

        def timed(fn):
            samples = []
            for trial in range(cfg.warmup + cfg.trials):
                t0 = time.perf_counter()
                for q in queries:
                    fn(q)
                dt = (time.perf_counter() - t0) / len(queries) * 1000.0
                if trial >= cfg.warmup:
                    samples.append(dt)
            return float(np.median(samples))

        def indexed_filter(q):
            for intent, _ in q[1]:
                idx.blocks.get(intent.mg)

        def exhaustive_filter(q):
            filter_sessions_by_summary(q[0], corpus, cfg.exhaustive_top_n)

        def indexed_predict(q):
            intents = predict_topk_intents(imodel, q[0][-1], k_eff)
            recs = recommend_indexed(q[0][-1], intents, idx, cfg.w_s)
            return [refine(r, stats, cfg.n_inferred) for r in recs]

        def exhaustive_predict(q):
            intents = predict_topk_intents(imodel, q[0][-1], k_eff)
            recs = recommend_exhaustive(q[0], intents, corpus, cfg.w_s,
                                        cfg.exhaustive_top_n)
            return [refine(r, stats, cfg.n_inferred) for r in recs]

        rows.append({"method": "indexed", "n_sessions": size,
                     "filter_ms": timed(indexed_filter),
                     "predict_ms": timed(indexed_predict),
                     "preprocess_s": prep_indexed})
        rows.append({"method": "exhaustive", "n_sessions": size,
                     "filter_ms": timed(exhaustive_filter),
                     "predict_ms": timed(exhaustive_predict),
                     "preprocess_s": prep_exh})
    return rows


# -- report emission -----------------------------------------------------------------


def write_report_json(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def _flatten(doc, prefix=""):
    out = {}
    if isinstance(doc, dict):
        for k, v in doc.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    else:
        out[prefix[:-1]] = doc
    return out


def write_report_csv(report: dict, path) -> None:
    rows = []
    for fold in report["folds"]:
        flat = _flatten({k: v for k, v in fold.items() if k != "fold"})
        rows.extend(("fold" + str(fold["fold"]), k, v) for k, v in sorted(flat.items()))
    flat = _flatten(report["aggregate"])
    rows.extend(("aggregate", k, v) for k, v in sorted(flat.items()))
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scope", "metric", "value"])
        writer.writerows(rows)


def write_latency_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "n_sessions", "filter_ms", "predict_ms",
                         "preprocess_s"])
        for r in rows:
            writer.writerow([r["method"], r["n_sessions"], r["filter_ms"],
                             r["predict_ms"], r["preprocess_s"]])
