"""Pattern expansion: task-indexed collaborative filtering over logged
transitions, the session-summary exhaustive baseline, a nonnegative
matrix-factorization baseline, and co-occurrence refinement.

The task index posts each session under every MG of its task, with state
embeddings precomputed, so candidate retrieval per predicted intent is a
dictionary lookup instead of a scan over the whole log.  Scoring picks the
transition maximizing a weighted blend of source-state cosine and exact op
match, and recommends that transition's target pattern.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels as K
from .embedder import EmbedderModel, embed_contexts
from .errors import ConfigError
from .intent import BiIntent
from .ontology import Ontology
from .stategraph import StateContext, ontology_neighborhood
from .workload import (
    BI_OPS,
    BiPattern,
    DimRole,
    DimensionRef,
    UserSession,
    Workload,
    pattern_from_dict,
    pattern_to_dict,
    session_task,
)

logger = logging.getLogger(__name__)

OP_CODE = {op: i for i, op in enumerate(BI_OPS)}


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 1e-12 else np.zeros_like(v)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(a @ b) / (na * nb)


@dataclass(frozen=True)
class Transition:
    source_emb: np.ndarray
    op: object                # BiOp labeling the edge
    target: BiPattern
    session_id: str
    position: int             # source-state index within the session


@dataclass
class TransitionBlock:
    """Transitions of one candidate set, stacked for the scoring kernel.

    Rows are sorted by (session id, position) so tie-breaks fall out of
    stable ordering.
    """

    src: np.ndarray           # (T, d) unit rows
    ops: np.ndarray           # (T,) int64 op codes
    targets: list[BiPattern]
    prov: list[tuple[str, int]]

    @property
    def size(self) -> int:
        return len(self.targets)


@dataclass
class SessionEntry:
    session: UserSession
    embeddings: np.ndarray    # (n_states, d)
    task: frozenset[str]


@dataclass
class TaskIndex:
    postings: dict[str, list[str]]
    sessions: dict[str, SessionEntry]
    blocks: dict[str, TransitionBlock]
    dim: int


@dataclass
class Recommendation:
    pattern: BiPattern
    score: float
    intent: BiIntent | None
    provenance: dict


def _session_contexts(ont: Ontology, s: UserSession) -> list[StateContext]:
    task = session_task(ont, s)
    return [StateContext(s.id, i, st, ontology_neighborhood(ont, st, task))
            for i, st in enumerate(s.states)]


def _session_transitions(entry: SessionEntry) -> list[Transition]:
    s = entry.session
    return [
        Transition(entry.embeddings[i], s.states[i + 1].pattern.op,
                   s.states[i + 1].pattern, s.id, i)
        for i in range(len(s.states) - 1)
    ]


def _stack_block(transitions: list[Transition], dim: int) -> TransitionBlock:
    transitions = sorted(transitions, key=lambda t: (t.session_id, t.position))
    if transitions:
        src = np.stack([t.source_emb for t in transitions])
    else:
        src = np.zeros((0, dim))
    ops = np.asarray([OP_CODE[t.op] for t in transitions], dtype=np.int64)
    return TransitionBlock(
        src=np.ascontiguousarray(src),
        ops=ops,
        targets=[t.target for t in transitions],
        prov=[(t.session_id, t.position) for t in transitions],
    )


def build_task_index(w: Workload, ont: Ontology, model: EmbedderModel) -> TaskIndex:
    """Post every session under each MG of its task, embeddings precomputed."""
    postings: dict[str, list[str]] = {}
    sessions: dict[str, SessionEntry] = {}
    for s in w.sessions:
        ctxs = _session_contexts(ont, s)
        embs = embed_contexts(model, ont, ctxs)
        task = frozenset(session_task(ont, s))
        sessions[s.id] = SessionEntry(s, embs, task)
        for mg in sorted(task):
            postings.setdefault(mg, []).append(s.id)
    blocks = {
        mg: _stack_block(
            [t for sid in sids for t in _session_transitions(sessions[sid])],
            model.output_dim)
        for mg, sids in postings.items()
    }
    return TaskIndex(postings=postings, sessions=sessions, blocks=blocks,
                     dim=model.output_dim)


def transition_similarity(cur_emb: np.ndarray, t: Transition, intent_op,
                          w_s: float = 0.5) -> float:
    """Weighted blend of clamped state cosine and exact op match."""
    if not 0.0 <= w_s <= 1.0:
        raise ConfigError("w_s must lie in [0, 1]")
    state_term = max(0.0, cosine(cur_emb, t.source_emb))
    return w_s * state_term + (1.0 - w_s) * (1.0 if t.op is intent_op else 0.0)


def _pick_from_block(block: TransitionBlock, q: np.ndarray, intent: BiIntent,
                     w_s: float, taken: set[BiPattern]) -> Recommendation | None:
    if block.size == 0:
        return None
    scores = K.transition_scores(block.src, block.ops, q,
                                 OP_CODE[intent.op], w_s)
    order = np.lexsort((np.arange(block.size), -scores))
    for i in order:
        i = int(i)
        target = block.targets[i]
        if target in taken:
            continue
        sid, pos = block.prov[i]
        return Recommendation(
            pattern=target,
            score=float(scores[i]),
            intent=intent,
            provenance={"session_id": sid, "position": pos},
        )
    return None


def recommend_indexed(cur_emb: np.ndarray, intents, idx: TaskIndex,
                      w_s: float = 0.5) -> list[Recommendation]:
    """One recommendation per predicted intent, deduplicated across intents."""
    q = unit(np.asarray(cur_emb, dtype=float))
    out: list[Recommendation] = []
    taken: set[BiPattern] = set()
    for item in intents:
        intent = item[0] if isinstance(item, tuple) else item
        block = idx.blocks.get(intent.mg)
        if block is None or block.size == 0:
            logger.info("no posted sessions for MG %s; skipping intent", intent.mg)
            continue
        rec = _pick_from_block(block, q, intent, w_s, taken)
        if rec is not None:
            taken.add(rec.pattern)
            out.append(rec)
    return out


# -- exhaustive session-summary baseline --------------------------------------------


@dataclass
class ExhaustiveCorpus:
    session_ids: list[str]
    summaries: np.ndarray           # (S, d) unit session-summary rows
    block: TransitionBlock          # all transitions, (sid, pos) sorted
    spans: dict[str, tuple[int, int]]  # sid -> [start, end) rows in block


def build_exhaustive_corpus(w: Workload, model: EmbedderModel) -> ExhaustiveCorpus:
    """Mean-embedding session summaries plus the stacked transition table."""
    ids, summaries, transitions = [], [], []
    for s in sorted(w.sessions, key=lambda s: s.id):
        ctxs = _session_contexts(w.ontology, s)
        embs = embed_contexts(model, w.ontology, ctxs)
        ids.append(s.id)
        summaries.append(unit(embs.mean(axis=0)))
        entry = SessionEntry(s, embs, frozenset())
        transitions.extend(_session_transitions(entry))
    block = _stack_block(transitions, model.output_dim)
    spans: dict[str, tuple[int, int]] = {}
    for row, (sid, _) in enumerate(block.prov):
        start, _end = spans.get(sid, (row, row))
        spans[sid] = (start, row + 1)
    return ExhaustiveCorpus(
        session_ids=ids,
        summaries=np.ascontiguousarray(np.stack(summaries)) if ids else np.zeros((0, model.output_dim)),
        block=block,
        spans=spans,
    )


def filter_sessions_by_summary(prefix_embs: np.ndarray, corpus: ExhaustiveCorpus,
                               top_n: int | None) -> list[str]:
    """Rank prior sessions by summary cosine against the current prefix mean."""
    q = unit(np.asarray(prefix_embs, dtype=float).mean(axis=0))
    scores = K.summary_scores(corpus.summaries, q)
    order = np.lexsort((np.arange(len(scores)), -scores))
    if top_n is not None:
        order = order[:top_n]
    return [corpus.session_ids[int(i)] for i in order]


def _gather_block(corpus: ExhaustiveCorpus, sids: list[str]) -> TransitionBlock:
    rows: list[int] = []
    for sid in sorted(sids):
        start, end = corpus.spans.get(sid, (0, 0))
        rows.extend(range(start, end))
    b = corpus.block
    return TransitionBlock(
        src=np.ascontiguousarray(b.src[rows]) if rows else np.zeros((0, b.src.shape[1])),
        ops=b.ops[rows] if rows else np.zeros(0, dtype=np.int64),
        targets=[b.targets[r] for r in rows],
        prov=[b.prov[r] for r in rows],
    )


def recommend_exhaustive(prefix_embs: np.ndarray, intents,
                         corpus: ExhaustiveCorpus, w_s: float = 0.5,
                         top_n: int | None = 10) -> list[Recommendation]:
    """Summary-pruned scan over prior sessions, then the same transition argmax."""
    keep = filter_sessions_by_summary(prefix_embs, corpus, top_n)
    block = _gather_block(corpus, keep)
    q = unit(np.asarray(prefix_embs, dtype=float)[-1])
    out: list[Recommendation] = []
    taken: set[BiPattern] = set()
    for item in intents:
        intent = item[0] if isinstance(item, tuple) else item
        rec = _pick_from_block(block, q, intent, w_s, taken)
        if rec is not None:
            taken.add(rec.pattern)
            out.append(rec)
    return out


# -- matrix-factorization baseline ---------------------------------------------------


@dataclass
class SvdCfModel:
    patterns: list[BiPattern]     # column order
    item_factors: np.ndarray      # (P, r)
    user_factors: np.ndarray      # (S, r)
    session_ids: list[str]
    loss_trace: list[float]
    reg: float = 1e-6


def _pattern_matrix(w: Workload) -> tuple[np.ndarray, list[BiPattern], list[str]]:
    patterns: list[BiPattern] = []
    index: dict[BiPattern, int] = {}
    for s in w.sessions:
        for st in s.states:
            if st.pattern not in index:
                index[st.pattern] = len(patterns)
                patterns.append(st.pattern)
    r = np.zeros((len(w.sessions), len(patterns)))
    for i, s in enumerate(w.sessions):
        for st in s.states:
            r[i, index[st.pattern]] = 1.0
    return r, patterns, [s.id for s in w.sessions]


def train_svd_cf(w: Workload, rank: int, iters: int = 60,
                 lr: float | None = None, seed: int = 0) -> SvdCfModel:
    """Nonnegative factorization of the binary session-pattern matrix.

    Uses seeded multiplicative updates (monotone in squared error); passing
    an explicit `lr` switches to projected gradient steps instead.
    """
    r, patterns, sids = _pattern_matrix(w)
    n_s, n_p = r.shape
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    if rank > min(n_s, n_p):
        raise ConfigError(f"rank {rank} exceeds matrix dims {r.shape}")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.1, 1.0, size=(n_s, rank))
    v = rng.uniform(0.1, 1.0, size=(n_p, rank))
    eps = 1e-9
    trace = []
    for _ in range(iters):
        if lr is None:
            u *= (r @ v) / (u @ (v.T @ v) + eps)
            v *= (r.T @ u) / (v @ (u.T @ u) + eps)
        else:
            err = u @ v.T - r
            gu = err @ v
            gv = err.T @ u
            u = np.maximum(u - lr * gu, 0.0)
            v = np.maximum(v - lr * gv, 0.0)
        trace.append(float(((u @ v.T - r) ** 2).sum()))
    return SvdCfModel(patterns=patterns, item_factors=v, user_factors=u,
                      session_ids=sids, loss_trace=trace)


def recommend_svd(model: SvdCfModel, current_patterns, k: int) -> list[Recommendation]:
    """Top-k unseen patterns by completed-matrix score for the current session."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    v = model.item_factors
    present = np.zeros(len(model.patterns))
    index = {p: i for i, p in enumerate(model.patterns)}
    seen = set()
    for p in current_patterns:
        if p in index:
            present[index[p]] = 1.0
        seen.add(p)
    gram = v.T @ v + model.reg * np.eye(v.shape[1])
    user = np.maximum(np.linalg.solve(gram, v.T @ present), 0.0)
    scores = v @ user
    order = np.lexsort((np.arange(len(scores)), -scores))
    out = []
    for i in order:
        p = model.patterns[int(i)]
        if p in seen:
            continue
        out.append(Recommendation(pattern=p, score=float(scores[int(i)]),
                                  intent=None, provenance={"svd_column": int(i)}))
        if len(out) >= k:
            break
    return out


# -- co-occurrence refinement ----------------------------------------------------------


@dataclass
class CooccurrenceStats:
    counts: dict[tuple[str, str], int]


def build_cooccurrence(w: Workload) -> CooccurrenceStats:
    counts: dict[tuple[str, str], int] = {}
    for s in w.sessions:
        for st in s.states:
            for m in st.pattern.measures:
                for d in st.pattern.dimensions:
                    key = (m.id, d.id)
                    counts[key] = counts.get(key, 0) + 1
    return CooccurrenceStats(counts=counts)


def refine(rec: Recommendation, stats: CooccurrenceStats,
           n_inferred: int) -> Recommendation:
    """Append up to n most co-occurring group-by dimensions for the measures."""
    if n_inferred not in (0, 1, 2, 3):
        raise ConfigError("n_inferred must be in {0, 1, 2, 3}")
    if n_inferred == 0:
        return rec
    measures = [m.id for m in rec.pattern.measures]
    present = {d.id for d in rec.pattern.dimensions}
    totals: dict[str, int] = {}
    for (m, d), c in stats.counts.items():
        if m in measures and d not in present:
            totals[d] = totals.get(d, 0) + c
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    extra = tuple(DimensionRef(d, DimRole.GROUP_BY) for d, _ in ranked[:n_inferred])
    if not extra:
        return rec
    pattern = replace(rec.pattern, dimensions=rec.pattern.dimensions + extra)
    return replace(rec, pattern=pattern)


# -- persistence -------------------------------------------------------------------

INDEX_SCHEMA_VERSION = 1


def save_task_index(idx: TaskIndex, path) -> None:
    doc = {
        "version": INDEX_SCHEMA_VERSION,
        "dim": idx.dim,
        "postings": {mg: list(sids) for mg, sids in sorted(idx.postings.items())},
        "sessions": {
            sid: {
                "task": sorted(e.task),
                "embeddings": e.embeddings.tolist(),
                "states": [pattern_to_dict(st.pattern) for st in e.session.states],
            }
            for sid, e in sorted(idx.sessions.items())
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_task_index(path) -> TaskIndex:
    from .workload import State

    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != INDEX_SCHEMA_VERSION:
        raise ConfigError(f"unsupported index version: {doc.get('version')!r}")
    sessions: dict[str, SessionEntry] = {}
    for sid, rec in doc["sessions"].items():
        patterns = [pattern_from_dict(p) for p in rec["states"]]
        states = [State(p, ordinal=i + 1) for i, p in enumerate(patterns)]
        session = UserSession(id=sid, states=states,
                              transitions=[st.pattern.op for st in states[1:]])
        sessions[sid] = SessionEntry(
            session=session,
            embeddings=np.asarray(rec["embeddings"], dtype=float),
            task=frozenset(rec["task"]),
        )
    postings = {mg: list(sids) for mg, sids in doc["postings"].items()}
    dim = int(doc["dim"])
    blocks = {
        mg: _stack_block(
            [t for sid in sids for t in _session_transitions(sessions[sid])], dim)
        for mg, sids in postings.items()
    }
    return TaskIndex(postings=postings, sessions=sessions, blocks=blocks, dim=dim)


def save_cooccurrence(stats: CooccurrenceStats, path) -> None:
    doc = {
        "version": 1,
        "counts": [[m, d, c] for (m, d), c in sorted(stats.counts.items())],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_cooccurrence(path) -> CooccurrenceStats:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return CooccurrenceStats(counts={(m, d): int(c) for m, d, c in doc["counts"]})
