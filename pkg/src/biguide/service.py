"""Stateful HTTP session service for the interactive recommendation loop.

Each live session accumulates accepted analysis states; every submitted
query returns the top-k next-pattern recommendations from the shared models,
and feedback on those recommendations is recorded for later precision@3 /
MRR computation.  Models and the task index are read-only shared state;
requests within one session are serialized by a per-session lock.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException

from .embedder import EmbedderModel, embed_graph
from .errors import ValidationError
from .evalharness import FeedbackEntry, FeedbackLog, mrr, precision_at_3
from .intent import IntentModel, predict_topk_intents
from .ontology import Ontology, parent_measure_group
from .recommender import (
    CooccurrenceStats,
    Recommendation,
    TaskIndex,
    recommend_indexed,
    refine,
)
from .stategraph import build_state_graph, ontology_neighborhood
from .workload import (
    AGGREGATIONS,
    BI_OPS,
    BiPattern,
    DimRole,
    State,
    pattern_from_dict,
    pattern_to_dict,
    validate_pattern,
)


@dataclass
class ServiceArtifacts:
    ontology: Ontology
    embedder: EmbedderModel
    intent_model: IntentModel
    index: TaskIndex
    cooccurrence: CooccurrenceStats
    k: int = 3
    w_s: float = 0.5
    n_inferred: int = 3


@dataclass
class LiveSession:
    id: str
    states: list[State] = field(default_factory=list)
    task: set[str] = field(default_factory=set)
    pending: list[Recommendation] = field(default_factory=list)
    feedback: list[FeedbackEntry] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _rec_to_dict(rank: int, rec: Recommendation) -> dict:
    doc = {
        "rank": rank,
        "score": rec.score,
        "pattern": pattern_to_dict(rec.pattern),
        "provenance": rec.provenance,
    }
    if rec.intent is not None:
        doc["intent"] = {"op": rec.intent.op.value, "mg": rec.intent.mg}
    return doc


def _feedback_to_dict(e: FeedbackEntry) -> dict:
    return {
        "top_ids": list(e.top_ids),
        "selected_ranks": sorted(e.selected_ranks),
        "votes": {str(r): c for r, c in e.votes},
    }


def create_app(artifacts: ServiceArtifacts | None = None) -> FastAPI:
    app = FastAPI(title="biguide", version="0.1.0")
    sessions: dict[str, LiveSession] = {}
    counter = itertools.count(1)
    registry_lock = threading.Lock()

    def require_ready() -> ServiceArtifacts:
        if artifacts is None:
            raise HTTPException(status_code=503, detail="models not loaded")
        return artifacts

    def get_session(session_id: str) -> LiveSession:
        s = sessions.get(session_id)
        if s is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown session: {session_id}")
        return s

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "ready": artifacts is not None}

    @app.post("/sessions", status_code=201)
    def create_session():
        require_ready()
        with registry_lock:
            sid = f"live-{next(counter)}"
            sessions[sid] = LiveSession(id=sid)
        return {"id": sid, "states": 0}

    @app.get("/sessions/{session_id}")
    def get_session_view(session_id: str):
        s = get_session(session_id)
        with s.lock:
            log = FeedbackLog(list(s.feedback))
            doc = {
                "id": s.id,
                "task_mgs": sorted(s.task),
                "states": [pattern_to_dict(st.pattern) for st in s.states],
                "pending": [_rec_to_dict(i + 1, r)
                            for i, r in enumerate(s.pending)],
                "feedback": [_feedback_to_dict(e) for e in s.feedback],
            }
            if s.feedback:
                doc["feedback_metrics"] = {
                    "precision_at_3": precision_at_3(log),
                    "mrr": mrr(log),
                }
            return doc

    @app.post("/sessions/{session_id}/queries")
    def submit_query(session_id: str, body: dict):
        art = require_ready()
        s = get_session(session_id)
        try:
            pattern = pattern_from_dict(body.get("pattern", body))
            validate_pattern(art.ontology, pattern)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail={
                "error": str(exc), "offenders": exc.offenders})
        except Exception as exc:
            raise HTTPException(status_code=400, detail={"error": str(exc)})
        with s.lock:
            state = State(pattern, ordinal=len(s.states) + 1)
            s.states.append(state)
            s.task |= {parent_measure_group(art.ontology, m.id)
                       for m in pattern.measures}
            on = ontology_neighborhood(art.ontology, state, s.task)
            g = build_state_graph(art.ontology, state, on, art.embedder.level)
            emb = embed_graph(art.embedder, g)
            k_eff = min(art.k, len(art.intent_model.classes))
            intents = predict_topk_intents(art.intent_model, emb, k_eff)
            recs = recommend_indexed(emb, intents, art.index, art.w_s)
            recs = [refine(r, art.cooccurrence, art.n_inferred) for r in recs]
            s.pending = recs
            return {
                "id": s.id,
                "state_index": len(s.states),
                "echo": pattern_to_dict(pattern),
                "recommendations": [_rec_to_dict(i + 1, r)
                                    for i, r in enumerate(recs)],
            }

    @app.post("/sessions/{session_id}/feedback")
    def submit_feedback(session_id: str, body: dict):
        s = get_session(session_id)
        with s.lock:
            if not s.pending:
                raise HTTPException(status_code=400,
                                    detail="no pending recommendations")
            ranks = body.get("selected_ranks", [])
            if not isinstance(ranks, list):
                raise HTTPException(status_code=400,
                                    detail="selected_ranks must be a list")
            if len(set(ranks)) != len(ranks):
                raise HTTPException(status_code=400,
                                    detail="duplicate ranks in selection")
            valid = set(range(1, len(s.pending) + 1))
            bad = [r for r in ranks if r not in valid]
            if bad:
                raise HTTPException(status_code=400,
                                    detail=f"ranks out of range: {bad}")
            votes = tuple((r, 1) for r in sorted(ranks))
            entry = FeedbackEntry(
                top_ids=tuple(f"{s.id}:{len(s.states)}:{i + 1}"
                              for i in range(len(s.pending))),
                selected_ranks=frozenset(ranks),
                votes=votes,
            )
            s.feedback.append(entry)
            return {"id": s.id, "recorded": len(s.feedback)}

    @app.get("/ontology")
    def get_ontology():
        art = require_ready()
        ont = art.ontology
        by_measure: dict[str, list[str]] = {m: [] for m in ont.measures}
        for m, d in sorted(ont.functional_edges):
            by_measure[m].append(d)
        return {
            "counts": {
                "measures": len(ont.measures),
                "dimensions": len(ont.dimensions),
                "measure_groups": len(ont.measure_groups),
                "dimension_groups": len(ont.dimension_groups),
                "functional_edges": len(ont.functional_edges),
            },
            "ops": [op.value for op in BI_OPS],
            "aggregations": [a.value for a in AGGREGATIONS],
            "roles": [r.value for r in DimRole],
            "measures": [
                {
                    "id": m,
                    "label": ont.labels[m],
                    "measure_group": ont.isa_edges.get(m),
                    "dimensions": by_measure[m],
                }
                for m in sorted(ont.measures)
            ],
            "dimensions": [
                {"id": d, "label": ont.labels[d],
                 "dimension_group": ont.isa_edges.get(d)}
                for d in sorted(ont.dimensions)
            ],
            "measure_groups": [
                {"id": g, "label": ont.labels[g]}
                for g in sorted(ont.measure_groups)
            ],
            "dimension_groups": [
                {"id": g, "label": ont.labels[g]}
                for g in sorted(ont.dimension_groups)
            ],
        }

    return app
