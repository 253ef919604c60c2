import numpy as np
import pytest
from fastapi.testclient import TestClient

from biguide.embedder import EmbedderConfig, EncoderConfig, TrainConfig, embed_graph, train_embedder
from biguide.evalharness import FeedbackEntry, FeedbackLog, mrr, precision_at_3
from biguide.intent import RFConfig, build_intent_examples, predict_topk_intents, train_intent_model
from biguide.ontology import OntologyGenConfig, connected_dimensions, generate_synthetic_ontology, parent_measure_group
from biguide.recommender import build_cooccurrence, build_task_index, recommend_indexed, refine
from biguide.service import ServiceArtifacts, create_app
from biguide.stategraph import build_state_graph, ontology_neighborhood
from biguide.workload import (
    State,
    WorkloadConfig,
    generate_workload,
    pattern_from_dict,
    pattern_to_dict,
)


@pytest.fixture(scope="module")
def artifacts():
    cfg = OntologyGenConfig(n_measures=20, n_dimensions=30, n_measure_groups=5,
                            n_dimension_groups=3, dims_per_measure=(2, 4))
    ont = generate_synthetic_ontology(cfg, seed=2)
    w = generate_workload(ont, WorkloadConfig(n_sessions=20, session_length=(3, 5)),
                          seed=3)
    from biguide.stategraph import sample_pairs

    mcfg = EmbedderConfig(output_dim=16, k=2, encoder=EncoderConfig(input_dim=16))
    model = train_embedder(sample_pairs(w, 40, seed=1),
                           TrainConfig(epochs=2, seed=1), mcfg)
    imodel = train_intent_model(build_intent_examples(w, model), RFConfig(seed=1))
    return ServiceArtifacts(
        ontology=ont,
        embedder=model,
        intent_model=imodel,
        index=build_task_index(w, ont, model),
        cooccurrence=build_cooccurrence(w),
        k=3, w_s=0.5, n_inferred=2,
    ), w


@pytest.fixture()
def client(artifacts):
    return TestClient(create_app(artifacts[0]))


def sample_pattern(artifacts, i=0):
    _, w = artifacts
    return pattern_to_dict(w.sessions[i].states[0].pattern)


class TestSessionLifecycle:
    def test_create_returns_distinct_ids(self, client):
        a = client.post("/sessions").json()
        b = client.post("/sessions").json()
        assert a["id"] != b["id"]
        assert a["states"] == 0

    def test_session_id_stable_across_reads(self, client):
        sid = client.post("/sessions").json()["id"]
        for _ in range(3):
            doc = client.get(f"/sessions/{sid}").json()
            assert doc["id"] == sid
            assert doc["states"] == []

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/ghost").status_code == 404

    def test_healthz(self, client):
        doc = client.get("/healthz").json()
        assert doc == {"status": "ok", "ready": True}

    def test_models_not_loaded_503(self):
        bare = TestClient(create_app(None))
        assert bare.post("/sessions").status_code == 503
        assert bare.get("/ontology").status_code == 503
        assert bare.get("/healthz").json()["ready"] is False


class TestSubmitQuery:
    def test_valid_query_returns_bounded_ranked_recs(self, client, artifacts):
        art, _ = artifacts
        sid = client.post("/sessions").json()["id"]
        resp = client.post(f"/sessions/{sid}/queries",
                           json={"pattern": sample_pattern(artifacts)})
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["state_index"] == 1
        recs = doc["recommendations"]
        assert 0 < len(recs) <= 3
        assert [r["rank"] for r in recs] == list(range(1, len(recs) + 1))
        for r in recs:
            from biguide.workload import validate_pattern
            validate_pattern(art.ontology, pattern_from_dict(r["pattern"]))

    def test_unknown_measure_rejected_with_locus(self, client, artifacts):
        sid = client.post("/sessions").json()["id"]
        bad = sample_pattern(artifacts)
        bad["measures"][0]["id"] = "m999"
        resp = client.post(f"/sessions/{sid}/queries", json={"pattern": bad})
        assert resp.status_code == 400
        assert any("m999" in o for o in resp.json()["detail"]["offenders"])

    def test_query_on_unknown_session_404(self, client, artifacts):
        resp = client.post("/sessions/ghost/queries",
                           json={"pattern": sample_pattern(artifacts)})
        assert resp.status_code == 404

    def test_states_append_only(self, client, artifacts):
        sid = client.post("/sessions").json()["id"]
        p0, p1 = sample_pattern(artifacts, 0), sample_pattern(artifacts, 1)
        client.post(f"/sessions/{sid}/queries", json={"pattern": p0})
        client.post(f"/sessions/{sid}/queries", json={"pattern": p1})
        doc = client.get(f"/sessions/{sid}").json()
        assert doc["states"] == [p0, p1]

    def test_online_matches_offline_replay(self, client, artifacts):
        art, w = artifacts
        sid = client.post("/sessions").json()["id"]
        responses = []
        patterns = [st.pattern for st in w.sessions[2].states[:3]]
        for p in patterns:
            resp = client.post(f"/sessions/{sid}/queries",
                               json={"pattern": pattern_to_dict(p)})
            responses.append(resp.json()["recommendations"])

        task = set()
        for i, p in enumerate(patterns):
            task |= {parent_measure_group(art.ontology, m.id) for m in p.measures}
            state = State(p, ordinal=i + 1)
            on = ontology_neighborhood(art.ontology, state, task)
            g = build_state_graph(art.ontology, state, on, art.embedder.level)
            emb = embed_graph(art.embedder, g)
            k_eff = min(art.k, len(art.intent_model.classes))
            intents = predict_topk_intents(art.intent_model, emb, k_eff)
            recs = recommend_indexed(emb, intents, art.index, art.w_s)
            recs = [refine(r, art.cooccurrence, art.n_inferred) for r in recs]
            assert [r["pattern"] for r in responses[i]] == \
                [pattern_to_dict(r.pattern) for r in recs]


class TestFeedback:
    def _started(self, client, artifacts):
        sid = client.post("/sessions").json()["id"]
        resp = client.post(f"/sessions/{sid}/queries",
                           json={"pattern": sample_pattern(artifacts)})
        return sid, resp.json()["recommendations"]

    def test_none_of_the_above_accepted(self, client, artifacts):
        sid, _ = self._started(client, artifacts)
        resp = client.post(f"/sessions/{sid}/feedback", json={"selected_ranks": []})
        assert resp.status_code == 200

    def test_duplicate_ranks_rejected(self, client, artifacts):
        sid, _ = self._started(client, artifacts)
        resp = client.post(f"/sessions/{sid}/feedback",
                           json={"selected_ranks": [1, 1]})
        assert resp.status_code == 400

    def test_out_of_range_rank_rejected(self, client, artifacts):
        sid, recs = self._started(client, artifacts)
        resp = client.post(f"/sessions/{sid}/feedback",
                           json={"selected_ranks": [len(recs) + 1]})
        assert resp.status_code == 400

    def test_feedback_before_any_query_rejected(self, client):
        sid = client.post("/sessions").json()["id"]
        resp = client.post(f"/sessions/{sid}/feedback", json={"selected_ranks": [1]})
        assert resp.status_code == 400

    def test_exported_log_reproduces_service_metrics(self, client, artifacts):
        sid, _ = self._started(client, artifacts)
        client.post(f"/sessions/{sid}/feedback", json={"selected_ranks": [1]})
        client.post(f"/sessions/{sid}/queries",
                    json={"pattern": sample_pattern(artifacts, 1)})
        client.post(f"/sessions/{sid}/feedback", json={"selected_ranks": [2, 3]})
        client.post(f"/sessions/{sid}/queries",
                    json={"pattern": sample_pattern(artifacts, 2)})
        client.post(f"/sessions/{sid}/feedback", json={"selected_ranks": []})
        doc = client.get(f"/sessions/{sid}").json()
        entries = [
            FeedbackEntry(top_ids=tuple(e["top_ids"]),
                          selected_ranks=frozenset(e["selected_ranks"]),
                          votes=tuple((int(r), c) for r, c in e["votes"].items()))
            for e in doc["feedback"]
        ]
        log = FeedbackLog(entries)
        assert precision_at_3(log) == pytest.approx(2 / 3)
        assert mrr(log) == pytest.approx((1.0 + 0.5 + 0.0) / 3)
        assert doc["feedback_metrics"]["precision_at_3"] == pytest.approx(2 / 3)
        assert doc["feedback_metrics"]["mrr"] == pytest.approx(0.5)


class TestOntologyEndpoint:
    def test_counts_match_loaded_ontology(self, client, artifacts):
        art, _ = artifacts
        doc = client.get("/ontology").json()
        assert doc["counts"]["measures"] == len(art.ontology.measures)
        assert doc["counts"]["functional_edges"] == len(art.ontology.functional_edges)
        assert len(doc["ops"]) == 7

    def test_stable_across_calls(self, client):
        assert client.get("/ontology").json() == client.get("/ontology").json()

    def test_measures_list_connected_dimensions(self, client, artifacts):
        art, _ = artifacts
        doc = client.get("/ontology").json()
        for m in doc["measures"]:
            expected = connected_dimensions(art.ontology, {m["id"]})
            assert set(m["dimensions"]) == expected
