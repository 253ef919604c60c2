import numpy as np
import pytest

from biguide.embedder import (
    EmbedderConfig,
    EncoderConfig,
    TrainConfig,
    embed_graph,
    encode_node_features,
    gradient_check,
    init_model,
    load_model,
    pair_loss,
    pair_match,
    save_model,
    train_embedder,
    write_loss_trace,
)
from biguide.errors import ConfigError, TrainingError
from biguide.stategraph import (
    Enrichment,
    GraphEdge,
    GraphNode,
    NodeKind,
    EdgeKind,
    StateGraph,
    build_state_graph,
    ontology_neighborhood,
    sample_pairs,
)
from biguide.workload import (
    Aggregation,
    BiOp,
    BiPattern,
    DimRole,
    DimensionRef,
    MeasureRef,
    State,
)

SMALL = EmbedderConfig(output_dim=8, k=3, encoder=EncoderConfig(input_dim=8))


def toy_graph(labels, edges, enrichment=Enrichment.BI):
    nodes = [GraphNode(f"n{i}", NodeKind.MEASURE, lab) for i, lab in enumerate(labels)]
    graph_edges = [GraphEdge(f"n{a}", f"n{b}", EdgeKind.STRUCTURAL) for a, b in edges]
    return StateGraph(nodes=nodes, edges=graph_edges, enrichment=enrichment)


def clinic_graph(ont, measure="acute_admits", dim="plan", value=None,
                 level=Enrichment.BI_MG_EM):
    role = DimRole.FILTER if value else DimRole.GROUP_BY
    st = State(BiPattern(BiOp.ANALYSIS, (MeasureRef(measure, Aggregation.COUNT),),
                         (DimensionRef(dim, role, value),)), ordinal=1)
    on = ontology_neighborhood(ont, st, {"utilization"})
    return build_state_graph(ont, st, on, level)


class TestEncoder:
    def test_deterministic(self):
        cfg = EncoderConfig()
        n = GraphNode("k", NodeKind.MEASURE, "Acute Admits")
        np.testing.assert_array_equal(encode_node_features(cfg, n),
                                      encode_node_features(cfg, n))

    def test_empty_label_is_kind_one_hot_only(self):
        cfg = EncoderConfig(input_dim=16)
        n = GraphNode("k", NodeKind.ROOT, "")
        v = encode_node_features(cfg, n)
        assert np.all(v[:16] == 0.0)
        assert v[16 + NodeKind.ROOT.value] == 1.0
        assert v.sum() == 1.0

    def test_token_order_invariance(self):
        cfg = EncoderConfig()
        a = encode_node_features(cfg, GraphNode("a", NodeKind.MEASURE, "net pay admit"))
        b = encode_node_features(cfg, GraphNode("b", NodeKind.MEASURE, "admit net pay"))
        np.testing.assert_array_equal(a[:32], b[:32])

    def test_text_block_unit_norm(self):
        cfg = EncoderConfig()
        v = encode_node_features(cfg, GraphNode("a", NodeKind.DIMENSION, "plan type"))
        assert np.linalg.norm(v[:32]) == pytest.approx(1.0)

    def test_kind_distinguishes_same_label(self):
        cfg = EncoderConfig()
        a = encode_node_features(cfg, GraphNode("a", NodeKind.MEASURE, "plan"))
        b = encode_node_features(cfg, GraphNode("b", NodeKind.DIMENSION, "plan"))
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a[:32], b[:32])

    def test_narrow_width_rejected(self):
        with pytest.raises(ConfigError):
            EncoderConfig(input_dim=4).validate()


class TestEmbedGraph:
    def test_same_graph_same_embedding(self, clinic_ontology):
        model = init_model(SMALL, seed=0)
        g = clinic_graph(clinic_ontology)
        a, b = embed_graph(model, g), embed_graph(model, g)
        np.testing.assert_array_equal(a, b)
        assert float(a @ b) == pytest.approx(1.0)

    def test_unit_norm(self, clinic_ontology):
        model = init_model(SMALL, seed=1)
        g = clinic_graph(clinic_ontology)
        assert np.linalg.norm(embed_graph(model, g)) == pytest.approx(1.0)

    def test_single_node_graph_is_finite(self):
        model = init_model(SMALL, seed=2)
        g = toy_graph(["alone"], [])
        emb = embed_graph(model, g)
        assert np.all(np.isfinite(emb))

    def test_node_order_invariance(self, clinic_ontology):
        model = init_model(SMALL, seed=3)
        g = clinic_graph(clinic_ontology, level=Enrichment.BI_MG_EM_DG_ED)
        perm = np.random.default_rng(0).permutation(len(g.nodes))
        shuffled = StateGraph(nodes=[g.nodes[i] for i in perm],
                              edges=list(g.edges), enrichment=g.enrichment)
        np.testing.assert_allclose(embed_graph(model, g),
                                   embed_graph(model, shuffled), atol=1e-12)

    def test_every_node_label_influences_embedding(self, clinic_ontology):
        model = init_model(SMALL, seed=4)
        g = clinic_graph(clinic_ontology, value="2016",
                         level=Enrichment.BI_MG_EM_DG_ED)
        base = embed_graph(model, g)
        for i in range(len(g.nodes)):
            perturbed_nodes = list(g.nodes)
            old = perturbed_nodes[i]
            perturbed_nodes[i] = GraphNode(old.key, old.kind,
                                           old.label + " perturbed token")
            pg = StateGraph(nodes=perturbed_nodes, edges=list(g.edges),
                            enrichment=g.enrichment)
            assert not np.allclose(base, embed_graph(model, pg), atol=1e-9), \
                f"node {g.nodes[i].key} label had no influence"


class TestGradient:
    def test_analytic_matches_central_differences(self, clinic_ontology):
        rng = np.random.default_rng(7)
        worst = 0.0
        for trial in range(5):
            model = init_model(SMALL, seed=100 + trial)
            ga = clinic_graph(clinic_ontology, "acute_admits", "plan")
            gb = clinic_graph(clinic_ontology, "er_visits", "month")
            sim = float(rng.uniform(0.0, 1.0))
            rel = gradient_check(model, ga, gb, sim)
            worst = max(worst, rel)
        assert worst <= 1e-4

    def test_numeric_training_path_works(self, clinic_ontology):
        tiny = EmbedderConfig(output_dim=4, k=1, encoder=EncoderConfig(input_dim=8))
        w_pairs = sample_clinic_pairs(clinic_ontology, n=2)
        model = train_embedder(w_pairs,
                               TrainConfig(epochs=1, learning_rate=0.01, seed=0,
                                           gradient="numeric"), tiny)
        assert len(model.loss_trace) == 1


def sample_clinic_pairs(ont, n):
    from biguide.stategraph import PairSample, state_similarity

    sa = State(BiPattern(BiOp.ANALYSIS,
                         (MeasureRef("acute_admits", Aggregation.COUNT),),
                         (DimensionRef("plan", DimRole.GROUP_BY),)), ordinal=1)
    sb = State(BiPattern(BiOp.PIVOT,
                         (MeasureRef("er_visits", Aggregation.SUM),),
                         (DimensionRef("month", DimRole.GROUP_BY),)), ordinal=1)
    on_a = ontology_neighborhood(ont, sa, {"utilization"})
    on_b = ontology_neighborhood(ont, sb, {"utilization"})
    ga = build_state_graph(ont, sa, on_a, Enrichment.BI_MG_EM)
    gb = build_state_graph(ont, sb, on_b, Enrichment.BI_MG_EM)
    sim = state_similarity(sa, on_a, sb, on_b)
    pairs = [PairSample(ga, gb, sim, sim > 0.5),
             PairSample(ga, ga, 1.0, True)]
    return (pairs * ((n + 1) // 2))[:n]


class TestTraining:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_loss_improves_across_seeds(self, small_workload, seed):
        pairs = sample_pairs(small_workload, 40, seed=seed)
        model = train_embedder(pairs,
                               TrainConfig(epochs=6, learning_rate=0.05, seed=seed),
                               SMALL)
        assert model.loss_trace[-1] < model.loss_trace[0]

    def test_identical_pairs_reach_near_zero_loss(self, clinic_ontology):
        from biguide.stategraph import PairSample

        g = clinic_graph(clinic_ontology)
        pairs = [PairSample(g, g, 1.0, True)] * 4
        model = train_embedder(pairs, TrainConfig(epochs=2, learning_rate=0.01,
                                                  seed=0), SMALL)
        assert model.loss_trace[-1] < 0.05

    def test_bitwise_reproducible_traces(self, small_workload):
        pairs = sample_pairs(small_workload, 30, seed=2)
        cfg = TrainConfig(epochs=3, learning_rate=0.05, seed=5)
        a = train_embedder(pairs, cfg, SMALL)
        b = train_embedder(pairs, cfg, SMALL)
        assert a.loss_trace == b.loss_trace
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_divergent_rate_raises_training_error(self, clinic_ontology):
        pairs = sample_clinic_pairs(clinic_ontology, 4)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingError) as err:
                train_embedder(pairs,
                               TrainConfig(epochs=5, learning_rate=1e200,
                                           clip_norm=1e300, seed=0), SMALL)
        assert err.value.epoch is not None

    def test_no_pairs_rejected(self):
        with pytest.raises(ConfigError):
            train_embedder([], TrainConfig(), SMALL)


class TestPairMatch:
    def test_same_graph_matches(self, clinic_ontology):
        model = init_model(SMALL, seed=0)
        g = clinic_graph(clinic_ontology)
        cos, matched = pair_match(model, g, g, 0.5)
        assert cos == pytest.approx(1.0) and matched

    def test_zero_embedding_reports_zero_cosine(self, clinic_ontology):
        model = init_model(SMALL, seed=0)
        for w in model.weights:
            w[:] = 0.0
        g = clinic_graph(clinic_ontology)
        cos, matched = pair_match(model, g, g, 0.5)
        assert cos == 0.0 and not matched

    def test_threshold_must_be_fractional(self, clinic_ontology):
        model = init_model(SMALL, seed=0)
        g = clinic_graph(clinic_ontology)
        with pytest.raises(ConfigError):
            pair_match(model, g, g, 1.5)


class TestPersistence:
    def test_round_trip(self, clinic_ontology, tmp_path):
        pairs = sample_clinic_pairs(clinic_ontology, 4)
        model = train_embedder(pairs, TrainConfig(epochs=2, seed=3), SMALL)
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        assert back.config == model.config
        g = pairs[0].graph_a
        np.testing.assert_allclose(embed_graph(back, g), embed_graph(model, g),
                                   atol=1e-12)

    def test_loss_trace_csv(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_loss_trace(path, [0.5, 0.25])
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,mean_loss"
        assert lines[1].startswith("0,0.5")
