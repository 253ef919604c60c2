import numpy as np
import pytest

from biguide.embedder import EmbedderConfig, EncoderConfig, init_model
from biguide.errors import ConfigError, ModelError
from biguide.intent import (
    BiIntent,
    RFConfig,
    build_intent_examples,
    load_intent_model,
    oob_accuracy,
    predict_proba,
    predict_topk_intents,
    save_intent_model,
    train_intent_model,
)
from biguide.workload import (
    Aggregation,
    BiOp,
    BiPattern,
    MeasureRef,
    State,
    UserSession,
    Workload,
)

SMALL = EmbedderConfig(output_dim=8, k=2, encoder=EncoderConfig(input_dim=8))


def session_of(sid, op_measures):
    states = [
        State(BiPattern(op, tuple(MeasureRef(m, Aggregation.COUNT) for m in ms)),
              ordinal=i + 1)
        for i, (op, ms) in enumerate(op_measures)
    ]
    return UserSession(id=sid, states=states,
                       transitions=[s.pattern.op for s in states[1:]])


def blob_examples(n_per_class=60, n_classes=3, dim=16, seed=0, spread=1.0):
    """Gaussian blobs labeled with distinct synthetic intents."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim)) * 3.0
    ops = [BiOp.ANALYSIS, BiOp.DRILL_DOWN, BiOp.ROLL_UP, BiOp.PIVOT]
    examples = []
    for c in range(n_classes):
        intent = BiIntent(ops[c % len(ops)], f"mg{c}")
        for _ in range(n_per_class):
            examples.append((centers[c] + spread * rng.standard_normal(dim), intent))
    return examples


class TestBuildExamples:
    def test_two_state_session_labels_with_next_op(self, clinic_ontology):
        w = Workload(clinic_ontology,
                     [session_of("s", [(BiOp.ANALYSIS, ["acute_admits"]),
                                       (BiOp.DRILL_DOWN, ["acute_admits"])])], {})
        model = init_model(SMALL, seed=0)
        examples = build_intent_examples(w, model)
        assert len(examples) == 1
        assert examples[0][1] == BiIntent(BiOp.DRILL_DOWN, "utilization")

    def test_single_state_session_yields_nothing(self, clinic_ontology):
        w = Workload(clinic_ontology,
                     [session_of("s", [(BiOp.ANALYSIS, ["acute_admits"])])], {})
        assert build_intent_examples(w, init_model(SMALL, seed=0)) == []

    def test_example_count_matches_transition_count(self, small_workload):
        model = init_model(SMALL, seed=1)
        examples = build_intent_examples(small_workload, model)
        # Generated sessions draw measures from one MG, so no duplication.
        expected = sum(len(s.states) - 1 for s in small_workload.sessions)
        assert len(examples) == expected

    def test_multi_group_state_duplicates_examples(self, clinic_ontology):
        w = Workload(clinic_ontology,
                     [session_of("s", [(BiOp.ANALYSIS, ["acute_admits"]),
                                       (BiOp.COMPARISON, ["acute_admits", "net_pay"])])],
                     {})
        examples = build_intent_examples(w, init_model(SMALL, seed=0))
        labels = sorted((e[1].op.value, e[1].mg) for e in examples)
        assert labels == [("COMPARISON", "net_payment"), ("COMPARISON", "utilization")]

    def test_label_space_bounded_by_ops_times_tasks(self, small_workload):
        model = init_model(SMALL, seed=2)
        examples = build_intent_examples(small_workload, model)
        intents = {e[1] for e in examples}
        mgs = {i.mg for i in intents}
        assert len(intents) <= 7 * len(mgs)


class TestTraining:
    def test_separable_data_fits_perfectly(self):
        examples = blob_examples(spread=0.1)
        model = train_intent_model(examples, RFConfig(n_trees=10, seed=0))
        X = np.stack([e[0] for e in examples])
        correct = 0
        for x, label in zip(X, [e[1] for e in examples]):
            pred = predict_topk_intents(model, x, 1)[0][0]
            correct += pred == label
        assert correct == len(examples)

    def test_same_seed_identical_forest(self, tmp_path):
        examples = blob_examples()
        a_path, b_path = tmp_path / "a.json", tmp_path / "b.json"
        save_intent_model(train_intent_model(examples, RFConfig(seed=9)), a_path)
        save_intent_model(train_intent_model(examples, RFConfig(seed=9)), b_path)
        assert a_path.read_bytes() == b_path.read_bytes()

    def test_oob_close_to_holdout(self):
        examples = blob_examples(n_per_class=110, seed=3, spread=2.0)
        rng = np.random.default_rng(0)
        order = rng.permutation(len(examples))
        train = [examples[i] for i in order[:240]]
        held = [examples[i] for i in order[240:]]
        model = train_intent_model(train, RFConfig(n_trees=30, seed=1))
        oob = oob_accuracy(model, train)
        hits = sum(predict_topk_intents(model, x, 1)[0][0] == y for x, y in held)
        holdout = hits / len(held)
        assert abs(oob - holdout) <= 0.1

    def test_single_class_warns_and_predicts_it(self):
        intent = BiIntent(BiOp.TREND, "mg0")
        examples = [(np.ones(4) * i, intent) for i in range(10)]
        with pytest.warns(UserWarning):
            model = train_intent_model(examples, RFConfig(seed=0))
        pred = predict_topk_intents(model, np.zeros(4), 1)
        assert pred[0][0] == intent and pred[0][1] == pytest.approx(1.0)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            RFConfig(n_trees=0).validate()
        with pytest.raises(ConfigError):
            RFConfig(bootstrap_fraction=0.0).validate()


class TestPrediction:
    @pytest.fixture(scope="class")
    def trained(self):
        examples = blob_examples(n_per_class=40, seed=5)
        return examples, train_intent_model(examples, RFConfig(seed=7))

    def test_probabilities_sum_to_one(self, trained):
        examples, model = trained
        probs = predict_proba(model, examples[0][0])
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        full = predict_topk_intents(model, examples[0][0], len(model.classes))
        assert sum(p for _, p in full) == pytest.approx(1.0, abs=1e-9)

    def test_topk_prefix_consistency(self, trained):
        examples, model = trained
        for x, _ in examples[:10]:
            top1 = predict_topk_intents(model, x, 1)
            top3 = predict_topk_intents(model, x, 3)
            assert top3[:1] == top1
            ps = [p for _, p in top3]
            assert ps == sorted(ps, reverse=True)

    def test_deterministic_output(self, trained):
        examples, model = trained
        a = predict_topk_intents(model, examples[3][0], 3)
        b = predict_topk_intents(model, examples[3][0], 3)
        assert a == b

    def test_k_out_of_range(self, trained):
        _, model = trained
        with pytest.raises(ConfigError):
            predict_topk_intents(model, np.zeros(16), 0)
        with pytest.raises(ConfigError):
            predict_topk_intents(model, np.zeros(16), len(model.classes) + 1)

    def test_dimension_mismatch_is_model_error(self, trained):
        _, model = trained
        with pytest.raises(ModelError):
            predict_topk_intents(model, np.zeros(5), 1)

    def test_dominant_transition_reaches_topk(self, clinic_ontology):
        # A workload dominated by "next step: roll up within utilization".
        sessions = []
        for i in range(12):
            sessions.append(session_of(
                f"s{i}", [(BiOp.ANALYSIS, ["acute_admits"]),
                          (BiOp.ROLL_UP, ["er_visits"]),
                          (BiOp.ROLL_UP, ["acute_admits"])]))
        sessions.append(session_of(
            "odd", [(BiOp.ANALYSIS, ["net_pay"]), (BiOp.TREND, ["net_pay"])]))
        w = Workload(clinic_ontology, sessions, {})
        model = init_model(SMALL, seed=3)
        examples = build_intent_examples(w, model)
        imodel = train_intent_model(examples, RFConfig(seed=0))
        top = predict_topk_intents(imodel, examples[0][0],
                                   min(3, len(imodel.classes)))
        assert BiIntent(BiOp.ROLL_UP, "utilization") in [i for i, _ in top]

    def test_training_accuracy_beats_shuffled_labels(self):
        examples = blob_examples(n_per_class=50, seed=8, spread=1.5)
        model = train_intent_model(examples, RFConfig(seed=2))
        rng = np.random.default_rng(0)
        labels = [e[1] for e in examples]
        shuffled = [labels[i] for i in rng.permutation(len(labels))]
        shuffled_model = train_intent_model(
            [(e[0], y) for e, y in zip(examples, shuffled)], RFConfig(seed=2))

        def acc(m, ys):
            hits = sum(predict_topk_intents(m, e[0], 1)[0][0] == y
                       for e, y in zip(examples, ys))
            return hits / len(examples)

        assert acc(model, labels) > acc(shuffled_model, shuffled)


class TestPersistence:
    def test_round_trip_predictions(self, tmp_path):
        examples = blob_examples(seed=6)
        model = train_intent_model(examples, RFConfig(seed=4))
        path = tmp_path / "intent.json"
        save_intent_model(model, path)
        back = load_intent_model(path)
        assert back.classes == model.classes
        for x, _ in examples[:5]:
            np.testing.assert_allclose(predict_proba(back, x),
                                       predict_proba(model, x), atol=1e-12)
