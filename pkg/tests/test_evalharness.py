import json

import numpy as np
import pytest

from biguide.errors import ConfigError
from biguide.evalharness import (
    EvalConfig,
    FeedbackEntry,
    FeedbackLog,
    derive_seed,
    element_breakdown,
    evaluate,
    intent_accuracy,
    mrr,
    pattern_jaccard,
    precision_at_3,
    strip_timing,
    write_report_csv,
    write_report_json,
)
from biguide.intent import BiIntent
from biguide.workload import (
    Aggregation,
    BiOp,
    BiPattern,
    DimRole,
    DimensionRef,
    MeasureRef,
    State,
    UserSession,
    Workload,
    WorkloadConfig,
    generate_workload,
)


def pat(op, measures, dims=()):
    dimrefs = []
    for d in dims:
        if isinstance(d, tuple):
            dimrefs.append(DimensionRef(d[0], DimRole.FILTER, d[1]))
        else:
            dimrefs.append(DimensionRef(d, DimRole.GROUP_BY))
    return BiPattern(op, tuple(MeasureRef(m, Aggregation.COUNT) for m in measures),
                     tuple(dimrefs))


class TestPatternJaccard:
    def test_identical_patterns(self):
        p = pat(BiOp.ANALYSIS, ["m1"], ["d1"])
        assert pattern_jaccard(p, p) == 1.0

    def test_shared_op_only_is_one_fifth(self):
        # {op} ∪ {measure} ∪ {dimension} per side: 1 shared of 5 distinct.
        a = pat(BiOp.ANALYSIS, ["m1"], ["d1"])
        b = pat(BiOp.ANALYSIS, ["m2"], ["d2"])
        assert pattern_jaccard(a, b) == pytest.approx(0.2)

    def test_fully_disjoint(self):
        a = pat(BiOp.ANALYSIS, ["m1"], ["d1"])
        b = pat(BiOp.PIVOT, ["m2"], ["d2"])
        assert pattern_jaccard(a, b) == 0.0

    def test_filter_value_distinguishes_elements(self):
        a = pat(BiOp.TREND, ["m1"], [("d1", "2016")])
        b = pat(BiOp.TREND, ["m1"], [("d1", "2017")])
        assert pattern_jaccard(a, b) == pytest.approx(2 / 4)


class TestIntentAccuracy:
    def test_exact_hit_in_topk(self):
        expected = BiIntent(BiOp.ROLL_UP, "mg1")
        preds = [(BiIntent(BiOp.PIVOT, "mg2"), 0.6), (expected, 0.4)]
        assert intent_accuracy(expected, preds) == 1.0

    def test_op_only_match_scores_half(self):
        expected = BiIntent(BiOp.ROLL_UP, "mg1")
        preds = [(BiIntent(BiOp.ROLL_UP, "mg9"), 0.6)]
        assert intent_accuracy(expected, preds) == 0.5

    def test_topk_monotone_in_k(self):
        expected = BiIntent(BiOp.ROLL_UP, "mg1")
        preds = [(BiIntent(BiOp.PIVOT, "mg9"), 0.5),
                 (BiIntent(BiOp.ROLL_UP, "mg9"), 0.3),
                 (expected, 0.2)]
        scores = [intent_accuracy(expected, preds[:k]) for k in (1, 2, 3)]
        assert scores == sorted(scores)
        assert scores == [0.0, 0.5, 1.0]


def entry(selected, votes=None):
    ranks = frozenset(selected)
    if votes is None:
        votes = {r: 1 for r in selected}
    return FeedbackEntry(top_ids=("a", "b", "c"), selected_ranks=ranks,
                         votes=tuple(sorted(votes.items())))


class TestFeedbackMetrics:
    def test_precision_fraction_of_nonempty(self):
        log = FeedbackLog([entry({1})] * 9 + [entry(set())])
        assert precision_at_3(log) == pytest.approx(0.9)

    def test_mrr_all_rank_one(self):
        log = FeedbackLog([entry({1})] * 5)
        assert mrr(log) == 1.0

    def test_mrr_single_rank_two_query(self):
        assert mrr(FeedbackLog([entry({2})])) == pytest.approx(0.5)

    def test_mrr_tie_breaks_to_lower_rank(self):
        log = FeedbackLog([entry({1, 2}, votes={1: 2, 2: 2})])
        assert mrr(log) == 1.0

    def test_mrr_most_voted_wins_over_lower_rank(self):
        log = FeedbackLog([entry({1, 3}, votes={1: 1, 3: 4})])
        assert mrr(log) == pytest.approx(1 / 3)

    def test_empty_log_rejected(self):
        with pytest.raises(ConfigError):
            precision_at_3(FeedbackLog([]))
        with pytest.raises(ConfigError):
            mrr(FeedbackLog([]))

    def test_study_shaped_precision_values(self):
        short = FeedbackLog([entry({1})] * 8 + [entry(set())])
        assert precision_at_3(short) == pytest.approx(8 / 9)
        assert round(100 * precision_at_3(short), 1) == 88.9
        long = FeedbackLog([entry({2})] * 142 + [entry(set())] * 3)
        assert precision_at_3(long) == pytest.approx(142 / 145)
        assert round(100 * precision_at_3(long), 2) == 97.93

    def test_study_shaped_mrr_values(self):
        by_rank = lambda r1, r2, r3, none: FeedbackLog(
            [entry({1})] * r1 + [entry({2})] * r2 + [entry({3})] * r3
            + [entry(set())] * none)
        assert mrr(by_rank(15, 2, 6, 2)) == pytest.approx(0.72, abs=1e-12)
        assert mrr(by_rank(15, 10, 9, 16)) == pytest.approx(0.46, abs=1e-12)
        assert mrr(by_rank(50, 30, 12, 8)) == pytest.approx(0.69, abs=1e-12)


class TestElementBreakdown:
    def test_recall_style_scores(self, clinic_ontology):
        expected = pat(BiOp.ANALYSIS, ["acute_admits", "er_visits"],
                       ["plan", "month"])
        predicted = pat(BiOp.ANALYSIS, ["acute_admits"], ["plan", "condition"])
        out = element_breakdown(clinic_ontology, expected, predicted)
        assert out["op"] == 1.0
        assert out["measure"] == pytest.approx(0.5)
        assert out["mg"] == 1.0  # both measures share utilization
        assert out["dimension"] == pytest.approx(0.5)

    def test_empty_expected_dimensions_scores_one(self, clinic_ontology):
        expected = pat(BiOp.ANALYSIS, ["acute_admits"])
        predicted = pat(BiOp.PIVOT, ["net_pay"], ["plan"])
        out = element_breakdown(clinic_ontology, expected, predicted)
        assert out["dimension"] == 1.0
        assert out["op"] == 0.0


class TestDeriveSeed:
    def test_stable_and_tag_sensitive(self):
        assert derive_seed(7, "x") == derive_seed(7, "x")
        assert derive_seed(7, "x") != derive_seed(7, "y")
        assert derive_seed(7, "x") != derive_seed(8, "x")


@pytest.fixture(scope="module")
def eval_workload():
    from biguide.ontology import OntologyGenConfig, generate_synthetic_ontology

    cfg = OntologyGenConfig(n_measures=24, n_dimensions=40, n_measure_groups=6,
                            n_dimension_groups=4, dims_per_measure=(2, 4))
    ont = generate_synthetic_ontology(cfg, seed=5)
    w = generate_workload(ont, WorkloadConfig(n_sessions=24, session_length=(4, 5)),
                          seed=6)
    return ont, w


FAST = dict(folds=3, embed_dim=16, encoder_dim=16, train_pairs=60, epochs=2,
            n_trees=8, max_depth=6)


class TestEvaluate:
    def test_report_shape_and_aggregate_law(self, eval_workload):
        ont, w = eval_workload
        cfg = EvalConfig(seed=1, methods=("indexed",), **FAST)
        report = evaluate(w, ont, cfg)
        assert len(report["folds"]) == 3
        for fold in report["folds"]:
            assert fold["n_test_sessions"] == 8
            assert fold["n_train_sessions"] == 16
        tops = [f["methods"]["indexed"]["pattern_jaccard"]["top3"]
                for f in report["folds"]]
        agg = report["aggregate"]["methods"]["indexed"]["pattern_jaccard"]["top3"]
        assert agg == pytest.approx(float(np.mean(tops)))
        for f in report["folds"]:
            pj = f["methods"]["indexed"]["pattern_jaccard"]
            assert 0.0 <= pj["top1"] <= pj["top2"] <= pj["top3"] <= 1.0

    def test_reproducible_modulo_timing(self, eval_workload):
        ont, w = eval_workload
        cfg = EvalConfig(seed=2, methods=("indexed",), **FAST)
        a = strip_timing(evaluate(w, ont, cfg))
        b = strip_timing(evaluate(w, ont, cfg))
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_indexed_close_to_exhaustive(self, eval_workload):
        ont, w = eval_workload
        cfg = EvalConfig(seed=3, methods=("indexed", "exhaustive"),
                         exhaustive_top_n=None, **FAST)
        report = evaluate(w, ont, cfg)
        agg = report["aggregate"]["methods"]
        gap = abs(agg["indexed"]["pattern_jaccard"]["top3"]
                  - agg["exhaustive"]["pattern_jaccard"]["top3"])
        assert gap <= 0.05

    def test_single_intent_class_fold_warns_and_skips(self, clinic_ontology):
        sessions = []
        for i in range(6):
            states = [State(pat(BiOp.ANALYSIS, ["acute_admits"], ["plan"]), 1),
                      State(pat(BiOp.ROLL_UP, ["acute_admits"], ["month"]), 2)]
            sessions.append(UserSession(f"s{i}", states, [BiOp.ROLL_UP]))
        w = Workload(clinic_ontology, sessions, {})
        cfg = EvalConfig(folds=2, seed=0, embed_dim=8, encoder_dim=8,
                         train_pairs=4, epochs=1, n_trees=4, max_depth=3)
        with pytest.warns(UserWarning, match="single intent class"):
            report = evaluate(w, clinic_ontology, cfg)
        assert report["aggregate"]["intent_accuracy"] is None

    def test_report_files(self, eval_workload, tmp_path):
        ont, w = eval_workload
        cfg = EvalConfig(seed=4, methods=("indexed",), **FAST)
        report = evaluate(w, ont, cfg)
        jpath, cpath = tmp_path / "report.json", tmp_path / "report.csv"
        write_report_json(report, jpath)
        write_report_csv(report, cpath)
        back = json.loads(jpath.read_text())
        assert back["config"]["folds"] == 3
        header, *rows = cpath.read_text().splitlines()
        assert header == "scope,metric,value"
        assert any(row.startswith("aggregate,") for row in rows)
