"""Command-line entry point: generate artifacts, train models, evaluate,
benchmark, and serve.

Every subcommand takes a single --seed; stage-specific randomness derives
from it (see ``evalharness.derive_seed``), so a full pipeline rerun with the
same seed reproduces every non-timing output.  A manifest.json listing the
written artifacts accompanies each command's outputs.  Flags override values
from an optional TOML/JSON config file.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

from .embedder import (
    EmbedderConfig,
    EncoderConfig,
    TrainConfig,
    load_model,
    save_model,
    train_embedder,
    write_loss_trace,
)
from .errors import BiguideError, ConfigError
from .evalharness import (
    BenchConfig,
    EvalConfig,
    derive_seed,
    evaluate,
    latency_bench,
    write_latency_csv,
    write_report_csv,
    write_report_json,
)
from .intent import (
    RFConfig,
    build_intent_examples,
    load_intent_model,
    save_intent_model,
    train_intent_model,
)
from .ontology import (
    GEN_PROFILES,
    OntologyGenConfig,
    generate_synthetic_ontology,
    load_ontology,
    save_ontology,
)
from .recommender import (
    build_cooccurrence,
    build_task_index,
    load_cooccurrence,
    load_task_index,
    save_cooccurrence,
    save_task_index,
)
from .stategraph import Enrichment, sample_pairs
from .workload import (
    BT_PROFILES,
    ST_BOUNDS,
    DistSpec,
    TaskDistribution,
    WorkloadConfig,
    generate_workload,
    read_log,
    st_profile,
    write_log,
)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    text = p.read_bytes()
    if p.suffix in (".toml", ".tml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


class _Options:
    """Flag values with config-file fallback: flags win, then file, then default."""

    def __init__(self, args: argparse.Namespace, cfg: dict):
        self.args = vars(args)
        self.cfg = cfg

    def get(self, name: str, default=None):
        val = self.args.get(name.replace("-", "_"))
        if val is not None:
            return val
        return self.cfg.get(name.replace("-", "_"), default)


def _write_manifest(out_dir: Path, command: str, opts: _Options,
                    artifacts: list[Path], started: str) -> Path:
    manifest = {
        "command": command,
        "config_file": opts.args.get("config"),
        "seed": opts.get("seed", 0),
        "artifacts": [str(p) for p in artifacts],
        "started": started,
        "finished": _now(),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return path


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _parse_pair(text: str) -> tuple[int, int]:
    parts = [int(x) for x in str(text).replace(",", " ").split()]
    if len(parts) != 2:
        raise ConfigError(f"expected two integers, got {text!r}")
    return parts[0], parts[1]


def _parse_sizes(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(","))


def _ontology_cfg(opts: _Options) -> OntologyGenConfig:
    profile = opts.get("profile")
    if profile:
        if profile not in GEN_PROFILES:
            raise ConfigError(f"unknown ontology profile: {profile!r}")
        base = GEN_PROFILES[profile]
    else:
        base = OntologyGenConfig(
            n_measures=int(opts.get("measures", 64)),
            n_dimensions=int(opts.get("dimensions", 229)),
            n_measure_groups=int(opts.get("measure-groups", 12)),
            n_dimension_groups=int(opts.get("dimension-groups", 13)),
        )
    coverage = opts.get("mg-coverage")
    if coverage is not None:
        base = OntologyGenConfig(
            n_measures=base.n_measures, n_dimensions=base.n_dimensions,
            n_measure_groups=base.n_measure_groups,
            n_dimension_groups=base.n_dimension_groups,
            mg_coverage=float(coverage), dg_coverage=base.dg_coverage,
            dims_per_measure=base.dims_per_measure)
    return base


def _workload_cfg(opts: _Options) -> WorkloadConfig:
    bt = opts.get("bt-profile", "bt-uniform")
    if bt not in BT_PROFILES:
        raise ConfigError(f"unknown op-transition profile: {bt!r}")
    st = opts.get("st-profile")
    if st:
        tasks = st_profile(st, opts.get("dataset", "hi"))
    else:
        tasks = TaskDistribution(DistSpec("uniform", (0.0, 1.0)))
    return WorkloadConfig(
        n_sessions=int(opts.get("sessions", 125)),
        session_length=_parse_pair(opts.get("session-length", "5 8")),
        op_transition=BT_PROFILES[bt],
        tasks=tasks,
        measures_per_state=int(opts.get("measures-per-state", 1)),
        dims_per_state=_parse_pair(opts.get("dims-per-state", "1 2")),
        filter_prob=float(opts.get("filter-prob", 0.3)),
        dim_affinity=float(opts.get("dim-affinity", 0.0)),
    )


def _embedder_cfg(opts: _Options) -> EmbedderConfig:
    return EmbedderConfig(
        output_dim=int(opts.get("dim", 64)),
        k=int(opts.get("layers", 3)),
        encoder=EncoderConfig(input_dim=int(opts.get("encoder-dim", 32))),
        level=Enrichment.from_name(opts.get("level", "bi-mg-em")),
    )


# -- subcommands -----------------------------------------------------------------


def _cmd_gen_ontology(opts: _Options) -> int:
    started = _now()
    out = Path(opts.get("out", "ontology.json"))
    ont = generate_synthetic_ontology(_ontology_cfg(opts), int(opts.get("seed", 0)))
    save_ontology(ont, out)
    _write_manifest(out.parent, "gen-ontology", opts, [out], started)
    print(f"wrote {out} ({len(ont.measures)} measures, {len(ont.dimensions)} "
          f"dimensions, {len(ont.measure_groups)} MGs, "
          f"{len(ont.dimension_groups)} DGs)")
    return 0


def _cmd_gen_workload(opts: _Options) -> int:
    started = _now()
    ont = load_ontology(opts.get("ontology", "ontology.json"))
    out = Path(opts.get("out", "workload.jsonl"))
    seed = derive_seed(int(opts.get("seed", 0)), "workload")
    w = generate_workload(ont, _workload_cfg(opts), seed)
    write_log(w, out)
    _write_manifest(out.parent, "gen-workload", opts, [out], started)
    print(f"wrote {out} ({len(w.sessions)} sessions, "
          f"{sum(len(s.states) for s in w.sessions)} states)")
    return 0


def _cmd_train_embedder(opts: _Options) -> int:
    started = _now()
    ont = load_ontology(opts.get("ontology", "ontology.json"))
    w = read_log(opts.get("workload", "workload.jsonl"), ont)
    out = Path(opts.get("out", "embedder.json"))
    seed = int(opts.get("seed", 0))
    mcfg = _embedder_cfg(opts)
    pairs = sample_pairs(w, int(opts.get("pairs", 600)),
                         derive_seed(seed, "pairs"), mcfg.level)
    model = train_embedder(
        pairs,
        TrainConfig(epochs=int(opts.get("epochs", 12)),
                    learning_rate=float(opts.get("lr", 0.05)),
                    seed=derive_seed(seed, "embedder")),
        mcfg)
    save_model(model, out)
    artifacts = [out]
    trace_path = opts.get("loss-trace")
    if trace_path:
        write_loss_trace(trace_path, model.loss_trace)
        artifacts.append(Path(trace_path))
    _write_manifest(out.parent, "train-embedder", opts, artifacts, started)
    print(f"wrote {out} (final loss {model.loss_trace[-1]:.4f})")
    return 0


def _cmd_train_intent(opts: _Options) -> int:
    started = _now()
    ont = load_ontology(opts.get("ontology", "ontology.json"))
    w = read_log(opts.get("workload", "workload.jsonl"), ont)
    model = load_model(opts.get("embedder", "embedder.json"))
    out = Path(opts.get("out", "intent.json"))
    examples = build_intent_examples(w, model)
    imodel = train_intent_model(
        examples,
        RFConfig(n_trees=int(opts.get("trees", 20)),
                 max_depth=int(opts.get("depth", 10)),
                 seed=derive_seed(int(opts.get("seed", 0)), "rf")))
    save_intent_model(imodel, out)
    _write_manifest(out.parent, "train-intent", opts, [out], started)
    print(f"wrote {out} ({len(imodel.classes)} intent classes, "
          f"{len(examples)} examples)")
    return 0


def _cmd_build_index(opts: _Options) -> int:
    started = _now()
    ont = load_ontology(opts.get("ontology", "ontology.json"))
    w = read_log(opts.get("workload", "workload.jsonl"), ont)
    model = load_model(opts.get("embedder", "embedder.json"))
    out = Path(opts.get("out", "index.json"))
    idx = build_task_index(w, ont, model)
    save_task_index(idx, out)
    artifacts = [out]
    cooc_path = Path(opts.get("cooccurrence", "cooccurrence.json"))
    save_cooccurrence(build_cooccurrence(w), cooc_path)
    artifacts.append(cooc_path)
    _write_manifest(out.parent, "build-index", opts, artifacts, started)
    print(f"wrote {out} ({len(idx.postings)} MG postings) and {cooc_path}")
    return 0


def _cmd_evaluate(opts: _Options) -> int:
    started = _now()
    ont = load_ontology(opts.get("ontology", "ontology.json"))
    w = read_log(opts.get("workload", "workload.jsonl"), ont)
    out_dir = Path(opts.get("out-dir", "eval-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = opts.get("methods", "indexed")
    if isinstance(methods, str):
        methods = tuple(m.strip() for m in methods.split(",") if m.strip())
    cfg = EvalConfig(
        folds=int(opts.get("folds", 5)),
        seed=int(opts.get("seed", 0)),
        level=Enrichment.from_name(opts.get("level", "bi-mg-em")),
        embed_dim=int(opts.get("dim", 64)),
        train_pairs=int(opts.get("pairs", 600)),
        epochs=int(opts.get("epochs", 12)),
        learning_rate=float(opts.get("lr", 0.05)),
        n_trees=int(opts.get("trees", 20)),
        max_depth=int(opts.get("depth", 10)),
        k=int(opts.get("k", 3)),
        w_s=float(opts.get("w-s", 0.5)),
        n_inferred=int(opts.get("n-inferred", 0)),
        methods=tuple(methods),
    )
    report = evaluate(w, ont, cfg)
    report_json = out_dir / "report.json"
    report_csv = out_dir / "report.csv"
    write_report_json(report, report_json)
    write_report_csv(report, report_csv)
    _write_manifest(out_dir, "evaluate", opts, [report_json, report_csv], started)
    agg = report["aggregate"]
    for name, doc in agg["methods"].items():
        print(f"{name}: top-3 jaccard {doc['pattern_jaccard']['top3']:.4f}, "
              f"exact {doc['exact_match']:.4f}")
    return 0


def _cmd_bench(opts: _Options) -> int:
    started = _now()
    ont = load_ontology(opts.get("ontology", "ontology.json"))
    w = read_log(opts.get("workload", "workload.jsonl"), ont)
    out = Path(opts.get("out", "latency.csv"))
    cfg = BenchConfig(
        sizes=_parse_sizes(opts.get("sizes", "100,300,1000")),
        trials=int(opts.get("trials", 30)),
        warmup=int(opts.get("warmup", 5)),
        queries=int(opts.get("queries", 25)),
        seed=int(opts.get("seed", 0)),
        level=Enrichment.from_name(opts.get("level", "bi-mg-em")),
        embed_dim=int(opts.get("dim", 64)),
    )
    rows = latency_bench(w, cfg)
    write_latency_csv(rows, out)
    _write_manifest(out.parent, "bench", opts, [out], started)
    for r in rows:
        print(f"{r['method']:<11} n={r['n_sessions']:<6} "
              f"filter {r['filter_ms']:.4f} ms  predict {r['predict_ms']:.4f} ms")
    return 0


def _cmd_serve(opts: _Options) -> int:
    import uvicorn

    from .service import ServiceArtifacts, create_app

    ont = load_ontology(opts.get("ontology", "ontology.json"))
    model = load_model(opts.get("embedder", "embedder.json"))
    imodel = load_intent_model(opts.get("intent", "intent.json"))
    idx = load_task_index(opts.get("index", "index.json"))
    cooc = load_cooccurrence(opts.get("cooccurrence", "cooccurrence.json"))
    artifacts = ServiceArtifacts(
        ontology=ont, embedder=model, intent_model=imodel, index=idx,
        cooccurrence=cooc,
        k=int(opts.get("k", 3)),
        w_s=float(opts.get("w-s", 0.5)),
        n_inferred=int(opts.get("n-inferred", 3)),
    )
    app = create_app(artifacts)
    uvicorn.run(app, host=opts.get("host", "127.0.0.1"),
                port=int(opts.get("port", 8080)))
    return 0


_COMMANDS = {
    "gen-ontology": _cmd_gen_ontology,
    "gen-workload": _cmd_gen_workload,
    "train-embedder": _cmd_train_embedder,
    "train-intent": _cmd_train_intent,
    "build-index": _cmd_build_index,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "serve": _cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biguide",
        description="Guided BI analysis recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML/JSON config file (flags override)")
        p.add_argument("--seed", type=int, help="master seed (default 0)")

    p = sub.add_parser("gen-ontology", help="generate a synthetic ontology")
    common(p)
    p.add_argument("--profile", choices=sorted(GEN_PROFILES))
    p.add_argument("--measures", type=int)
    p.add_argument("--dimensions", type=int)
    p.add_argument("--measure-groups", type=int)
    p.add_argument("--dimension-groups", type=int)
    p.add_argument("--mg-coverage", type=float)
    p.add_argument("--out")

    p = sub.add_parser("gen-workload", help="generate a synthetic session log")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--sessions", type=int)
    p.add_argument("--bt-profile", choices=sorted(BT_PROFILES))
    p.add_argument("--st-profile", choices=sorted({k[0] for k in ST_BOUNDS}))
    p.add_argument("--dataset", choices=("hi", "ahi"))
    p.add_argument("--session-length")
    p.add_argument("--dims-per-state")
    p.add_argument("--measures-per-state", type=int)
    p.add_argument("--filter-prob", type=float)
    p.add_argument("--dim-affinity", type=float)
    p.add_argument("--out")

    p = sub.add_parser("train-embedder", help="train the state embedder")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--workload")
    p.add_argument("--level")
    p.add_argument("--dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--encoder-dim", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss-trace")
    p.add_argument("--out")

    p = sub.add_parser("train-intent", help="train the intent classifier")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--workload")
    p.add_argument("--embedder")
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--out")

    p = sub.add_parser("build-index", help="build the task index + co-occurrence")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--workload")
    p.add_argument("--embedder")
    p.add_argument("--cooccurrence")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="run k-fold evaluation")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--workload")
    p.add_argument("--folds", type=int)
    p.add_argument("--level")
    p.add_argument("--dim", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--w-s", type=float)
    p.add_argument("--n-inferred", type=int)
    p.add_argument("--methods")
    p.add_argument("--out-dir")

    p = sub.add_parser("bench", help="latency benchmark across corpus sizes")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--workload")
    p.add_argument("--sizes")
    p.add_argument("--trials", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--queries", type=int)
    p.add_argument("--level")
    p.add_argument("--dim", type=int)
    p.add_argument("--out")

    p = sub.add_parser("serve", help="run the HTTP recommendation service")
    common(p)
    p.add_argument("--ontology")
    p.add_argument("--embedder")
    p.add_argument("--intent")
    p.add_argument("--index")
    p.add_argument("--cooccurrence")
    p.add_argument("--k", type=int)
    p.add_argument("--w-s", type=float)
    p.add_argument("--n-inferred", type=int)
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config_file(args.config)
        opts = _Options(args, cfg)
        return _COMMANDS[args.command](opts)
    except (BiguideError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
