"""BI ontology: measures, dimensions, their groups, and the edges between them.

The ontology is an in-memory, read-only view of an OLAP cube's semantic
layer.  Measures and dimensions hang off measure groups (MG) and dimension
groups (DG) via is-A edges; functional edges connect each measure to the
dimensions it can be sliced by.  A seeded generator emits synthetic
ontologies whose shape matches the healthcare profiles used throughout the
evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, UnknownNodeError

ONTOLOGY_SCHEMA_VERSION = 1

# Seeded label vocabulary; labels look like "measure_12_claims".
_WORDS = (
    "admits", "claims", "costs", "visits", "payments", "discharges", "scripts",
    "episodes", "referrals", "denials", "balance", "charges", "members",
    "providers", "plans", "regions", "conditions", "services", "suppliers",
    "networks", "facilities", "copay", "premium", "coverage", "benefits",
    "diagnosis", "procedures", "therapy", "pharmacy", "inpatient", "outpatient",
    "acute", "chronic", "yearly", "monthly", "weekly", "daily", "risk", "rate",
    "volume",
)


@dataclass
class Ontology:
    """Typed node sets plus is-A and functional edges.

    Immutable after construction (all call sites treat it as read-only), so
    instances are safe to share across threads.
    """

    measures: set[str]
    dimensions: set[str]
    measure_groups: set[str]
    dimension_groups: set[str]
    labels: dict[str, str]
    isa_edges: dict[str, str]
    functional_edges: set[tuple[str, str]] = field(default_factory=set)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise ValueError when a structural invariant is violated."""
        kinds = [self.measures, self.dimensions, self.measure_groups,
                 self.dimension_groups]
        all_ids: set[str] = set()
        for s in kinds:
            if all_ids & s:
                raise ValueError(f"node-id sets overlap: {sorted(all_ids & s)}")
            all_ids |= s
        for child, parent in self.isa_edges.items():
            if child in self.measures:
                if parent not in self.measure_groups:
                    raise ValueError(f"measure {child} is-A non-MG {parent}")
            elif child in self.dimensions:
                if parent not in self.dimension_groups:
                    raise ValueError(f"dimension {child} is-A non-DG {parent}")
            else:
                raise ValueError(f"is-A child {child} is not a measure/dimension")
        for m, d in self.functional_edges:
            if m not in self.measures or d not in self.dimensions:
                raise ValueError(f"functional edge ({m}, {d}) must be measure->dimension")
        missing = all_ids - set(self.labels)
        if missing:
            raise ValueError(f"nodes without labels: {sorted(missing)[:5]}")

    # -- traversal ---------------------------------------------------------

    def require_measure(self, m: str) -> None:
        if m not in self.measures:
            raise UnknownNodeError(f"unknown measure: {m!r}")

    def require_dimension(self, d: str) -> None:
        if d not in self.dimensions:
            raise UnknownNodeError(f"unknown dimension: {d!r}")

    def label(self, node_id: str) -> str:
        try:
            return self.labels[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node: {node_id!r}") from None


def parent_measure_group(ont: Ontology, m: str) -> str:
    """Immediate MG parent of measure `m`, or `m` itself when it has none."""
    ont.require_measure(m)
    return ont.isa_edges.get(m, m)


def parent_dimension_group(ont: Ontology, d: str) -> str | None:
    """Immediate DG parent of dimension `d`, or None when it has none."""
    ont.require_dimension(d)
    return ont.isa_edges.get(d)


def sibling_measures(ont: Ontology, m: str) -> set[str]:
    """Measures sharing `m`'s MG parent, excluding `m`; empty without an MG."""
    ont.require_measure(m)
    mg = ont.isa_edges.get(m)
    if mg is None:
        return set()
    return {c for c, p in ont.isa_edges.items()
            if p == mg and c != m and c in ont.measures}


def measure_group_children(ont: Ontology, mg: str) -> set[str]:
    """All measures whose is-A parent is `mg`."""
    if mg not in ont.measure_groups:
        raise UnknownNodeError(f"unknown measure group: {mg!r}")
    return {c for c, p in ont.isa_edges.items() if p == mg and c in ont.measures}


def connected_dimensions(ont: Ontology, ms) -> set[str]:
    """Union of dimensions functionally connected to any measure in `ms`."""
    out: set[str] = set()
    for m in ms:
        ont.require_measure(m)
    for m, d in ont.functional_edges:
        if m in ms:
            out.add(d)
    return out


# -- generation -------------------------------------------------------------


@dataclass
class OntologyGenConfig:
    """Counts and densities for the synthetic ontology generator."""

    n_measures: int
    n_dimensions: int
    n_measure_groups: int
    n_dimension_groups: int
    mg_coverage: float = 1.0        # fraction of measures with an MG parent
    dg_coverage: float = 1.0        # fraction of dimensions with a DG parent
    dims_per_measure: tuple[int, int] = (2, 6)   # functional-edge density
    # When set, each MG owns a pool of this many dimensions and its child
    # measures draw their functional edges from that pool, so sibling
    # measures share analyzable dimensions (as real cube groupings do).
    mg_dim_pool: int | None = None

    def validate(self) -> None:
        counts = (self.n_measures, self.n_dimensions,
                  self.n_measure_groups, self.n_dimension_groups)
        if any(c <= 0 for c in counts):
            raise ConfigError(f"all counts must be positive, got {counts}")
        if not 0.0 <= self.mg_coverage <= 1.0 or not 0.0 <= self.dg_coverage <= 1.0:
            raise ConfigError("coverage fractions must lie in [0, 1]")
        lo, hi = self.dims_per_measure
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad dims_per_measure range: {self.dims_per_measure}")
        if hi > self.n_dimensions:
            raise ConfigError("dims_per_measure upper bound exceeds dimension count")
        if self.mg_dim_pool is not None:
            if self.mg_dim_pool < hi:
                raise ConfigError("mg_dim_pool smaller than dims_per_measure upper bound")
            if self.mg_dim_pool > self.n_dimensions:
                raise ConfigError("mg_dim_pool exceeds dimension count")
        if self.n_measure_groups > int(self.mg_coverage * self.n_measures):
            raise ConfigError(
                "more measure groups than covered measures; every MG needs a child")
        if self.n_dimension_groups > int(self.dg_coverage * self.n_dimensions):
            raise ConfigError(
                "more dimension groups than covered dimensions; every DG needs a child")


# Healthcare dataset profiles: the base one and its augmented variant with
# extra synthetic measures and measure groups (dimensions/DGs unchanged).
HI_PROFILE = OntologyGenConfig(
    n_measures=64, n_dimensions=229, n_measure_groups=12, n_dimension_groups=13)
AHI_PROFILE = OntologyGenConfig(
    n_measures=329, n_dimensions=229, n_measure_groups=60, n_dimension_groups=13)

GEN_PROFILES = {"hi": HI_PROFILE, "ahi": AHI_PROFILE}


def generate_synthetic_ontology(cfg: OntologyGenConfig, seed: int) -> Ontology:
    """Deterministically generate an ontology matching `cfg` counts exactly."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    measures = [f"m{i}" for i in range(cfg.n_measures)]
    dimensions = [f"d{i}" for i in range(cfg.n_dimensions)]
    mgs = [f"mg{i}" for i in range(cfg.n_measure_groups)]
    dgs = [f"dg{i}" for i in range(cfg.n_dimension_groups)]

    labels: dict[str, str] = {}
    for kind, ids in (("measure", measures), ("dimension", dimensions),
                      ("measure_group", mgs), ("dimension_group", dgs)):
        for i, node in enumerate(ids):
            word = _WORDS[rng.integers(0, len(_WORDS))]
            labels[node] = f"{kind}_{i}_{word}"

    isa_edges: dict[str, str] = {}
    isa_edges.update(_assign_parents(measures, mgs, cfg.mg_coverage, rng))
    isa_edges.update(_assign_parents(dimensions, dgs, cfg.dg_coverage, rng))

    pools: dict[str, list[str]] = {}
    if cfg.mg_dim_pool is not None:
        for mg in mgs:
            picked = rng.choice(len(dimensions), size=cfg.mg_dim_pool,
                                replace=False)
            pools[mg] = [dimensions[j] for j in sorted(picked)]

    lo, hi = cfg.dims_per_measure
    functional_edges: set[tuple[str, str]] = set()
    for m in measures:
        pool = pools.get(isa_edges.get(m), dimensions)
        n_edges = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        if n_edges:
            picked = rng.choice(len(pool), size=n_edges, replace=False)
            for j in sorted(picked):
                functional_edges.add((m, pool[j]))

    return Ontology(
        measures=set(measures),
        dimensions=set(dimensions),
        measure_groups=set(mgs),
        dimension_groups=set(dgs),
        labels=labels,
        isa_edges=isa_edges,
        functional_edges=functional_edges,
    )


def _assign_parents(children: list[str], parents: list[str], coverage: float,
                    rng: np.random.Generator) -> dict[str, str]:
    """Give each parent at least one child, then spread coverage over the rest."""
    n_covered = int(round(coverage * len(children)))
    n_covered = max(n_covered, len(parents)) if coverage > 0 else 0
    covered_idx = rng.permutation(len(children))[:n_covered]
    edges: dict[str, str] = {}
    for pos, ci in enumerate(sorted(covered_idx)):
        if pos < len(parents):
            parent = parents[pos]  # guarantees every group is non-empty
        else:
            parent = parents[rng.integers(0, len(parents))]
        edges[children[ci]] = parent
    return edges


# -- serialization ------------------------------------------------------------


def ontology_to_dict(ont: Ontology) -> dict:
    return {
        "version": ONTOLOGY_SCHEMA_VERSION,
        "measures": sorted(ont.measures),
        "dimensions": sorted(ont.dimensions),
        "measure_groups": sorted(ont.measure_groups),
        "dimension_groups": sorted(ont.dimension_groups),
        "labels": dict(sorted(ont.labels.items())),
        "isa_edges": [[c, p] for c, p in sorted(ont.isa_edges.items())],
        "functional_edges": [[m, d] for m, d in sorted(ont.functional_edges)],
    }


def save_ontology(ont: Ontology, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(ontology_to_dict(ont), f, indent=2, sort_keys=True)
        f.write("\n")


def ontology_from_dict(doc: dict) -> Ontology:
    if not isinstance(doc, dict):
        raise ParseError("ontology file must contain a JSON object")
    version = doc.get("version")
    if version != ONTOLOGY_SCHEMA_VERSION:
        raise ParseError(f"unsupported ontology schema version: {version!r}",
                         locus="version")
    required = ("measures", "dimensions", "measure_groups", "dimension_groups",
                "labels", "isa_edges", "functional_edges")
    for key in required:
        if key not in doc:
            raise ParseError(f"missing required field: {key}", locus=key)
    try:
        return Ontology(
            measures=set(doc["measures"]),
            dimensions=set(doc["dimensions"]),
            measure_groups=set(doc["measure_groups"]),
            dimension_groups=set(doc["dimension_groups"]),
            labels=dict(doc["labels"]),
            isa_edges={c: p for c, p in doc["isa_edges"]},
            functional_edges={(m, d) for m, d in doc["functional_edges"]},
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed ontology: {exc}") from exc


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", locus=f"line {exc.lineno}") from exc
    return ontology_from_dict(doc)
