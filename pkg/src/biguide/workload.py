"""Sessions, analysis states, BI patterns, and the seeded workload generator.

A BI pattern is the quadruple behind one analysis query: an operation, the
measures with their aggregations, and the dimensions with their group-by /
filter roles.  A user session is an ordered run of states whose transitions
are labeled by the op of the query that produced the next state.  Synthetic
workloads draw op transitions from a Markov matrix and spread sessions over
task measure groups under a configurable distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .ontology import (
    Ontology,
    connected_dimensions,
    measure_group_children,
    parent_measure_group,
)


class BiOp(Enum):
    ANALYSIS = "ANALYSIS"
    DRILL_DOWN = "DRILL-DOWN"
    ROLL_UP = "ROLL-UP"
    PIVOT = "PIVOT"
    TREND = "TREND"
    RANKING = "RANKING"
    COMPARISON = "COMPARISON"


class Aggregation(Enum):
    COUNT = "COUNT"
    SUM = "SUM"
    AVG = "AVG"
    MIN = "MIN"
    MAX = "MAX"


class DimRole(Enum):
    GROUP_BY = "GROUP_BY"
    FILTER = "FILTER"


BI_OPS = tuple(BiOp)
AGGREGATIONS = tuple(Aggregation)


@dataclass(frozen=True)
class MeasureRef:
    id: str
    agg: Aggregation


@dataclass(frozen=True)
class DimensionRef:
    id: str
    role: DimRole
    value: str | None = None


@dataclass(frozen=True)
class BiPattern:
    """One analysis query: op + measures with aggs + dimensions with roles."""

    op: BiOp
    measures: tuple[MeasureRef, ...]
    dimensions: tuple[DimensionRef, ...] = ()


@dataclass(frozen=True)
class State:
    pattern: BiPattern
    ordinal: int  # 1-based position in the session


@dataclass
class UserSession:
    id: str
    states: list[State]
    transitions: list[BiOp]

    def validate(self) -> None:
        if len(self.transitions) != max(len(self.states) - 1, 0):
            raise ValidationError(
                f"session {self.id}: |transitions| must be |states| - 1")
        for i, op in enumerate(self.transitions):
            if op is not self.states[i + 1].pattern.op:
                raise ValidationError(
                    f"session {self.id}: transition {i} does not match next state's op")
        for i, st in enumerate(self.states):
            if st.ordinal != i + 1:
                raise ValidationError(f"session {self.id}: state {i} has bad ordinal")


@dataclass
class Workload:
    ontology: Ontology
    sessions: list[UserSession]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.sessions]
        if len(set(ids)) != len(ids):
            raise ValidationError("session ids must be unique")


def validate_pattern(ont: Ontology, p: BiPattern) -> None:
    """Check a pattern against the ontology; raises with a field locus."""
    if not p.measures:
        raise ValidationError("pattern.measures must be non-empty",
                              offenders=["measures"])
    offenders = []
    for i, m in enumerate(p.measures):
        if m.id not in ont.measures:
            offenders.append(f"measures[{i}].id={m.id}")
    for i, d in enumerate(p.dimensions):
        if d.id not in ont.dimensions:
            offenders.append(f"dimensions[{i}].id={d.id}")
        if d.role is DimRole.FILTER and d.value is None:
            offenders.append(f"dimensions[{i}].value missing for FILTER")
        if d.role is DimRole.GROUP_BY and d.value is not None:
            offenders.append(f"dimensions[{i}].value set on GROUP_BY")
    if offenders:
        raise ValidationError(f"invalid pattern: {offenders}", offenders=offenders)


def session_task(ont: Ontology, s: UserSession) -> set[str]:
    """Union of the MG parent of every measure queried anywhere in the session."""
    if not s.states:
        raise ValidationError(f"session {s.id} is empty")
    return {parent_measure_group(ont, m.id)
            for st in s.states for m in st.pattern.measures}


def temporal_dimensions(ont: Ontology) -> set[str]:
    """One dimension per DG is treated as temporal: the lowest-id child."""
    by_dg: dict[str, str] = {}
    for child, parent in sorted(ont.isa_edges.items()):
        if child in ont.dimensions and parent not in by_dg:
            by_dg[parent] = child
    return set(by_dg.values())


# -- distributions ------------------------------------------------------------


@dataclass(frozen=True)
class DistSpec:
    """A named nonnegative sampling distribution (normal uses absolute value)."""

    family: str
    params: tuple[float, ...]

    _FAMILIES = {"exponential": 1, "gamma": 2, "uniform": 2, "normal": 2}

    def validate(self) -> None:
        if self.family not in self._FAMILIES:
            raise ConfigError(f"unknown distribution family: {self.family!r}")
        if len(self.params) != self._FAMILIES[self.family]:
            raise ConfigError(
                f"{self.family} expects {self._FAMILIES[self.family]} params")
        if self.family == "exponential" and self.params[0] <= 0:
            raise ConfigError("exponential mean must be positive")
        if self.family == "gamma" and (self.params[0] <= 0 or self.params[1] <= 0):
            raise ConfigError("gamma shape and scale must be positive")
        if self.family == "uniform":
            lo, hi = self.params
            if lo < 0 or hi < lo:
                raise ConfigError("uniform weights need 0 <= lo <= hi")
        if self.family == "normal" and self.params[1] <= 0:
            raise ConfigError("normal stddev must be positive")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        self.validate()
        if self.family == "exponential":
            return rng.exponential(self.params[0], size)
        if self.family == "gamma":
            return rng.gamma(self.params[0], self.params[1], size)
        if self.family == "uniform":
            return rng.uniform(self.params[0], self.params[1], size)
        return np.abs(rng.normal(self.params[0], self.params[1], size))


# Op-transition matrix profiles (entries sampled then row-normalized).
BT_PROFILES = {
    "bt-exp": DistSpec("exponential", (0.5,)),
    "bt-gamma": DistSpec("gamma", (1.0, 1.0)),
    "bt-uniform": DistSpec("uniform", (0.0, 1.0)),
    "bt-normal": DistSpec("normal", (0.0, 1.0)),
}

# Sessions-per-task profiles: distribution family plus the enforced
# per-task [min, max] session counts for each dataset scale.
ST_BOUNDS = {
    ("st-exp", "hi"): (3, 20), ("st-exp", "ahi"): (1, 8),
    ("st-gamma", "hi"): (3, 27), ("st-gamma", "ahi"): (1, 9),
    ("st-uniform", "hi"): (10, 11), ("st-uniform", "ahi"): (2, 3),
    ("st-normal", "hi"): (3, 13), ("st-normal", "ahi"): (1, 5),
}

_ST_FAMILY = {
    "st-exp": DistSpec("exponential", (0.5,)),
    "st-gamma": DistSpec("gamma", (1.0, 1.0)),
    "st-uniform": DistSpec("uniform", (0.0, 1.0)),
    "st-normal": DistSpec("normal", (0.0, 1.0)),
}


@dataclass(frozen=True)
class TaskDistribution:
    """How sessions spread over task MGs, with optional per-task count bounds."""

    dist: DistSpec
    per_task_bounds: tuple[int, int] | None = None


def st_profile(name: str, dataset: str) -> TaskDistribution:
    """A named sessions-per-task profile bound to a dataset scale."""
    key = (name, dataset)
    if name not in _ST_FAMILY or key not in ST_BOUNDS:
        raise ConfigError(f"unknown sessions-per-task profile: {key}")
    return TaskDistribution(_ST_FAMILY[name], ST_BOUNDS[key])


@dataclass
class WorkloadConfig:
    n_sessions: int = 125
    session_length: tuple[int, int] = (5, 8)
    op_transition: DistSpec = BT_PROFILES["bt-uniform"]
    tasks: TaskDistribution = TaskDistribution(DistSpec("uniform", (0.0, 1.0)))
    measures_per_state: int = 1
    dims_per_state: tuple[int, int] = (1, 2)
    filter_prob: float = 0.3
    dim_affinity: float = 0.0  # 1.0 pins each measure set to its lowest dims

    def validate(self) -> None:
        if self.n_sessions < 1:
            raise ConfigError("n_sessions must be >= 1")
        lo, hi = self.session_length
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad session_length bounds: {self.session_length}")
        self.op_transition.validate()
        self.tasks.dist.validate()
        if self.tasks.per_task_bounds is not None:
            blo, bhi = self.tasks.per_task_bounds
            if not 0 <= blo <= bhi:
                raise ConfigError(f"bad per-task bounds: {self.tasks.per_task_bounds}")
        if self.measures_per_state < 1:
            raise ConfigError("measures_per_state must be >= 1")
        dlo, dhi = self.dims_per_state
        if not 0 <= dlo <= dhi:
            raise ConfigError(f"bad dims_per_state bounds: {self.dims_per_state}")
        if not 0.0 <= self.filter_prob <= 1.0 or not 0.0 <= self.dim_affinity <= 1.0:
            raise ConfigError("filter_prob and dim_affinity must lie in [0, 1]")


# -- generation ----------------------------------------------------------------


def _apportion(weights: np.ndarray, total: int,
               bounds: tuple[int, int] | None) -> np.ndarray:
    """Split `total` into integer counts proportional to `weights`.

    Largest-remainder apportionment, then (when bounds are given) counts are
    clamped into [lo, hi] and the sum repaired by moving sessions toward the
    heaviest under-cap entries / away from the lightest over-floor entries.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if w.sum() <= 0:
        w = np.ones(n)
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(int)
    frac = quota - counts
    order = np.lexsort((np.arange(n), -frac))
    counts[order[:total - counts.sum()]] += 1

    if bounds is not None:
        lo, hi = bounds
        if not n * lo <= total <= n * hi:
            raise ConfigError(
                f"{total} sessions cannot satisfy per-task bounds [{lo}, {hi}] "
                f"across {n} tasks")
        counts = np.clip(counts, lo, hi)
        diff = total - int(counts.sum())
        while diff != 0:
            if diff > 0:
                cand = [i for i in range(n) if counts[i] < hi]
                i = max(cand, key=lambda j: (w[j], -j))
                counts[i] += 1
                diff -= 1
            else:
                cand = [i for i in range(n) if counts[i] > lo]
                i = min(cand, key=lambda j: (w[j], j))
                counts[i] -= 1
                diff += 1
    return counts


def sample_transition_matrix(dist: DistSpec, rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic op-transition matrix with entries drawn from `dist`."""
    m = dist.sample(rng, (len(BI_OPS), len(BI_OPS)))
    sums = m.sum(axis=1, keepdims=True)
    m = np.where(sums > 1e-12, m / np.maximum(sums, 1e-12), 1.0 / len(BI_OPS))
    return m


def _pick_dimensions(conn: list[str], n: int, affinity: float,
                     rng: np.random.Generator) -> list[str]:
    picked: list[str] = []
    pool = list(conn)
    canonical = 0
    while pool and len(picked) < n:
        if canonical < len(conn) and rng.random() < affinity:
            d = conn[canonical]
            canonical += 1
            if d not in pool:
                continue
        else:
            d = pool[rng.integers(0, len(pool))]
        pool.remove(d)
        picked.append(d)
    return picked


def _make_pattern(ont: Ontology, op: BiOp, children: list[str],
                  temporal: set[str], cfg: WorkloadConfig,
                  rng: np.random.Generator) -> BiPattern:
    n_meas = cfg.measures_per_state
    if op is BiOp.COMPARISON:
        n_meas = max(n_meas, 2)
    n_meas = min(n_meas, len(children))
    idx = rng.choice(len(children), size=n_meas, replace=False)
    measure_ids = [children[i] for i in sorted(idx)]
    measures = tuple(
        MeasureRef(m, AGGREGATIONS[rng.integers(0, len(AGGREGATIONS))])
        for m in measure_ids)

    conn = sorted(connected_dimensions(ont, measure_ids))
    dlo, dhi = cfg.dims_per_state
    n_dims = min(int(rng.integers(dlo, dhi + 1)), len(conn))
    dim_ids = _pick_dimensions(conn, n_dims, cfg.dim_affinity, rng)

    forced_temporal = None
    if op is BiOp.TREND:
        if not any(d in temporal for d in dim_ids):
            pool = sorted(temporal & set(conn)) or sorted(temporal)
            if pool:
                forced_temporal = pool[rng.integers(0, len(pool))]
                if dim_ids:
                    dim_ids[-1] = forced_temporal
                else:
                    dim_ids.append(forced_temporal)

    dims = []
    for d in dim_ids:
        if d != forced_temporal and rng.random() < cfg.filter_prob:
            dims.append(DimensionRef(d, DimRole.FILTER, f"v{rng.integers(0, 100)}"))
        else:
            dims.append(DimensionRef(d, DimRole.GROUP_BY))
    return BiPattern(op=op, measures=measures, dimensions=tuple(dims))


def generate_workload(ont: Ontology, cfg: WorkloadConfig, seed: int) -> Workload:
    """Seeded synthetic workload; deterministic in (ont, cfg, seed)."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    mgs = sorted(ont.measure_groups)
    children = {mg: sorted(measure_group_children(ont, mg)) for mg in mgs}
    empty = [mg for mg in mgs if not children[mg]]
    if empty:
        raise ConfigError(f"task MGs with zero child measures: {empty[:5]}")

    weights = cfg.tasks.dist.sample(rng, len(mgs))
    counts = _apportion(weights, cfg.n_sessions, cfg.tasks.per_task_bounds)
    task_of_session = [mg for mg, c in zip(mgs, counts) for _ in range(int(c))]
    rng.shuffle(task_of_session)

    trans = sample_transition_matrix(cfg.op_transition, rng)
    temporal = temporal_dimensions(ont)
    lo, hi = cfg.session_length

    sessions = []
    for sid, task_mg in enumerate(task_of_session):
        length = int(rng.integers(lo, hi + 1))
        ops = [BiOp.ANALYSIS]
        while len(ops) < length:
            row = trans[BI_OPS.index(ops[-1])]
            ops.append(BI_OPS[rng.choice(len(BI_OPS), p=row)])
        states = [
            State(_make_pattern(ont, op, children[task_mg], temporal, cfg, rng),
                  ordinal=i + 1)
            for i, op in enumerate(ops)
        ]
        session = UserSession(id=f"s{sid}", states=states, transitions=ops[1:])
        session.validate()
        sessions.append(session)

    provenance = {
        "kind": "generated",
        "seed": seed,
        "config": asdict(cfg),
    }
    return Workload(ontology=ont, sessions=sessions, provenance=provenance)


def split_folds(w: Workload, k: int, seed: int) -> list[tuple[list[UserSession], list[UserSession]]]:
    """Disjoint, exhaustive k-fold partition by whole session."""
    n = len(w.sessions)
    if not 2 <= k <= n:
        raise ConfigError(f"k={k} out of range for {n} sessions")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    out = []
    for f in folds:
        test_idx = set(int(i) for i in f)
        train = [w.sessions[i] for i in range(n) if i not in test_idx]
        test = [w.sessions[i] for i in sorted(test_idx)]
        out.append((train, test))
    return out


# -- log serialization ---------------------------------------------------------


def pattern_to_dict(p: BiPattern) -> dict:
    out = {
        "op": p.op.value,
        "measures": [{"id": m.id, "agg": m.agg.value} for m in p.measures],
        "dimensions": [],
    }
    for d in p.dimensions:
        entry = {"id": d.id, "role": d.role.value}
        if d.value is not None:
            entry["value"] = d.value
        out["dimensions"].append(entry)
    return out


def pattern_from_dict(doc: dict) -> BiPattern:
    try:
        measures = tuple(MeasureRef(m["id"], Aggregation(m["agg"]))
                         for m in doc["measures"])
        dims = tuple(DimensionRef(d["id"], DimRole(d["role"]), d.get("value"))
                     for d in doc.get("dimensions", []))
        return BiPattern(op=BiOp(doc["op"]), measures=measures, dimensions=dims)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed pattern: {exc}") from exc


def session_to_dict(ont: Ontology, s: UserSession) -> dict:
    return {
        "id": s.id,
        "task_mgs": sorted(session_task(ont, s)),
        "states": [pattern_to_dict(st.pattern) for st in s.states],
    }


def write_log(w: Workload, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in w.sessions:
            f.write(json.dumps(session_to_dict(w.ontology, s), sort_keys=True))
            f.write("\n")


def read_log(path, ont: Ontology) -> Workload:
    sessions = []
    offenders = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON on line {lineno}: {exc}",
                                 locus=f"line {lineno}") from exc
            states = []
            for i, sdoc in enumerate(doc.get("states", [])):
                pattern = pattern_from_dict(sdoc)
                for m in pattern.measures:
                    if m.id not in ont.measures:
                        offenders.append(f"{doc.get('id')}: states[{i}] measure {m.id}")
                for d in pattern.dimensions:
                    if d.id not in ont.dimensions:
                        offenders.append(f"{doc.get('id')}: states[{i}] dimension {d.id}")
                states.append(State(pattern, ordinal=i + 1))
            session = UserSession(
                id=doc.get("id", f"line{lineno}"),
                states=states,
                transitions=[st.pattern.op for st in states[1:]],
            )
            session.validate()
            sessions.append(session)
    if offenders:
        raise ValidationError(
            f"log references unknown ontology nodes: {offenders[:10]}",
            offenders=offenders)
    return Workload(ontology=ont, sessions=sessions, provenance={"kind": "recorded"})
