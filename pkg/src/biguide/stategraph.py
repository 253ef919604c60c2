"""Attributed digraph view of one analysis state plus its ontology context.

Each state graph anchors a ROOT node to a PATTERN node (op, measures with
aggregations, dimensions with filters) and, at richer enrichment levels, to
the measure groups of the session task, the sibling measures they expand to,
the dimension groups of the queried dimensions, and the dimensions reachable
from the expanded measures.  The graph-set Jaccard similarity defined here is
the supervision signal for embedding training.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .ontology import (
    Ontology,
    connected_dimensions,
    parent_dimension_group,
    parent_measure_group,
    sibling_measures,
)
from .workload import State, UserSession, Workload, session_task


class Enrichment(Enum):
    """Which ontology-context node kinds are added to the pattern graph."""

    BI = 1
    BI_MG_EM = 2
    BI_MG_EM_DG = 3
    BI_MG_EM_DG_ED = 4

    @classmethod
    def from_name(cls, name: str) -> "Enrichment":
        key = name.strip().lower().replace("_", "-")
        table = {
            "bi": cls.BI,
            "bi-mg-em": cls.BI_MG_EM,
            "bi-mg-em-dg": cls.BI_MG_EM_DG,
            "bi-mg-em-dg-ed": cls.BI_MG_EM_DG_ED,
        }
        if key not in table:
            raise ConfigError(f"unknown enrichment level: {name!r}")
        return table[key]


class NodeKind(Enum):
    ROOT = 0
    PATTERN = 1
    OP = 2
    MEASURE = 3
    AGG = 4
    DIMENSION = 5
    FILTER = 6
    MG = 7
    DG = 8
    EM = 9
    ED = 10


N_NODE_KINDS = len(NodeKind)


class EdgeKind(Enum):
    STRUCTURAL = "structural"
    ISA = "isA"
    FUNCTIONAL = "functional"


@dataclass(frozen=True)
class GraphNode:
    key: str
    kind: NodeKind
    label: str


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    kind: EdgeKind


@dataclass
class StateGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    enrichment: Enrichment
    _csr: tuple[np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False)

    def node_index(self) -> dict[str, int]:
        return {n.key: i for i, n in enumerate(self.nodes)}

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Undirected adjacency in CSR form (indptr, indices); cached."""
        if self._csr is None:
            idx = self.node_index()
            n = len(self.nodes)
            neigh: list[list[int]] = [[] for _ in range(n)]
            for e in self.edges:
                a, b = idx[e.src], idx[e.dst]
                neigh[a].append(b)
                neigh[b].append(a)
            indptr = np.zeros(n + 1, dtype=np.int64)
            for i, ns in enumerate(neigh):
                indptr[i + 1] = indptr[i] + len(ns)
            indices = np.empty(int(indptr[-1]), dtype=np.int64)
            for i, ns in enumerate(neigh):
                indices[indptr[i]:indptr[i + 1]] = ns
            self._csr = (indptr, indices)
        return self._csr


@dataclass(frozen=True)
class OntologyNeighborhood:
    task: frozenset[str]
    expanded_measures: frozenset[str]
    expanded_dimensions: frozenset[str]

    def all_ids(self) -> frozenset[str]:
        return self.task | self.expanded_measures | self.expanded_dimensions


def ontology_neighborhood(ont: Ontology, state: State,
                          task: set[str] | frozenset[str]) -> OntologyNeighborhood:
    """Context around a state: task MGs, sibling measures, their dimensions."""
    queried = {m.id for m in state.pattern.measures}
    em: set[str] = set()
    for m in queried:
        em |= sibling_measures(ont, m)
    em -= queried
    ed = connected_dimensions(ont, em)
    return OntologyNeighborhood(
        task=frozenset(task),
        expanded_measures=frozenset(em),
        expanded_dimensions=frozenset(ed),
    )


def build_state_graph(ont: Ontology, state: State, on: OntologyNeighborhood,
                      level: Enrichment) -> StateGraph:
    """Deterministic node/edge assembly for one state at one enrichment level."""
    p = state.pattern
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []

    def add_node(key, kind, label):
        nodes.append(GraphNode(key, kind, label))
        return key

    root = add_node("root", NodeKind.ROOT, "root")
    pattern = add_node("pattern", NodeKind.PATTERN, "pattern")
    edges.append(GraphEdge(root, pattern, EdgeKind.STRUCTURAL))

    op = add_node("op", NodeKind.OP, p.op.value)
    edges.append(GraphEdge(pattern, op, EdgeKind.STRUCTURAL))

    measure_keys: dict[str, str] = {}
    for m in p.measures:
        mk = measure_keys.get(m.id)
        if mk is None:
            mk = add_node(f"measure:{m.id}", NodeKind.MEASURE, ont.label(m.id))
            edges.append(GraphEdge(pattern, mk, EdgeKind.STRUCTURAL))
            measure_keys[m.id] = mk
        ak = add_node(f"agg:{m.id}:{m.agg.value}", NodeKind.AGG, m.agg.value)
        edges.append(GraphEdge(ak, mk, EdgeKind.STRUCTURAL))

    dim_keys: list[tuple[str, str]] = []  # (dimension id, node key)
    for d in p.dimensions:
        dk = add_node(f"dim:{d.id}:{d.role.value}:{d.value or ''}",
                      NodeKind.DIMENSION, ont.label(d.id))
        edges.append(GraphEdge(pattern, dk, EdgeKind.STRUCTURAL))
        dim_keys.append((d.id, dk))
        if d.value is not None:
            fk = add_node(f"filter:{d.id}:{d.value}", NodeKind.FILTER, d.value)
            edges.append(GraphEdge(fk, dk, EdgeKind.STRUCTURAL))

    if level.value >= Enrichment.BI_MG_EM.value:
        mg_keys: dict[str, str] = {}
        for mg in sorted(on.task):
            mgk = add_node(f"mg:{mg}", NodeKind.MG, ont.label(mg))
            edges.append(GraphEdge(root, mgk, EdgeKind.STRUCTURAL))
            mg_keys[mg] = mgk
        for mid, mk in measure_keys.items():
            parent = parent_measure_group(ont, mid)
            if parent in mg_keys:
                edges.append(GraphEdge(mk, mg_keys[parent], EdgeKind.ISA))
        for em in sorted(on.expanded_measures):
            emk = add_node(f"em:{em}", NodeKind.EM, ont.label(em))
            parent = parent_measure_group(ont, em)
            if parent in mg_keys:
                edges.append(GraphEdge(emk, mg_keys[parent], EdgeKind.ISA))

    if level.value >= Enrichment.BI_MG_EM_DG.value:
        dg_keys: dict[str, str] = {}
        for did, dk in dim_keys:
            dg = parent_dimension_group(ont, did)
            if dg is None:
                continue
            if dg not in dg_keys:
                dg_keys[dg] = add_node(f"dg:{dg}", NodeKind.DG, ont.label(dg))
            edges.append(GraphEdge(dk, dg_keys[dg], EdgeKind.ISA))

    if level.value >= Enrichment.BI_MG_EM_DG_ED.value:
        ed_keys: dict[str, str] = {}
        for ed in sorted(on.expanded_dimensions):
            ed_keys[ed] = add_node(f"ed:{ed}", NodeKind.ED, ont.label(ed))
        for em in sorted(on.expanded_measures):
            for (m, d) in sorted(ont.functional_edges):
                if m == em and d in ed_keys:
                    edges.append(GraphEdge(f"em:{em}", ed_keys[d], EdgeKind.FUNCTIONAL))

    return StateGraph(nodes=nodes, edges=edges, enrichment=level)


def diameter_from_root(g: StateGraph) -> int:
    """Longest undirected BFS distance from the ROOT node."""
    idx = g.node_index()
    indptr, indices = g.csr()
    dist = {idx["root"]: 0}
    q = deque([idx["root"]])
    far = 0
    while q:
        v = q.popleft()
        for u in indices[indptr[v]:indptr[v + 1]]:
            u = int(u)
            if u not in dist:
                dist[u] = dist[v] + 1
                far = max(far, dist[u])
                q.append(u)
    return far


def to_dot(g: StateGraph) -> str:
    """DOT-format dump for debugging."""
    lines = ["digraph state {"]
    for n in g.nodes:
        lines.append(f'  "{n.key}" [label="{n.kind.name}: {n.label}"];')
    for e in g.edges:
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.kind.value}"];')
    lines.append("}")
    return "\n".join(lines)


# -- similarity ---------------------------------------------------------------


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def state_similarity(s1: State, on1: OntologyNeighborhood,
                     s2: State, on2: OntologyNeighborhood) -> float:
    """Average of four set-Jaccard terms: op, measures, dimensions, context.

    The three pattern terms carry 75% of the weight; the ontology context
    contributes the remaining 25%.
    """
    op_term = _jaccard({s1.pattern.op.value}, {s2.pattern.op.value})
    m1 = {(m.id, m.agg.value) for m in s1.pattern.measures}
    m2 = {(m.id, m.agg.value) for m in s2.pattern.measures}
    d1 = {(d.id, d.role.value, d.value) for d in s1.pattern.dimensions}
    d2 = {(d.id, d.role.value, d.value) for d in s2.pattern.dimensions}
    return (op_term + _jaccard(m1, m2) + _jaccard(d1, d2)
            + _jaccard(set(on1.all_ids()), set(on2.all_ids()))) / 4.0


# -- pair sampling ------------------------------------------------------------


@dataclass(frozen=True)
class StateContext:
    """A state bound to its session's task and ontology neighborhood."""

    session_id: str
    position: int  # 0-based index within the session
    state: State
    on: OntologyNeighborhood


def state_contexts(w: Workload, sessions: list[UserSession] | None = None) -> list[StateContext]:
    """All states of the workload with their per-session context attached."""
    out = []
    for s in (sessions if sessions is not None else w.sessions):
        task = session_task(w.ontology, s)
        for i, st in enumerate(s.states):
            out.append(StateContext(s.id, i, st,
                                    ontology_neighborhood(w.ontology, st, task)))
    return out


@dataclass
class PairSample:
    graph_a: StateGraph
    graph_b: StateGraph
    similarity: float
    matching: bool
    ctx_a: StateContext | None = None
    ctx_b: StateContext | None = None


def _decode_pair(t: int, offsets: np.ndarray) -> tuple[int, int]:
    i = int(np.searchsorted(offsets, t, side="right"))
    base = int(offsets[i - 1]) if i > 0 else 0
    return i, t - base + i + 1


def _unique_pair_stream(total: int, n: int, rng: np.random.Generator):
    """Yield distinct pair indices in a seeded random order."""
    if total <= max(4 * n, 100_000):
        yield from (int(t) for t in rng.permutation(total))
        return
    seen: set[int] = set()
    while len(seen) < total:
        for t in rng.integers(0, total, size=4096):
            t = int(t)
            if t not in seen:
                seen.add(t)
                yield t


def sample_pairs(w: Workload, n: int, seed: int,
                 level: Enrichment = Enrichment.BI_MG_EM,
                 match_threshold: float = 0.5,
                 min_label_fraction: float = 0.25,
                 scan_cap: int | None = None) -> list[PairSample]:
    """Seeded unique state pairs labeled matching iff similarity > threshold.

    Sampling is stratified: when the workload allows it (within a bounded
    scan window of `scan_cap` candidates), at least `min_label_fraction` of
    the returned pairs carry each label.
    """
    ctxs = state_contexts(w)
    n_states = len(ctxs)
    total = n_states * (n_states - 1) // 2
    if n_states < 2:
        raise ConfigError("workload must contain at least two states")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if n > total:
        raise ConfigError(f"requested {n} pairs but only {total} distinct pairs exist")

    rng = np.random.default_rng(seed)
    offsets = np.cumsum(np.arange(n_states - 1, -1, -1))

    graphs: dict[int, StateGraph] = {}

    def graph(i: int) -> StateGraph:
        g = graphs.get(i)
        if g is None:
            g = build_state_graph(w.ontology, ctxs[i].state, ctxs[i].on, level)
            graphs[i] = g
        return g

    min_each = max(1, int(np.ceil(min_label_fraction * n)))
    accepted: list[PairSample] = []
    stash: list[PairSample] = []
    counts = {True: 0, False: 0}
    examined = 0
    if scan_cap is None:
        scan_cap = total if total <= 250_000 else max(50 * n, 20_000)
    for t in _unique_pair_stream(total, n, rng):
        i, j = _decode_pair(t, offsets)
        sim = state_similarity(ctxs[i].state, ctxs[i].on,
                               ctxs[j].state, ctxs[j].on)
        label = sim > match_threshold
        pair = PairSample(graph(i), graph(j), sim, label, ctxs[i], ctxs[j])
        # Accept unless doing so would squeeze out the other label's quota.
        need_other = max(0, min_each - counts[not label])
        if n - len(accepted) - 1 >= need_other:
            accepted.append(pair)
            counts[label] += 1
        else:
            stash.append(pair)
        examined += 1
        if len(accepted) == n or examined >= scan_cap:
            break
    for pair in stash:
        if len(accepted) >= n:
            break
        accepted.append(pair)
    return accepted
