"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The jitted path is the default; setting the BIGUIDE_NO_NUMBA environment
variable (to any non-empty value) before import selects the numpy fallback.
`select_backend` switches at runtime, which the equivalence tests and
benchmarks/bench_kernels.py rely on.  Callers must access these functions as
module attributes (``kernels.neighbor_mean``) so rebinding takes effect.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

ENV_FLAG = "BIGUIDE_NO_NUMBA"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _HAVE_NUMBA = False


# -- pure numpy implementations ------------------------------------------------


def _neighbor_mean_np(h, indptr, indices):
    """Per node, the mean of its undirected neighbors' rows (zeros if none)."""
    n = h.shape[0]
    out = np.zeros_like(h)
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(n), counts)
    np.add.at(out, rows, h[indices])
    nz = counts > 0
    out[nz] /= counts[nz, None]
    return out


def _neighbor_mean_grad_np(g, indptr, indices):
    """Adjoint of neighbor_mean: scatter g[v]/deg(v) back onto v's neighbors."""
    n = g.shape[0]
    out = np.zeros_like(g)
    counts = np.diff(indptr)
    scaled = g / np.maximum(counts, 1)[:, None]
    rows = np.repeat(np.arange(n), counts)
    np.add.at(out, indices, scaled[rows])
    return out


def _transition_scores_np(src, ops, q, intent_op, w_s):
    """Weighted transition score: clamped cosine plus exact op match."""
    cos = np.clip(src @ q, 0.0, None)
    return w_s * cos + (1.0 - w_s) * (ops == intent_op)


def _summary_scores_np(summaries, q):
    return summaries @ q


def _forest_apply_np(feature, threshold, left, right, roots, x):
    """Leaf node reached by `x` in each tree of a stacked forest."""
    out = np.empty(len(roots), dtype=np.int64)
    for t in range(len(roots)):
        node = roots[t]
        while feature[node] >= 0:
            if x[feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[t] = node
    return out


def _best_split_np(X, y, n_classes, min_leaf):
    """Best axis-aligned Gini split over the given feature columns.

    Returns (feature index, threshold, weighted impurity); feature is -1 when
    no valid split exists.  Ties resolve to the first boundary of the first
    feature, matching the jitted scan order.
    """
    n, n_feat = X.shape
    best_feat, best_thr, best_cost = -1, 0.0, np.inf
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    nl = np.arange(1, n, dtype=float)
    nr = n - nl
    for fi in range(n_feat):
        order = np.argsort(X[:, fi], kind="stable")
        xs = X[order, fi]
        cum = np.cumsum(onehot[order], axis=0)
        lc = cum[:-1]
        rc = cum[-1] - lc
        cost = (nl - (lc ** 2).sum(axis=1) / nl
                + nr - (rc ** 2).sum(axis=1) / nr) / n
        valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        cost = np.where(valid, cost, np.inf)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best_feat, best_thr, best_cost = fi, 0.5 * (xs[i] + xs[i + 1]), float(cost[i])
    return best_feat, best_thr, best_cost


_NUMPY_IMPLS = {
    "neighbor_mean": _neighbor_mean_np,
    "neighbor_mean_grad": _neighbor_mean_grad_np,
    "transition_scores": _transition_scores_np,
    "summary_scores": _summary_scores_np,
    "forest_apply": _forest_apply_np,
    "best_split": _best_split_np,
}


# -- numba implementations -------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _neighbor_mean_nb(h, indptr, indices):
        n, d = h.shape
        out = np.zeros((n, d))
        for v in range(n):
            s, e = indptr[v], indptr[v + 1]
            if e > s:
                for k in range(s, e):
                    u = indices[k]
                    for c in range(d):
                        out[v, c] += h[u, c]
                inv = 1.0 / (e - s)
                for c in range(d):
                    out[v, c] *= inv
        return out

    @njit(cache=True)
    def _neighbor_mean_grad_nb(g, indptr, indices):
        n, d = g.shape
        out = np.zeros((n, d))
        for v in range(n):
            s, e = indptr[v], indptr[v + 1]
            if e > s:
                inv = 1.0 / (e - s)
                for k in range(s, e):
                    u = indices[k]
                    for c in range(d):
                        out[u, c] += g[v, c] * inv
        return out

    @njit(cache=True)
    def _transition_scores_nb(src, ops, q, intent_op, w_s):
        t, d = src.shape
        out = np.empty(t)
        for i in range(t):
            dot = 0.0
            for c in range(d):
                dot += src[i, c] * q[c]
            if dot < 0.0:
                dot = 0.0
            match = 1.0 if ops[i] == intent_op else 0.0
            out[i] = w_s * dot + (1.0 - w_s) * match
        return out

    @njit(cache=True)
    def _summary_scores_nb(summaries, q):
        s, d = summaries.shape
        out = np.empty(s)
        for i in range(s):
            dot = 0.0
            for c in range(d):
                dot += summaries[i, c] * q[c]
            out[i] = dot
        return out

    @njit(cache=True)
    def _forest_apply_nb(feature, threshold, left, right, roots, x):
        out = np.empty(len(roots), dtype=np.int64)
        for t in range(len(roots)):
            node = roots[t]
            while feature[node] >= 0:
                if x[feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[t] = node
        return out

    @njit(cache=True)
    def _best_split_nb(X, y, n_classes, min_leaf):
        n, n_feat = X.shape
        best_feat = -1
        best_thr = 0.0
        best_cost = np.inf
        total = np.zeros(n_classes, dtype=np.int64)
        for i in range(n):
            total[y[i]] += 1
        for fi in range(n_feat):
            order = np.argsort(X[:, fi])
            left = np.zeros(n_classes, dtype=np.int64)
            right = total.copy()
            lsq = 0.0
            rsq = 0.0
            for c in range(n_classes):
                rsq += float(right[c]) * float(right[c])
            for i in range(n - 1):
                c = y[order[i]]
                lsq += 2.0 * left[c] + 1.0
                left[c] += 1
                rsq -= 2.0 * right[c] - 1.0
                right[c] -= 1
                nl = i + 1
                nr = n - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                xi = X[order[i], fi]
                xj = X[order[i + 1], fi]
                if xi >= xj:
                    continue
                cost = (nl - lsq / nl + nr - rsq / nr) / n
                if cost < best_cost:
                    best_cost = cost
                    best_feat = fi
                    best_thr = 0.5 * (xi + xj)
        return best_feat, best_thr, best_cost

    _NUMBA_IMPLS = {
        "neighbor_mean": _neighbor_mean_nb,
        "neighbor_mean_grad": _neighbor_mean_grad_nb,
        "transition_scores": _transition_scores_nb,
        "summary_scores": _summary_scores_nb,
        "forest_apply": _forest_apply_nb,
        "best_split": _best_split_nb,
    }
else:
    _NUMBA_IMPLS = {}


# -- backend selection -----------------------------------------------------------

neighbor_mean = _neighbor_mean_np
neighbor_mean_grad = _neighbor_mean_grad_np
transition_scores = _transition_scores_np
summary_scores = _summary_scores_np
forest_apply = _forest_apply_np
best_split = _best_split_np

active_backend = "numpy"


def available_backends() -> tuple[str, ...]:
    return ("numpy", "numba") if _HAVE_NUMBA else ("numpy",)


def impls(backend: str) -> dict:
    if backend == "numpy":
        return dict(_NUMPY_IMPLS)
    if backend == "numba" and _HAVE_NUMBA:
        return dict(_NUMBA_IMPLS)
    raise ConfigError(f"unknown or unavailable kernel backend: {backend!r}")


def select_backend(backend: str) -> None:
    """Rebind the module-level kernel functions to the chosen backend."""
    global neighbor_mean, neighbor_mean_grad, transition_scores
    global summary_scores, forest_apply, best_split, active_backend
    table = impls(backend)
    neighbor_mean = table["neighbor_mean"]
    neighbor_mean_grad = table["neighbor_mean_grad"]
    transition_scores = table["transition_scores"]
    summary_scores = table["summary_scores"]
    forest_apply = table["forest_apply"]
    best_split = table["best_split"]
    active_backend = backend


def default_backend() -> str:
    if _HAVE_NUMBA and not os.environ.get(ENV_FLAG):
        return "numba"
    return "numpy"


select_backend(default_backend())
