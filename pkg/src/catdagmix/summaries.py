"""Posterior summaries of a trace: co-clustering, point partitions, edge probabilities."""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidInputError
from .graph import Dag, is_acyclic


def relabel(labels) -> np.ndarray:
    """Map labels to 0..K-1 in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[inv.reshape(-1)]


def _one_hot_stack(xi: np.ndarray) -> csr_matrix:
    r, n = xi.shape
    offsets = np.concatenate([[0], np.cumsum(xi.max(axis=1) + 1)[:-1]])
    cols = (xi + offsets[:, None]).T.reshape(-1)
    rows = np.repeat(np.arange(n), r)
    width = int((xi.max(axis=1) + 1).sum())
    return csr_matrix((np.ones(n * r), (rows, cols)), shape=(n, width))


def similarity(trace) -> np.ndarray:
    """Fraction of records in which each pair of subjects shares a cluster."""
    xi = np.asarray(trace.xi if hasattr(trace, "xi") else trace)
    if xi.ndim != 2 or xi.shape[0] == 0:
        raise InvalidInputError("need a non-empty (records, n) label array")
    z = _one_hot_stack(xi)
    s = (z @ z.T).toarray() / xi.shape[0]
    np.fill_diagonal(s, 1.0)
    return s


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def variation_of_information(p1, p2) -> float:
    """H(p1) + H(p2) - 2 I(p1, p2) in nats."""
    a, b = np.asarray(p1), np.asarray(p2)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("partitions must be 1-d and of equal length")
    n = len(a)
    if n == 0:
        return 0.0
    a, b = relabel(a), relabel(b)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1)
    h_a = _entropy(joint.sum(1), n)
    h_b = _entropy(joint.sum(0), n)
    h_ab = _entropy(joint.ravel(), n)
    return max(0.0, 2 * h_ab - h_a - h_b)


def point_clustering_threshold(s: np.ndarray, z: float = 0.5) -> np.ndarray:
    """Connected components of the graph linking pairs with similarity above z."""
    if not 0 < z < 1:
        raise InvalidInputError("threshold must lie in (0, 1)")
    adj = csr_matrix(np.asarray(s) > z)
    _, labels = connected_components(adj, directed=False)
    return relabel(labels)


def expected_vi_lower_bound(partition, s: np.ndarray) -> float:
    """Jensen lower bound of the posterior expected VI of ``partition`` (nats).

    Computed from pairwise co-clustering probabilities only:
    mean_i [log |c_i| + log sum_i' S_ii' - 2 log sum_{i' in c_i} S_ii'].
    """
    c = relabel(partition)
    same = c[:, None] == c[None, :]
    block = np.where(same, s, 0.0).sum(axis=1)
    sizes = np.bincount(c)[c]
    return float(np.mean(np.log(sizes) + np.log(s.sum(axis=1)) - 2 * np.log(block)))


def point_clustering_minvi(s: np.ndarray, trace) -> np.ndarray:
    """Sampled partition with the smallest expected-VI lower bound.

    Ties go to fewer clusters, then to the earliest record.
    """
    xi = np.asarray(trace.xi if hasattr(trace, "xi") else trace)
    if xi.ndim != 2 or xi.shape[0] == 0:
        raise InvalidInputError("need a non-empty trace")
    canon = np.array([relabel(r) for r in xi])
    _, first = np.unique(canon, axis=0, return_index=True)
    best, best_key = None, None
    for r in sorted(first):
        cand = canon[r]
        key = (round(expected_vi_lower_bound(cand, s), 12), int(cand.max()) + 1, r)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    return best


def ppi(trace, i: int) -> np.ndarray:
    """Frequency of each directed edge in the DAG of subject i's cluster."""
    if trace.n_records == 0:
        raise InvalidInputError("empty trace")
    acc = np.zeros((trace.q, trace.q))
    for r in range(trace.n_records):
        acc += trace.dags[r][trace.xi[r, i]]
    return acc / trace.n_records


def ppi_all(trace) -> np.ndarray:
    """(n, q, q) edge-inclusion frequencies for every subject at once."""
    if trace.n_records == 0:
        raise InvalidInputError("empty trace")
    z = _one_hot_stack(trace.xi)
    stacked = np.concatenate([d.reshape(d.shape[0], -1) for d in trace.dags]).astype(float)
    out = z @ stacked / trace.n_records
    return np.asarray(out).reshape(trace.n, trace.q, trace.q)


def _find_cycle(adj: np.ndarray) -> list[tuple[int, int]] | None:
    q = adj.shape[0]
    color = np.zeros(q, dtype=np.int8)
    parent = [-1] * q
    for root in range(q):
        if color[root]:
            continue
        stack = [(root, iter(np.flatnonzero(adj[root])))]
        color[root] = 1
        while stack:
            u, children = stack[-1]
            nxt = next(children, None)
            if nxt is None:
                color[u] = 2
                stack.pop()
                continue
            v = int(nxt)
            if color[v] == 1:
                cycle = [(u, v)]
                w = u
                while w != v:
                    cycle.append((parent[w], w))
                    w = parent[w]
                return cycle
            if color[v] == 0:
                color[v] = 1
                parent[v] = u
                stack.append((v, iter(np.flatnonzero(adj[v]))))
    return None


def point_dag(p: np.ndarray, z: float = 0.5) -> Dag:
    """Edges with PPI above z; cycles broken by dropping their weakest edge.

    Among equally weak edges of a cycle the largest (u, v) pair is dropped.
    """
    if not 0 < z < 1:
        raise InvalidInputError("threshold must lie in (0, 1)")
    p = np.asarray(p, dtype=float)
    adj = (p > z).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    while True:
        cycle = _find_cycle(adj)
        if cycle is None:
            break
        u, v = min(cycle, key=lambda e: (p[e], -e[0], -e[1]))
        adj[u, v] = 0
    assert is_acyclic(adj)
    return Dag(adj)
