"""DAGs, structural constraints, local moves and the skeleton-size prior."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .errors import ContractViolation, InvalidInputError


class OpKind(enum.IntEnum):
    INSERT = _kernels.INSERT
    DELETE = _kernels.DELETE
    REVERSE = _kernels.REVERSE


class DagOperator(NamedTuple):
    kind: OpKind
    u: int
    v: int

    def inverse(self) -> "DagOperator":
        if self.kind == OpKind.INSERT:
            return DagOperator(OpKind.DELETE, self.u, self.v)
        if self.kind == OpKind.DELETE:
            return DagOperator(OpKind.INSERT, self.u, self.v)
        return DagOperator(OpKind.REVERSE, self.v, self.u)


def _check_square(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise InvalidInputError(f"adjacency must be square, got shape {adj.shape}")
    if not np.isin(adj, (0, 1)).all():
        raise InvalidInputError("adjacency must be binary")
    if np.any(np.diag(adj)):
        raise InvalidInputError("adjacency has a nonzero diagonal (self loop)")
    return adj.astype(np.uint8)


def is_acyclic(adjacency) -> bool:
    """Kahn elimination: repeatedly strip nodes without remaining parents."""
    adj = _check_square(adjacency).astype(np.int64)
    indeg = adj.sum(axis=0)
    alive = np.ones(adj.shape[0], dtype=bool)
    frontier = list(np.flatnonzero(indeg == 0))
    while frontier:
        u = frontier.pop()
        alive[u] = False
        for v in np.flatnonzero(adj[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                frontier.append(v)
    return not alive.any()


class Dag:
    """Immutable DAG over nodes ``0..q-1`` stored as a dense 0/1 matrix.

    ``adjacency[u, v] == 1`` means the edge ``u -> v``.
    """

    __slots__ = ("adjacency", "edge_count", "parents")

    def __init__(self, adjacency, check: bool = True):
        adj = _check_square(adjacency) if check else np.asarray(adjacency, dtype=np.uint8)
        if check:
            if np.any(adj & adj.T):
                raise InvalidInputError("both orientations of an edge are present")
            if not is_acyclic(adj):
                raise InvalidInputError("adjacency contains a directed cycle")
        adj = adj.copy()
        adj.flags.writeable = False
        self.adjacency = adj
        self.edge_count = int(adj.sum())
        child, parent = np.nonzero(adj.T)
        cuts = np.cumsum(np.bincount(child, minlength=adj.shape[0]))[:-1]
        self.parents = tuple(tuple(g.tolist()) for g in np.split(parent, cuts))

    @classmethod
    def empty(cls, q: int) -> "Dag":
        return cls(np.zeros((q, q), dtype=np.uint8), check=False)

    @classmethod
    def from_edges(cls, q: int, edges: Iterable[tuple[int, int]]) -> "Dag":
        adj = np.zeros((q, q), dtype=np.uint8)
        for u, v in edges:
            if not (0 <= u < q and 0 <= v < q):
                raise InvalidInputError(f"edge ({u}, {v}) out of range for q={q}")
            adj[u, v] = 1
        return cls(adj)

    @property
    def q(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        return [(int(u), int(v)) for u, v in zip(*np.nonzero(self.adjacency))]

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.adjacency[u, v])

    def skeleton(self) -> np.ndarray:
        return (self.adjacency | self.adjacency.T).astype(np.uint8)

    def topological_order(self) -> list[int]:
        indeg = self.adjacency.sum(axis=0).astype(np.int64)
        order = []
        frontier = sorted(np.flatnonzero(indeg == 0).tolist())
        while frontier:
            u = frontier.pop(0)
            order.append(u)
            for v in np.flatnonzero(self.adjacency[u]):
                indeg[v] -= 1
                if indeg[v] == 0:
                    frontier.append(int(v))
        return order

    def ancestors_of(self, v: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self.parents[v])
        while stack:
            u = stack.pop()
            if u not in seen:
                seen.add(u)
                stack.extend(self.parents[u])
        return seen

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.q, self.adjacency.tobytes()))

    def __repr__(self):
        return f"Dag(q={self.q}, edges={self.edges()})"


@dataclass(frozen=True)
class StructuralConstraints:
    """Forbidden directed edges, plus an optional in-degree cap."""

    q: int
    forbidden: frozenset = field(default_factory=frozenset)
    max_parents: int | None = None

    def __post_init__(self):
        for u, v in self.forbidden:
            if not (0 <= u < self.q and 0 <= v < self.q) or u == v:
                raise InvalidInputError(f"forbidden pair ({u}, {v}) invalid for q={self.q}")
        if self.max_parents is not None and self.max_parents < 0:
            raise InvalidInputError("max_parents must be non-negative")

    @classmethod
    def build(cls, q: int, forbid: Iterable[tuple[int, int]] = (),
              exogenous: Iterable[int] = (), response: Iterable[int] = (),
              max_parents: int | None = None) -> "StructuralConstraints":
        pairs = {(int(u), int(v)) for u, v in forbid}
        for node in exogenous:
            pairs.update((u, int(node)) for u in range(q) if u != node)
        for node in response:
            pairs.update((int(node), v) for v in range(q) if v != node)
        return cls(q, frozenset(pairs), max_parents)

    @classmethod
    def none(cls, q: int) -> "StructuralConstraints":
        return cls(q)

    @cached_property
    def forbidden_matrix(self) -> np.ndarray:
        mat = np.zeros((self.q, self.q), dtype=np.bool_)
        for u, v in self.forbidden:
            mat[u, v] = True
        return mat

    @property
    def _cap(self) -> int:
        return -1 if self.max_parents is None else self.max_parents

    def satisfied_by(self, d: Dag) -> bool:
        if d.q != self.q:
            return False
        if np.any(d.adjacency.astype(bool) & self.forbidden_matrix):
            return False
        if self.max_parents is not None and d.adjacency.sum(axis=0).max(initial=0) > self.max_parents:
            return False
        return True


def read_constraints(path, q: int, names: Sequence[str] | None = None,
                     max_parents: int | None = None) -> StructuralConstraints:
    """Parse a constraint file of ``forbid u v`` / ``exogenous u`` / ``response u`` lines.

    Nodes are 0-based indices or column names; ``#`` starts a comment.
    """
    lookup = {name: idx for idx, name in enumerate(names or ())}

    def node(token: str, lineno: int) -> int:
        if token in lookup:
            return lookup[token]
        try:
            idx = int(token)
        except ValueError:
            raise InvalidInputError(f"{path}:{lineno}: unknown node {token!r}") from None
        if not 0 <= idx < q:
            raise InvalidInputError(f"{path}:{lineno}: node index {idx} out of range")
        return idx

    forbid, exo, resp = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            tokens = raw.split("#", 1)[0].split()
            if not tokens:
                continue
            directive, args = tokens[0].lower(), tokens[1:]
            if directive == "forbid" and len(args) == 2:
                u, v = node(args[0], lineno), node(args[1], lineno)
                if u == v:
                    raise InvalidInputError(f"{path}:{lineno}: self loop in forbid")
                forbid.append((u, v))
            elif directive == "exogenous" and len(args) == 1:
                exo.append(node(args[0], lineno))
            elif directive == "response" and len(args) == 1:
                resp.append(node(args[0], lineno))
            else:
                raise InvalidInputError(f"{path}:{lineno}: cannot parse {raw.strip()!r}")
    return StructuralConstraints.build(q, forbid, exo, resp, max_parents)


@dataclass(frozen=True)
class DagPriorParams:
    """Beta(a_w, b_w) hyperprior on the edge-inclusion probability."""

    a_w: float = 1.0
    b_w: float = 1.0

    def __post_init__(self):
        if not (self.a_w > 0 and self.b_w > 0):
            raise InvalidInputError("a_w and b_w must be positive")

    @classmethod
    def sparse_default(cls, q: int) -> "DagPriorParams":
        return cls(1.0, 2.0 * q)


def _transitive_closure(adj: np.ndarray) -> np.ndarray:
    reach = adj.astype(np.int64)
    while True:
        nxt = ((reach + reach @ reach) > 0).astype(np.int64)
        if np.array_equal(nxt, reach):
            return reach.astype(bool)
        reach = nxt


def operator_masks(d: Dag, c: StructuralConstraints):
    """Boolean (q, q) masks of the valid insert / delete / reverse moves."""
    adj = d.adjacency.astype(np.int64)
    q = d.q
    reach = _transitive_closure(adj)
    longer = (adj @ reach.astype(np.int64)) > 0  # path of length >= 2
    forb = c.forbidden_matrix
    free = (adj == 0) & (adj.T == 0) & ~np.eye(q, dtype=bool)
    insert = free & ~forb & ~reach.T
    delete = adj.astype(bool)
    reverse = delete & ~longer & ~forb.T
    if c.max_parents is not None:
        indeg = adj.sum(axis=0)
        insert &= (indeg < c.max_parents)[None, :]
        reverse &= (indeg < c.max_parents)[:, None]
    return insert, delete, reverse


def enumerate_operators(d: Dag, c: StructuralConstraints) -> list[DagOperator]:
    if d.q != c.q:
        raise InvalidInputError("DAG and constraints disagree on q")
    ops = []
    for kind, mask in zip(OpKind, operator_masks(d, c)):
        ops.extend(DagOperator(kind, int(u), int(v)) for u, v in zip(*np.nonzero(mask)))
    return ops


def count_operators(d: Dag, c: StructuralConstraints) -> int:
    return int(sum(m.sum() for m in operator_masks(d, c)))


def apply_operator(d: Dag, op: DagOperator, c: StructuralConstraints | None = None) -> Dag:
    """Return the DAG obtained by applying ``op``; ``c`` defaults to no constraints."""
    c = c or StructuralConstraints.none(d.q)
    kind, u, v = op
    masks = operator_masks(d, c)
    if not (0 <= u < d.q and 0 <= v < d.q) or not masks[int(kind)][u, v]:
        raise ContractViolation(f"{op} is not a valid move for {d}")
    adj = np.array(d.adjacency)
    if kind == OpKind.INSERT:
        adj[u, v] = 1
    elif kind == OpKind.DELETE:
        adj[u, v] = 0
    else:
        adj[u, v] = 0
        adj[v, u] = 1
    return Dag(adj, check=False)


def max_edges(q: int) -> int:
    return q * (q - 1) // 2


def log_prior(d: Dag, p: DagPriorParams) -> float:
    """Unnormalised log prior: log Gamma(|S|+a_w) + log Gamma(M-|S|+b_w)."""
    m = max_edges(d.q)
    s = d.edge_count
    return float(gammaln(s + p.a_w) + gammaln(m - s + p.b_w))


def log_prior_ratio(d_new: Dag, d_old: Dag, p: DagPriorParams) -> float:
    if d_new.q != d_old.q:
        raise InvalidInputError("DAGs have different node counts")
    m = max_edges(d_new.q)
    s_old, s_new = d_old.edge_count, d_new.edge_count
    if s_new == s_old:
        return 0.0
    if s_new == s_old + 1:
        return float(np.log((s_old + p.a_w) / (m - s_old - 1 + p.b_w)))
    if s_new == s_old - 1:
        return float(-np.log((s_new + p.a_w) / (m - s_new - 1 + p.b_w)))
    return log_prior(d_new, p) - log_prior(d_old, p)


def log_hastings_ratio(d_new: Dag, d_old: Dag, c: StructuralConstraints) -> float:
    """log |O(d_old)| - log |O(d_new)| for uniform-operator proposals."""
    return float(np.log(count_operators(d_old, c)) - np.log(count_operators(d_new, c)))


def sample_baseline_dag(c: StructuralConstraints, p: DagPriorParams, burn: int,
                        rng: np.random.Generator, approx_hastings: bool = False,
                        start: Dag | None = None) -> Dag:
    """Run ``burn`` Metropolis moves on the prior from the empty DAG."""
    if burn < 1:
        raise InvalidInputError("burn must be at least 1")
    adj = (start.adjacency if start is not None else np.zeros((c.q, c.q), dtype=np.uint8))
    uniforms = rng.random((burn, 2))
    out = _kernels.baseline_chain(np.ascontiguousarray(adj, dtype=np.uint8),
                                  c.forbidden_matrix, c._cap, float(p.a_w),
                                  float(p.b_w), uniforms, approx_hastings)
    return Dag(out, check=False)


def all_dags(q: int, c: StructuralConstraints | None = None) -> list[Dag]:
    """Every DAG on q nodes (optionally satisfying ``c``); feasible for q <= 4."""
    pairs = list(itertools.combinations(range(q), 2))
    out = []
    for states in itertools.product((0, 1, 2), repeat=len(pairs)):
        adj = np.zeros((q, q), dtype=np.uint8)
        for (u, v), s in zip(pairs, states):
            if s == 1:
                adj[u, v] = 1
            elif s == 2:
                adj[v, u] = 1
        if is_acyclic(adj):
            d = Dag(adj, check=False)
            if c is None or c.satisfied_by(d):
                out.append(d)
    return out


def v_structures(d: Dag) -> set[tuple[int, int, int]]:
    """Triples (a, v, b), a < b, with a -> v <- b and a, b non-adjacent."""
    skel = d.skeleton()
    out = set()
    for v in range(d.q):
        for a, b in itertools.combinations(d.parents[v], 2):
            if not skel[a, b]:
                out.add((a, v, b))
    return out


def markov_equivalent(d1: Dag, d2: Dag) -> bool:
    return (np.array_equal(d1.skeleton(), d2.skeleton())
            and v_structures(d1) == v_structures(d2))


def shd(d1: Dag, d2: Dag) -> int:
    """Structural Hamming distance: node pairs whose edge status differs."""
    if d1.q != d2.q:
        raise InvalidInputError("DAGs have different node counts")
    a, b = d1.adjacency, d2.adjacency
    iu = np.triu_indices(d1.q, k=1)
    differ = (a[iu] != b[iu]) | (a.T[iu] != b.T[iu])
    return int(differ.sum())
