"""Collapsed Gibbs sampler for a Dirichlet-process mixture of categorical DAGs.

Cluster labels are 0-based and contiguous in memory (``0..K-1``); files
written by :mod:`catdagmix.io` shift them to ``1..K``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .catmodel import (BdeuParams, Dataset, ThetaDraw, config_index, count_family,
                       log_marginal_node, log_prior_predictive_empty, n_configs,
                       sample_theta)
from .errors import InvalidInputError, InvariantError
from .graph import (Dag, DagPriorParams, OpKind, StructuralConstraints, log_prior_ratio,
                    sample_baseline_dag)

log = logging.getLogger(__name__)


@dataclass
class McmcConfig:
    iterations: int = 100_000
    burn_in: int = 10_000
    thin: int = 1
    bdeu_a: float = 1.0
    a_w: float = 1.0
    b_w: float | None = None        # None -> 2q
    c: float = 3.0
    d: float = 1.0
    seed: int = 0
    baseline_burn: int | None = None  # None -> q(q-1), at least 1
    no_dag: bool = False
    no_mixture: bool = False
    approx_hastings: bool = False
    fixed_alpha: bool = False
    alpha_init: float | None = None   # None -> draw from the Gamma(c, d) prior
    fixed_partition: bool = False
    init: str = "single"              # "single" or "random:K0"
    dag_moves_per_iter: int = 1
    random_scan: bool = False
    record_theta: bool = False
    max_parents: int | None = None
    debug_recount: bool = False

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise InvalidInputError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise InvalidInputError("thin must be >= 1")
        if not (self.c > 0 and self.d > 0):
            raise InvalidInputError("alpha prior parameters c, d must be positive")
        if self.bdeu_a <= 0 or self.a_w <= 0 or (self.b_w is not None and self.b_w <= 0):
            raise InvalidInputError("prior hyperparameters must be positive")
        if self.fixed_alpha and self.alpha_init is None:
            raise InvalidInputError("fixed_alpha requires alpha_init")
        if self.alpha_init is not None and self.alpha_init <= 0:
            raise InvalidInputError("alpha_init must be positive")
        if self.dag_moves_per_iter < 0:
            raise InvalidInputError("dag_moves_per_iter must be >= 0")
        if self.baseline_burn is not None and self.baseline_burn < 1:
            raise InvalidInputError("baseline_burn must be >= 1")
        parse_init(self.init)

    @property
    def n_records(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def dag_prior(self, q: int) -> DagPriorParams:
        return DagPriorParams(self.a_w, 2.0 * q if self.b_w is None else self.b_w)

    def baseline_moves(self, q: int) -> int:
        return self.baseline_burn if self.baseline_burn is not None else max(1, q * (q - 1))

    def to_dict(self) -> dict:
        return asdict(self)


def parse_init(spec: str) -> int:
    """Number of initial clusters encoded by an ``init`` string."""
    if spec == "single":
        return 1
    if spec.startswith("random:"):
        try:
            k0 = int(spec.split(":", 1)[1])
        except ValueError:
            k0 = 0
        if k0 >= 1:
            return k0
    raise InvalidInputError(f"bad init spec {spec!r}; use 'single' or 'random:K0'")


def make_rng(seed: int, chain: int = 0) -> np.random.Generator:
    """Independent stream per (seed, chain) pair."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chain),)))


class ClusterState:
    """Partition, per-cluster DAGs, concentration and incremental count caches.

    For cluster k and node j the cache holds a flat table of counts of
    (parent configuration slot, child level) at ``cells[k, off[k, j]:]`` and
    the per-slot totals at ``margins[k, moff[k, j]:]``. ``cfg[k, i, j]`` is the
    slot of row i's parent configuration under cluster k's DAG, so any row
    can be scored against any cluster. Slots are the row-major configuration
    index when the parent space is at most n, otherwise a compressed index
    over configurations present in the data (absent ones have zero counts and
    contribute nothing).
    """

    def __init__(self, ds: Dataset, xi, dags: list[Dag], alpha: float,
                 bdeu: BdeuParams = BdeuParams()):
        self.ds = ds
        self.bdeu = bdeu
        self.alpha = float(alpha)
        xi = np.asarray(xi, dtype=np.int64)
        uniq, xi = np.unique(xi, return_inverse=True)
        if len(dags) < len(uniq):
            raise InvalidInputError("one DAG is needed per cluster label")
        self.xi = xi.reshape(-1).astype(np.int64)
        # dags are matched either positionally or by the original label value
        self.dags = list(dags) if len(dags) == len(uniq) else [dags[int(u)] for u in uniq]
        self.K = len(uniq)
        self.log_empty = log_prior_predictive_empty(None, ds)
        cap = max(4, 2 * self.K)
        n, q = ds.n, ds.q
        self.sizes = np.zeros(cap, dtype=np.int64)
        self.cfg = np.zeros((cap, n, q), dtype=np.int64)
        self.off = np.zeros((cap, q), dtype=np.int64)
        self.moff = np.zeros((cap, q), dtype=np.int64)
        self.slots = np.zeros((cap, q), dtype=np.int64)
        self.apa = np.ones((cap, q))
        self.afa = np.ones((cap, q))
        self.cells = np.zeros((cap, 1), dtype=np.int64)
        self.margins = np.zeros((cap, 1), dtype=np.int64)
        self.scratch = np.zeros(64, dtype=np.int64)
        for k in range(self.K):
            self._rebuild(k)

    @property
    def n(self) -> int:
        return self.ds.n

    @property
    def cluster_sizes(self) -> np.ndarray:
        return self.sizes[:self.K].copy()

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.xi == k)

    # cache maintenance ---------------------------------------------------

    def _grow(self, k_needed: int = 0, width: int = 0, mwidth: int = 0):
        cap = self.sizes.shape[0]
        if k_needed > cap:
            new = max(k_needed, 2 * cap)
            pad = new - cap
            self.sizes = np.concatenate([self.sizes, np.zeros(pad, dtype=np.int64)])
            self.cfg = np.concatenate([self.cfg, np.zeros((pad,) + self.cfg.shape[1:], dtype=np.int64)])
            self.off = np.concatenate([self.off, np.zeros((pad, self.ds.q), dtype=np.int64)])
            self.moff = np.concatenate([self.moff, np.zeros((pad, self.ds.q), dtype=np.int64)])
            self.slots = np.concatenate([self.slots, np.zeros((pad, self.ds.q), dtype=np.int64)])
            self.apa = np.concatenate([self.apa, np.ones((pad, self.ds.q))])
            self.afa = np.concatenate([self.afa, np.ones((pad, self.ds.q))])
            self.cells = np.concatenate([self.cells, np.zeros((pad, self.cells.shape[1]), dtype=np.int64)])
            self.margins = np.concatenate([self.margins, np.zeros((pad, self.margins.shape[1]), dtype=np.int64)])
        if width > self.cells.shape[1]:
            grown = np.zeros((self.cells.shape[0], max(width, 2 * self.cells.shape[1])), dtype=np.int64)
            grown[:, :self.cells.shape[1]] = self.cells
            self.cells = grown
        if mwidth > self.margins.shape[1]:
            grown = np.zeros((self.margins.shape[0], max(mwidth, 2 * self.margins.shape[1])), dtype=np.int64)
            grown[:, :self.margins.shape[1]] = self.margins
            self.margins = grown

    def _rebuild(self, k: int):
        """Recompute layout and counts of cluster k from its DAG and members."""
        ds, dag = self.ds, self.dags[k]
        n, levels = ds.n, ds.levels
        slots = np.zeros(ds.q, dtype=np.int64)
        for j in range(ds.q):
            pa = dag.parents[j]
            card = n_configs(pa, levels)
            full = config_index(ds.data, pa, levels)
            if card <= max(n, 1):
                self.cfg[k, :, j] = full
                slots[j] = card
            else:
                uniq, inv = np.unique(full, return_inverse=True)
                self.cfg[k, :, j] = inv.reshape(-1)
                slots[j] = len(uniq)
            self.apa[k, j] = self.bdeu.a / card
            self.afa[k, j] = self.apa[k, j] / levels[j]
        self.slots[k] = slots
        widths = slots * levels
        self.off[k] = np.concatenate([[0], np.cumsum(widths)[:-1]])
        self.moff[k] = np.concatenate([[0], np.cumsum(slots)[:-1]])
        self._grow(width=int(widths.sum()), mwidth=int(slots.sum()))
        self.cells[k] = 0
        self.margins[k] = 0
        rows = self.members(k)
        self.sizes[k] = len(rows)
        for j in range(ds.q):
            s = self.cfg[k, rows, j]
            np.add.at(self.cells[k], self.off[k, j] + s * levels[j] + ds.data[rows, j], 1)
            np.add.at(self.margins[k], self.moff[k, j] + s, 1)

    def _open_cluster(self, dag: Dag) -> int:
        k = self.K
        self._grow(k_needed=k + 1)
        self.dags.append(dag)
        self.K += 1
        self._rebuild(k)
        return k

    def _place(self, i: int, k: int):
        levels, x = self.ds.levels, self.ds.data[i]
        for j in range(self.ds.q):
            s = self.cfg[k, i, j]
            self.cells[k, self.off[k, j] + s * levels[j] + x[j]] += 1
            self.margins[k, self.moff[k, j] + s] += 1
        self.sizes[k] += 1
        self.xi[i] = k

    def _drop_cluster(self, c: int):
        """Delete empty cluster c, moving the last cluster into its slot."""
        if self.sizes[c] != 0:
            raise InvariantError(f"cluster {c} is not empty")
        last = self.K - 1
        if c != last:
            for arr in (self.sizes, self.cfg, self.off, self.moff, self.slots, self.apa, self.afa,
                        self.cells, self.margins):
                arr[c] = arr[last]
            self.dags[c] = self.dags[last]
            self.xi[self.xi == last] = c
        self.dags.pop()
        self.sizes[last] = 0
        self.K -= 1

    def set_dag(self, k: int, dag: Dag):
        self.dags[k] = dag
        self._rebuild(k)

    def node_counts(self, k: int, j: int):
        """(counts of slots x levels, slot totals) for cluster k, node j."""
        L, m = self.ds.levels[j], self.slots[k, j]
        cells = self.cells[k, self.off[k, j]:self.off[k, j] + m * L].reshape(m, L)
        margins = self.margins[k, self.moff[k, j]:self.moff[k, j] + m]
        return cells, margins

    def check(self):
        """Raise InvariantError unless every cache matches a full recount."""
        if self.K and (self.xi.min() < 0 or self.xi.max() != self.K - 1):
            raise InvariantError("labels are not contiguous")
        if np.any(np.bincount(self.xi, minlength=self.K)[:self.K] != self.sizes[:self.K]):
            raise InvariantError("occupancy counts disagree with labels")
        if np.any(self.sizes[:self.K] == 0):
            raise InvariantError("empty cluster present")
        if len(self.dags) != self.K:
            raise InvariantError("DAG list length differs from K")
        for k in range(self.K):
            rows = self.members(k)
            for j in range(self.ds.q):
                fc = count_family(self.ds, rows, j, self.dags[k].parents[j])
                cells, margins = self.node_counts(k, j)
                if cells.sum() != fc.total or margins.sum() != fc.total:
                    raise InvariantError(f"cache totals wrong at cluster {k}, node {j}")
                rows_slots = self.cfg[k, rows, j]
                tally = np.zeros_like(cells)
                np.add.at(tally, (rows_slots, self.ds.data[rows, j]), 1)
                if not np.array_equal(tally, cells) or not np.array_equal(tally.sum(1), margins):
                    raise InvariantError(f"cache mismatch at cluster {k}, node {j}")

    def copy(self) -> "ClusterState":
        new = object.__new__(ClusterState)
        new.__dict__.update(self.__dict__)
        for name in ("xi", "sizes", "cfg", "off", "moff", "slots", "apa", "afa", "cells", "margins",
                     "scratch"):
            setattr(new, name, getattr(self, name).copy())
        new.dags = list(self.dags)
        return new

    # scoring ---------------------------------------------------------------

    def log_weights(self, i: int) -> np.ndarray:
        """Unnormalised log full-conditional weights of row i (clusters then new).

        Row i must not be counted in any cluster (see :meth:`detach`).
        """
        if self.xi[i] >= 0:
            raise InvalidInputError("row must be detached before scoring")
        out = np.empty(self.K + 1)
        _kernels.row_log_weights(self.ds.data[i], self.K, self.sizes,
                                 np.ascontiguousarray(self.cfg[:, i, :]), self.ds.levels,
                                 self.off, self.moff, self.cells, self.margins,
                                 self.apa, self.afa, np.log(self.alpha), self.log_empty, out)
        return out

    def detach(self, i: int) -> int:
        """Remove row i from its cluster (dropping the cluster if emptied)."""
        c = int(self.xi[i])
        levels, x = self.ds.levels, self.ds.data[i]
        for j in range(self.ds.q):
            s = self.cfg[c, i, j]
            self.cells[c, self.off[c, j] + s * levels[j] + x[j]] -= 1
            self.margins[c, self.moff[c, j] + s] -= 1
        self.sizes[c] -= 1
        self.xi[i] = -1
        if self.sizes[c] == 0:
            self._drop_cluster(c)
        return c


def init_state(ds: Dataset, cfg: McmcConfig, constraints: StructuralConstraints,
               rng: np.random.Generator, labels=None) -> ClusterState:
    """Starting state: one cluster, ``random:K0`` labels, or explicit labels."""
    if constraints.q != ds.q:
        raise InvalidInputError("constraints and dataset disagree on q")
    if labels is not None:
        xi = np.unique(np.asarray(labels), return_inverse=True)[1].reshape(-1)
    elif cfg.no_mixture:
        xi = np.zeros(ds.n, dtype=np.int64)
    else:
        k0 = parse_init(cfg.init)
        xi = rng.integers(k0, size=ds.n) if k0 > 1 else np.zeros(ds.n, dtype=np.int64)
        xi = np.unique(xi, return_inverse=True)[1].reshape(-1)
    k = int(xi.max()) + 1 if ds.n else 0
    dags = [_fresh_dag(ds, cfg, constraints, rng) for _ in range(k)]
    if cfg.alpha_init is not None:
        alpha = cfg.alpha_init
    else:
        alpha = rng.gamma(cfg.c, 1.0 / cfg.d)
    return ClusterState(ds, xi, dags, alpha, BdeuParams(cfg.bdeu_a))


def _fresh_dag(ds: Dataset, cfg: McmcConfig, constraints: StructuralConstraints,
               rng: np.random.Generator) -> Dag:
    if cfg.no_dag:
        return Dag.empty(ds.q)
    return sample_baseline_dag(constraints, cfg.dag_prior(ds.q), cfg.baseline_moves(ds.q),
                               rng, cfg.approx_hastings)


def _scan(state: ClusterState, order: np.ndarray, constraints, cfg, rng):
    uniforms = rng.random(len(order))
    pos, skip = 0, False
    log_alpha = np.log(state.alpha)
    while True:
        pos, event = _kernels.sweep(state.ds.data, state.ds.levels, state.xi, state.sizes,
                                    state.K, state.cfg, state.off, state.moff, state.cells,
                                    state.margins, state.apa, state.afa, log_alpha,
                                    state.log_empty, order, pos, uniforms, skip)
        if event == _kernels.SWEEP_DONE:
            return
        if event == _kernels.SWEEP_EMPTIED:
            empty = np.flatnonzero(state.sizes[:state.K] == 0)
            if len(empty) != 1:
                raise InvariantError("expected exactly one emptied cluster")
            state._drop_cluster(int(empty[0]))
            skip = True
        else:
            # the new cluster's DAG does not enter the weight, so it is drawn
            # only once the row has chosen to open a cluster
            k = state._open_cluster(_fresh_dag(state.ds, cfg, constraints, rng))
            state._place(int(order[pos]), k)
            pos += 1
            skip = False


def update_indicator(state: ClusterState, i: int, constraints: StructuralConstraints,
                     cfg: McmcConfig, rng: np.random.Generator) -> ClusterState:
    _scan(state, np.array([i], dtype=np.int64), constraints, cfg, rng)
    return state


def sweep_indicators(state: ClusterState, constraints: StructuralConstraints,
                     cfg: McmcConfig, rng: np.random.Generator) -> ClusterState:
    order = rng.permutation(state.n) if cfg.random_scan else np.arange(state.n)
    _scan(state, order.astype(np.int64), constraints, cfg, rng)
    return state


def alpha_mixture_weight(c: float, d: float, k: int, n: int, eta: float) -> float:
    """Weight g of the Gamma(c + K, d - log eta) component."""
    odds = (c + k - 1.0) / (n * (d - np.log(eta)))
    return odds / (1.0 + odds)


def sample_alpha_given_eta(c: float, d: float, k: int, n: int, eta: float,
                           rng: np.random.Generator, size=None):
    """Draw alpha from the two-component Gamma mixture given the auxiliary eta."""
    g = alpha_mixture_weight(c, d, k, n, eta)
    rate = d - np.log(eta)
    first = rng.random(size) < g
    shape = np.where(first, c + k, c + k - 1.0)
    draw = rng.gamma(shape, 1.0 / rate)
    return float(draw) if size is None else draw


def update_alpha(state: ClusterState, cfg: McmcConfig, rng: np.random.Generator) -> ClusterState:
    """Auxiliary-variable update with eta ~ Beta(alpha + 1, n)."""
    if cfg.fixed_alpha:
        return state
    eta = rng.beta(state.alpha + 1.0, state.n)
    eta = max(eta, np.finfo(float).tiny)
    state.alpha = sample_alpha_given_eta(cfg.c, cfg.d, state.K, state.n, eta, rng)
    return state


_DENSE_SCORE_LIMIT = 1 << 16


def _node_score(state: ClusterState, rows: np.ndarray, j: int, pa: tuple[int, ...]) -> float:
    ds = state.ds
    L = int(ds.levels[j])
    width = n_configs(pa, ds.levels) * L
    if width > _DENSE_SCORE_LIMIT:
        return log_marginal_node(ds, rows, j, pa, state.bdeu)
    if state.scratch.shape[0] < width:
        state.scratch = np.zeros(width, dtype=np.int64)
    return _kernels.family_score(ds.data, rows, j, np.array(pa, dtype=np.int64), ds.levels,
                                 float(state.bdeu.a), state.scratch)


def _operator_buffer(q: int) -> np.ndarray:
    return np.empty((3 * q * q + 1, 3), dtype=np.int64)


def update_dag(state: ClusterState, k: int, constraints: StructuralConstraints,
               cfg: McmcConfig, rng: np.random.Generator) -> bool:
    """One Metropolis-Hastings move on cluster k's DAG; True when accepted."""
    d_old = state.dags[k]
    q = d_old.q
    forb, cap = constraints.forbidden_matrix, constraints._cap
    buf = _operator_buffer(q)
    n_old = _kernels.list_operators(d_old.adjacency, forb, cap, buf)
    if n_old == 0:
        return False
    kind, u, v = (int(x) for x in buf[rng.integers(n_old)])
    adj = np.array(d_old.adjacency)
    if kind == OpKind.INSERT:
        adj[u, v] = 1
    elif kind == OpKind.DELETE:
        adj[u, v] = 0
    else:
        adj[u, v], adj[v, u] = 0, 1
    d_new = Dag(adj, check=False)
    rows = state.members(k)
    changed = (u, v) if kind == OpKind.REVERSE else (v,)
    log_r = sum(_node_score(state, rows, j, d_new.parents[j])
                - _node_score(state, rows, j, d_old.parents[j]) for j in changed)
    log_r += log_prior_ratio(d_new, d_old, cfg.dag_prior(q))
    if not cfg.approx_hastings:
        n_new = _kernels.list_operators(d_new.adjacency, forb, cap, buf)
        log_r += np.log(n_old) - np.log(n_new)
    if rng.random() < np.exp(min(log_r, 0.0)):
        state.set_dag(k, d_new)
        return True
    return False


@dataclass
class Trace:
    """Thinned post-burn-in samples.

    ``dags[r]`` is a (K_r, q, q) uint8 stack of the record's cluster DAGs and
    ``theta[r][k]`` the optional parameter draw of cluster k.
    """

    xi: np.ndarray
    K: np.ndarray
    alpha: np.ndarray
    dags: list[np.ndarray]
    levels: np.ndarray
    names: list[str] = field(default_factory=list)
    theta: list[list[ThetaDraw]] | None = None
    config: dict = field(default_factory=dict)
    iterations: np.ndarray | None = None

    @property
    def n_records(self) -> int:
        return self.xi.shape[0]

    @property
    def n(self) -> int:
        return self.xi.shape[1]

    @property
    def q(self) -> int:
        return len(self.levels)

    def dag(self, r: int, k: int) -> Dag:
        return Dag(self.dags[r][k], check=False)

    def subject_dag(self, r: int, i: int) -> Dag:
        return self.dag(r, int(self.xi[r, i]))


@dataclass
class RunStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def run_mcmc(ds: Dataset, cfg: McmcConfig, constraints: StructuralConstraints | None = None,
             rng: np.random.Generator | None = None, labels=None,
             progress: Callable[[int, ClusterState, RunStats], None] | None = None,
             progress_every: int = 0, stats: RunStats | None = None) -> Trace:
    """Run the sampler: indicator sweep, alpha, then DAG moves per iteration.

    ``labels`` fixes the starting partition (with ``cfg.fixed_partition`` it
    stays fixed, which gives the oracle baseline).
    """
    constraints = constraints or StructuralConstraints(ds.q, max_parents=cfg.max_parents)
    if cfg.max_parents is not None and constraints.max_parents is None:
        constraints = StructuralConstraints(constraints.q, constraints.forbidden, cfg.max_parents)
    rng = rng if rng is not None else make_rng(cfg.seed)
    stats = stats if stats is not None else RunStats()
    state = init_state(ds, cfg, constraints, rng, labels)
    move_partition = not (cfg.no_mixture or cfg.fixed_partition)
    xi_rec, k_rec, a_rec, dag_rec, it_rec = [], [], [], [], []
    theta_rec = [] if cfg.record_theta else None
    for it in range(1, cfg.iterations + 1):
        if move_partition:
            sweep_indicators(state, constraints, cfg, rng)
        update_alpha(state, cfg, rng)
        if not cfg.no_dag:
            for k in range(state.K):
                for _ in range(cfg.dag_moves_per_iter):
                    stats.proposed += 1
                    stats.accepted += update_dag(state, k, constraints, cfg, rng)
        if cfg.debug_recount:
            state.check()
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            xi_rec.append(state.xi.copy())
            k_rec.append(state.K)
            a_rec.append(state.alpha)
            dag_rec.append(np.stack([d.adjacency for d in state.dags]).astype(np.uint8))
            it_rec.append(it)
            if theta_rec is not None:
                theta_rec.append([sample_theta(ds, state.members(k), state.dags[k],
                                               state.bdeu, rng) for k in range(state.K)])
        if progress is not None and progress_every and it % progress_every == 0:
            progress(it, state, stats)
    return Trace(np.array(xi_rec, dtype=np.int64).reshape(-1, ds.n),
                 np.array(k_rec, dtype=np.int64), np.array(a_rec, dtype=float),
                 dag_rec, ds.levels.copy(), list(ds.names), theta_rec, cfg.to_dict(),
                 np.array(it_rec, dtype=np.int64))


def log_marginal_partition(ds: Dataset, xi, dags: list[Dag], b: BdeuParams) -> float:
    """Sum over clusters of the collapsed marginal likelihood of their rows."""
    xi = np.asarray(xi)
    total = 0.0
    for k, dag in enumerate(dags):
        rows = np.flatnonzero(xi == k)
        total += sum(log_marginal_node(ds, rows, j, dag.parents[j], b) for j in range(ds.q))
    return total
