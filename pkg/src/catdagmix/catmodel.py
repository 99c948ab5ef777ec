"""Categorical DAG model: counts, BDEu marginal likelihood, predictives, posterior draws.

Pseudo-counts follow the BDEu default: each cell of the table of node j gets
``a / |X_fa(j)|`` and each parent configuration ``a / |X_pa(j)|``, where the
cardinalities are products of level counts (1 for an empty parent set).
Parent configurations are indexed in row-major order of the sorted parent
list, so the last parent varies fastest.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import InvalidInputError, InvariantError
from .graph import Dag


@dataclass(frozen=True)
class BdeuParams:
    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidInputError("equivalent sample size a must be positive")


@dataclass
class Dataset:
    """Integer-coded categorical table with per-column level counts."""

    data: np.ndarray
    levels: np.ndarray
    names: list[str] = field(default_factory=list)
    level_labels: list[list[str]] | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.int64)
        if self.data.ndim != 2:
            raise InvalidInputError("data must be a 2-d array")
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.levels.shape != (self.q,):
            raise InvalidInputError("levels must have one entry per column")
        if np.any(self.levels < 1):
            raise InvalidInputError("every variable needs at least one level")
        if self.n and (np.any(self.data < 0) or np.any(self.data >= self.levels)):
            raise InvalidInputError("cell value outside its variable's level range")
        if not self.names:
            self.names = [f"X{j}" for j in range(self.q)]
        if len(set(self.names)) != len(self.names) or len(self.names) != self.q:
            raise InvalidInputError("column names must be unique, one per column")

    @classmethod
    def from_array(cls, data, levels=None, names=None) -> "Dataset":
        data = np.asarray(data, dtype=np.int64)
        if levels is None:
            levels = np.maximum(data.max(axis=0) + 1, 2) if len(data) else np.full(data.shape[1], 2)
        return cls(data, levels, list(names or []))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def q(self) -> int:
        return self.data.shape[1]


def read_dataset(path) -> Dataset:
    """Load a CSV with a header row.

    Columns whose cells all parse as non-negative integers are taken as codes
    with ``max + 1`` levels; other columns are mapped to codes in order of
    first appearance. Single-valued columns are kept with a warning.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    q = len(header)
    for lineno, row in enumerate(body, 2):
        if len(row) != q:
            raise InvalidInputError(f"{path}:{lineno}: expected {q} fields, got {len(row)}")
        if any(cell.strip() == "" for cell in row):
            raise InvalidInputError(f"{path}:{lineno}: missing value")
    data = np.zeros((len(body), q), dtype=np.int64)
    levels = np.zeros(q, dtype=np.int64)
    labels: list[list[str]] = []
    for j in range(q):
        col = [row[j].strip() for row in body]
        if col and all(c.isdigit() for c in col):
            codes = np.array([int(c) for c in col], dtype=np.int64)
            levels[j] = codes.max() + 1
            labels.append([str(m) for m in range(levels[j])])
        else:
            mapping: dict[str, int] = {}
            codes = np.array([mapping.setdefault(c, len(mapping)) for c in col], dtype=np.int64)
            levels[j] = max(len(mapping), 1)
            labels.append(list(mapping))
        data[:, j] = codes
        if len(np.unique(codes)) < 2:
            warnings.warn(f"column {header[j]!r} takes a single value; kept with "
                          f"{levels[j]} level(s)", stacklevel=2)
    return Dataset(data, levels, header, labels)


def config_index(data: np.ndarray, pa: Sequence[int], levels: np.ndarray) -> np.ndarray:
    """Row-major parent-configuration index of every row of ``data``."""
    idx = np.zeros(data.shape[0], dtype=np.int64)
    for u in pa:
        idx = idx * levels[u] + data[:, u]
    return idx


def n_configs(pa: Sequence[int], levels: np.ndarray) -> int:
    out = 1
    for u in pa:
        out *= int(levels[u])
    return out


@dataclass
class FamilyCounts:
    """Counts of (parent configuration, child level) for one node over some rows.

    Only observed configurations are stored: ``configs`` is sorted and
    ``table[r]`` holds the child-level counts of configuration ``configs[r]``.
    """

    j: int
    pa: tuple[int, ...]
    child_levels: int
    parent_levels: tuple[int, ...]
    configs: np.ndarray
    table: np.ndarray

    @property
    def parent_card(self) -> int:
        return int(np.prod(self.parent_levels, dtype=np.int64))

    def config_of(self, x) -> int:
        s = 0
        for u, L in zip(self.pa, self.parent_levels):
            s = s * L + int(x[u])
        return s

    @property
    def margins(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.table.sum())

    def _slot(self, s: int) -> int:
        r = int(np.searchsorted(self.configs, s))
        return r if r < len(self.configs) and self.configs[r] == s else -1

    def count(self, s: int, m: int) -> int:
        r = self._slot(s)
        return 0 if r < 0 else int(self.table[r, m])

    def margin(self, s: int) -> int:
        r = self._slot(s)
        return 0 if r < 0 else int(self.table[r].sum())

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {(int(s), m): int(c) for s, row in zip(self.configs, self.table)
                for m, c in enumerate(row) if c}


def count_family(ds: Dataset, rows, j: int, pa: Sequence[int]) -> FamilyCounts:
    pa = tuple(sorted(int(u) for u in pa))
    if j in pa:
        raise InvalidInputError("a node cannot be its own parent")
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    L = int(ds.levels[j])
    sub = ds.data[rows]
    cfg = config_index(sub, pa, ds.levels)
    configs, inverse = np.unique(cfg, return_inverse=True)
    table = np.zeros((len(configs), L), dtype=np.int64)
    np.add.at(table, (inverse.reshape(-1), sub[:, j]), 1)
    return FamilyCounts(j, pa, L, tuple(int(ds.levels[u]) for u in pa), configs, table)


def _pseudo_counts(fc: FamilyCounts, b: BdeuParams) -> tuple[float, float]:
    a_pa = b.a / fc.parent_card
    return a_pa, a_pa / fc.child_levels


def log_marginal_counts(fc: FamilyCounts, b: BdeuParams) -> float:
    """Log marginal likelihood of one node from its family counts."""
    if fc.table.size == 0:
        return 0.0
    a_pa, a_fa = _pseudo_counts(fc, b)
    margins = fc.margins
    val = (len(margins) * gammaln(a_pa) - gammaln(a_pa + margins).sum()
           + (gammaln(a_fa + fc.table) - gammaln(a_fa)).sum())
    return float(val)


def log_marginal_node(ds: Dataset, rows, j: int, pa: Sequence[int], b: BdeuParams) -> float:
    return log_marginal_counts(count_family(ds, rows, j, pa), b)


def log_marginal_dag(ds: Dataset, rows, d: Dag, b: BdeuParams) -> float:
    if d.q != ds.q:
        raise InvalidInputError("DAG and dataset disagree on q")
    return sum(log_marginal_node(ds, rows, j, d.parents[j], b) for j in range(ds.q))


def log_posterior_predictive(x_i, counts: Sequence[FamilyCounts], i_in_cluster: bool,
                             d: Dag, b: BdeuParams) -> float:
    """Log predictive of row ``x_i`` given a cluster's other rows.

    ``counts[j]`` must be the family counts of node j under ``d``; when
    ``i_in_cluster`` they include the row itself, which is discounted.
    """
    x_i = np.asarray(x_i)
    drop = 1 if i_in_cluster else 0
    total = 0.0
    for j, fc in enumerate(counts):
        if fc.pa != d.parents[j]:
            raise InvalidInputError(f"counts for node {j} use a different parent set")
        a_pa, a_fa = _pseudo_counts(fc, b)
        s = fc.config_of(x_i)
        n_fa = fc.count(s, int(x_i[j])) - drop
        n_pa = fc.margin(s) - drop
        if n_fa < 0 or n_pa < 0:
            raise InvariantError(f"negative effective count at node {j}")
        total += np.log(a_fa + n_fa) - np.log(a_pa + n_pa)
    return float(total)


def log_prior_predictive_empty(x_i, ds: Dataset) -> float:
    """Log predictive of a row in an empty cluster: -sum_j log |X_j|."""
    return float(-np.log(ds.levels.astype(float)).sum())


@dataclass
class ThetaDraw:
    """Conditional probability tables; ``probs[j]`` has shape (|X_pa(j)|, |X_j|)."""

    parents: tuple[tuple[int, ...], ...]
    probs: list[np.ndarray]

    def cpt(self, j: int) -> np.ndarray:
        """Table of node j reshaped to (levels of parents..., levels of j)."""
        return self.probs[j].reshape(tuple(self.probs[p].shape[1] for p in self.parents[j])
                                     + (self.probs[j].shape[1],))


def _log_gamma_variates(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Gamma(k) = Gamma(k + 1) * U**(1/k), kept in log space for tiny k
    g = rng.standard_gamma(shape + 1.0)
    u = rng.random(shape.shape)
    return np.log(g) + np.log(u) / shape


def sample_theta(ds: Dataset, rows, d: Dag, b: BdeuParams,
                 rng: np.random.Generator) -> ThetaDraw:
    """Draw every conditional table from its Dirichlet posterior."""
    probs = []
    for j in range(ds.q):
        fc = count_family(ds, rows, j, d.parents[j])
        _, a_fa = _pseudo_counts(fc, b)
        conc = np.full((fc.parent_card, fc.child_levels), a_fa)
        conc[fc.configs] += fc.table
        logs = _log_gamma_variates(conc, rng)
        logs -= logs.max(axis=1, keepdims=True)
        p = np.exp(logs)
        p /= p.sum(axis=1, keepdims=True)
        probs.append(p)
    return ThetaDraw(tuple(d.parents), probs)
