"""Synthetic mixtures of discretised Gaussian DAG models and the benchmark loop."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

from .catmodel import Dataset
from .dpmix import McmcConfig, run_mcmc
from .errors import InvalidInputError
from .graph import Dag, StructuralConstraints, shd
from .summaries import (point_clustering_minvi, point_dag, ppi_all, similarity,
                        variation_of_information)

MODES = ("mixture", "no_dag", "no_mixture", "oracle")


@dataclass(frozen=True)
class SynthConfig:
    q: int = 10
    n_clusters: int = 2
    n_per_cluster: int = 100
    edge_prob: float = 0.2
    alpha_q: float = 0.1
    replicates: int = 40
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.edge_prob < 1:
            raise InvalidInputError("edge_prob must lie in (0, 1)")
        if not 0 < self.alpha_q < 0.5:
            raise InvalidInputError("alpha_q must lie in (0, 0.5)")
        if self.q < 1 or self.n_clusters < 1 or self.n_per_cluster < 1 or self.replicates < 1:
            raise InvalidInputError("sizes must be positive")


@dataclass
class SynthOutput:
    dataset: Dataset
    labels: np.ndarray
    dags: list[Dag]
    thresholds: np.ndarray   # (K, q)
    weights: list[np.ndarray]  # unit-diagonal L matrices, one per cluster


def random_dag(q: int, edge_prob: float, rng: np.random.Generator) -> Dag:
    """Bernoulli edges between node pairs, oriented along a random node order."""
    order = rng.permutation(q)
    adj = np.zeros((q, q), dtype=np.uint8)
    iu, ju = np.triu_indices(q, k=1)
    keep = rng.random(len(iu)) < edge_prob
    adj[order[iu[keep]], order[ju[keep]]] = 1
    return Dag(adj, check=False)


def draw_cholesky_factor(d: Dag, rng: np.random.Generator) -> np.ndarray:
    """Unit-diagonal L with entries of magnitude U[1, 2] and random sign on edges."""
    q = d.q
    mag = rng.uniform(1.0, 2.0, size=(q, q))
    sign = np.where(rng.random((q, q)) < 0.5, -1.0, 1.0)
    L = np.where(d.adjacency == 1, mag * sign, 0.0)
    np.fill_diagonal(L, 1.0)
    return L


def latent_covariance(L: np.ndarray) -> np.ndarray:
    """Sigma = L^{-T} L^{-1} (unit innovation variances)."""
    inv = np.linalg.inv(L)
    return inv.T @ inv


def gaussian_latents(d: Dag, n: int, rng: np.random.Generator,
                     L: np.ndarray | None = None) -> np.ndarray:
    """Rows z with z L = e, e standard normal.

    Equivalently z_v = e_v - sum_{u in pa(v)} L[u, v] z_u, so the rows are
    N(0, L^{-T} L^{-1}).
    """
    if L is None:
        L = draw_cholesky_factor(d, rng)
    eps = rng.standard_normal((n, d.q))
    return np.linalg.solve(L.T, eps.T).T


def discretize(z: np.ndarray, alpha_q: float, rng: np.random.Generator):
    """Binary cut of each column at a uniform point between two empirical quantiles."""
    if not 0 < alpha_q < 0.5:
        raise InvalidInputError("alpha_q must lie in (0, 0.5)")
    lo, hi = np.quantile(z, [alpha_q, 1 - alpha_q], axis=0)
    g = rng.uniform(lo, hi)
    return (z >= g).astype(np.int64), g


def simulate(cfg: SynthConfig, rng: np.random.Generator) -> SynthOutput:
    blocks, labels, dags, thresholds, weights = [], [], [], [], []
    for k in range(cfg.n_clusters):
        d = random_dag(cfg.q, cfg.edge_prob, rng)
        L = draw_cholesky_factor(d, rng)
        x, g = discretize(gaussian_latents(d, cfg.n_per_cluster, rng, L), cfg.alpha_q, rng)
        blocks.append(x)
        labels.append(np.full(cfg.n_per_cluster, k))
        dags.append(d)
        thresholds.append(g)
        weights.append(L)
    data = np.vstack(blocks)
    ds = Dataset(data, np.full(cfg.q, 2), [f"X{j + 1}" for j in range(cfg.q)])
    return SynthOutput(ds, np.concatenate(labels), dags, np.array(thresholds), weights)


def write_replicate(out: SynthOutput, path) -> None:
    """data.csv, labels.csv, dag_k<k>.edgelist and thresholds.csv in ``path``."""
    os.makedirs(path, exist_ok=True)
    ds = out.dataset
    with open(os.path.join(path, "data.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ds.names)
        w.writerows(ds.data.tolist())
    with open(os.path.join(path, "labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "label"])
        w.writerows((i + 1, int(c) + 1) for i, c in enumerate(out.labels))
    for k, d in enumerate(out.dags):
        with open(os.path.join(path, f"dag_k{k + 1}.edgelist"), "w") as fh:
            fh.writelines(f"{u} {v}\n" for u, v in d.edges())
    with open(os.path.join(path, "thresholds.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster"] + ds.names)
        for k, g in enumerate(out.thresholds):
            w.writerow([k + 1] + [repr(float(v)) for v in g])


class BenchmarkRow(NamedTuple):
    replicate: int
    mode: str
    metric: str
    value: float


def subject_shd(trace, true_dags: list[Dag], labels: np.ndarray, z: float = 0.5) -> np.ndarray:
    """SHD between each subject's thresholded PPI graph and its true cluster DAG."""
    p = ppi_all(trace)
    flat = p.reshape(p.shape[0], -1)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    point = [point_dag(row.reshape(trace.q, trace.q), z) for row in uniq]
    return np.array([shd(point[inv[i]], true_dags[labels[i]]) for i in range(len(labels))])


def _score_mode(mode: str, sim: SynthOutput, mcfg: McmcConfig, rng) -> list[tuple[str, float]]:
    ds, truth = sim.dataset, sim.labels
    q = ds.q
    constraints = StructuralConstraints.none(q)
    if mode == "mixture":
        trace = run_mcmc(ds, mcfg, constraints, rng)
    elif mode == "no_dag":
        trace = run_mcmc(ds, replace(mcfg, no_dag=True), constraints, rng)
    elif mode == "no_mixture":
        trace = run_mcmc(ds, replace(mcfg, no_mixture=True), constraints, rng)
    elif mode == "oracle":
        trace = run_mcmc(ds, replace(mcfg, fixed_partition=True), constraints, rng, labels=truth)
    else:
        raise InvalidInputError(f"unknown mode {mode!r}")
    metrics = []
    if mode != "oracle":
        c_hat = point_clustering_minvi(similarity(trace), trace)
        metrics.append(("vi", variation_of_information(c_hat, truth)))
        metrics.append(("n_clusters", float(c_hat.max() + 1)))
    if mode != "no_dag":
        metrics.append(("shd", float(subject_shd(trace, sim.dags, truth).mean())))
    return metrics


def _run_replicate(args) -> list[BenchmarkRow]:
    r, cfg, mcfg, modes, seq, export_dir = args
    data_seq, *mode_seqs = seq.spawn(1 + len(modes))
    sim = simulate(cfg, np.random.default_rng(data_seq))
    if export_dir is not None:
        write_replicate(sim, os.path.join(export_dir, f"rep{r + 1:03d}"))
    rows = []
    for mode, ms in zip(modes, mode_seqs):
        for metric, value in _score_mode(mode, sim, mcfg, np.random.default_rng(ms)):
            rows.append(BenchmarkRow(r + 1, mode, metric, value))
    return rows


def benchmark_run(cfg: SynthConfig, mcfg: McmcConfig, modes: Iterable[str] = MODES,
                  export_dir=None, workers: int = 1) -> list[BenchmarkRow]:
    """Generate ``cfg.replicates`` datasets and score each requested mode on them.

    Replicate r always uses the r-th child of ``SeedSequence(cfg.seed)``, so
    results do not depend on ``workers``.
    """
    modes = tuple(modes)
    for m in modes:
        if m not in MODES:
            raise InvalidInputError(f"unknown mode {m!r}; choose from {MODES}")
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    jobs = [(r, cfg, mcfg, modes, seqs[r], export_dir) for r in range(cfg.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_run_replicate, jobs))
    else:
        chunks = [_run_replicate(job) for job in jobs]
    return [row for chunk in chunks for row in chunk]


def write_results(rows: Iterable[BenchmarkRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BenchmarkRow._fields)
        w.writerows((r.replicate, r.mode, r.metric, repr(float(r.value))) for r in rows)
