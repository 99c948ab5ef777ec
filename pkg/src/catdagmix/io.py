"""On-disk formats: trace directories, partitions, matrices and edge lists.

A trace directory holds

* ``meta.json``: config echo, dataset fingerprint, variable names, level maps
  and the theta layout;
* ``xi.csv`` (records x n, labels 1..K), ``K.csv``, ``alpha.csv``;
* ``dags/rec<t>_k<k>.edgelist``: one ``u v`` line per edge, nodes 0-based as
  in constraint files;
* optionally ``theta/rec<t>_k<k>.bin``: float64 little endian, node by node,
  parent configuration in row-major order of the sorted parents (last parent
  fastest), then the probability vector over the child's levels.

Records t and clusters k are 1-based in file names.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .catmodel import Dataset, ThetaDraw, n_configs
from .dpmix import Trace
from .errors import InvalidInputError
from .graph import Dag

FORMAT_VERSION = 1
THETA_LAYOUT = ("float64 little endian; for each node j in order, for each parent "
                "configuration s (row-major over sorted parents, last fastest), "
                "the probabilities of levels 0..L_j-1")


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.data, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(ds.levels, dtype="<i8").tobytes())
    h.update("\x1f".join(ds.names).encode())
    return h.hexdigest()


def write_edgelist(d: Dag | np.ndarray, path) -> None:
    adj = d.adjacency if isinstance(d, Dag) else np.asarray(d)
    with open(path, "w") as fh:
        for u, v in zip(*np.nonzero(adj)):
            fh.write(f"{u} {v}\n")


def read_edgelist(path, q: int) -> np.ndarray:
    adj = np.zeros((q, q), dtype=np.uint8)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                u, v = (int(p) for p in parts)
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: expected two node indices") from None
            if not (0 <= u < q and 0 <= v < q) or u == v:
                raise InvalidInputError(f"{path}:{lineno}: bad edge {line!r}")
            adj[u, v] = 1
    return adj


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        w.writerows(rows)


def _read_rows(path) -> list[list[str]]:
    if not os.path.exists(path):
        raise InvalidInputError(f"trace component missing: {path}")
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _theta_bytes(t: ThetaDraw) -> bytes:
    return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in t.probs)


def _theta_from_bytes(raw: bytes, parents, levels) -> ThetaDraw:
    flat = np.frombuffer(raw, dtype="<f8")
    probs, pos = [], 0
    for j, pa in enumerate(parents):
        rows, L = n_configs(pa, levels), int(levels[j])
        probs.append(flat[pos:pos + rows * L].reshape(rows, L).astype(float))
        pos += rows * L
    if pos != len(flat):
        raise InvalidInputError("theta blob size does not match the DAG")
    return ThetaDraw(tuple(tuple(p) for p in parents), probs)


def save_trace(trace: Trace, path, ds: Dataset | None = None) -> None:
    """Write ``trace`` under directory ``path`` (created if needed)."""
    os.makedirs(os.path.join(path, "dags"), exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "software_version": __version__,
        "config": trace.config,
        "n_records": trace.n_records,
        "n": trace.n,
        "q": trace.q,
        "names": list(trace.names),
        "levels": [int(v) for v in trace.levels],
        "level_labels": ds.level_labels if ds is not None else None,
        "dataset_sha256": dataset_fingerprint(ds) if ds is not None else None,
        "iterations": None if trace.iterations is None else [int(v) for v in trace.iterations],
        "theta": trace.theta is not None,
        "theta_layout": THETA_LAYOUT,
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_rows(os.path.join(path, "xi.csv"), None, (trace.xi + 1).tolist())
    _write_rows(os.path.join(path, "K.csv"), ["K"], ([int(k)] for k in trace.K))
    _write_rows(os.path.join(path, "alpha.csv"), ["alpha"], ([repr(float(a))] for a in trace.alpha))
    for r, stack in enumerate(trace.dags):
        for k, adj in enumerate(stack):
            write_edgelist(adj, os.path.join(path, "dags", f"rec{r + 1}_k{k + 1}.edgelist"))
    if trace.theta is not None:
        os.makedirs(os.path.join(path, "theta"), exist_ok=True)
        for r, draws in enumerate(trace.theta):
            for k, t in enumerate(draws):
                with open(os.path.join(path, "theta", f"rec{r + 1}_k{k + 1}.bin"), "wb") as fh:
                    fh.write(_theta_bytes(t))


def load_trace(path) -> Trace:
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise InvalidInputError(f"not a trace directory (no meta.json): {path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    n, q, R = meta["n"], meta["q"], meta["n_records"]
    levels = np.array(meta["levels"], dtype=np.int64)
    rows = _read_rows(os.path.join(path, "xi.csv"))
    xi = np.array(rows, dtype=np.int64).reshape(R, n) - 1 if R else np.zeros((0, n), np.int64)
    K = np.array([int(r[0]) for r in _read_rows(os.path.join(path, "K.csv"))[1:]], dtype=np.int64)
    alpha = np.array([float(r[0]) for r in _read_rows(os.path.join(path, "alpha.csv"))[1:]])
    if len(K) != R or len(alpha) != R:
        raise InvalidInputError(f"{path}: record counts disagree across files")
    dags = []
    for r in range(R):
        stack = np.zeros((K[r], q, q), dtype=np.uint8)
        for k in range(K[r]):
            f = os.path.join(path, "dags", f"rec{r + 1}_k{k + 1}.edgelist")
            if not os.path.exists(f):
                raise InvalidInputError(f"trace component missing: {f}")
            stack[k] = read_edgelist(f, q)
        dags.append(stack)
    theta = None
    if meta.get("theta"):
        theta = []
        for r in range(R):
            draws = []
            for k in range(K[r]):
                f = os.path.join(path, "theta", f"rec{r + 1}_k{k + 1}.bin")
                if not os.path.exists(f):
                    raise InvalidInputError(f"trace component missing: {f}")
                parents = Dag(dags[r][k], check=False).parents
                with open(f, "rb") as fh:
                    draws.append(_theta_from_bytes(fh.read(), parents, levels))
            theta.append(draws)
    its = meta.get("iterations")
    return Trace(xi, K, alpha, dags, levels, list(meta["names"]), theta, meta["config"],
                 None if its is None else np.array(its, dtype=np.int64))


def pool_traces(traces: Sequence[Trace]) -> Trace:
    """Concatenate the records of several chains on the same data."""
    if not traces:
        raise InvalidInputError("nothing to pool")
    first = traces[0]
    for t in traces[1:]:
        if t.n != first.n or not np.array_equal(t.levels, first.levels):
            raise InvalidInputError("chains were run on different data")
    theta = None
    if all(t.theta is not None for t in traces):
        theta = [d for t in traces for d in t.theta]
    return Trace(np.concatenate([t.xi for t in traces]), np.concatenate([t.K for t in traces]),
                 np.concatenate([t.alpha for t in traces]), [d for t in traces for d in t.dags],
                 first.levels.copy(), list(first.names), theta, dict(first.config), None)


def write_partition(labels, path, subjects: Iterable | None = None) -> None:
    labels = np.asarray(labels)
    subjects = list(subjects) if subjects is not None else range(1, len(labels) + 1)
    _write_rows(path, ["subject", "label"], ((s, int(c) + 1) for s, c in zip(subjects, labels)))


def read_partition(path) -> np.ndarray:
    rows = _read_rows(path)[1:]
    return np.array([int(r[1]) - 1 for r in rows], dtype=np.int64)


def write_matrix(m: np.ndarray, path, row_names, col_names=None) -> None:
    col_names = row_names if col_names is None else col_names
    _write_rows(path, [""] + list(col_names),
                ([name] + [repr(float(v)) for v in row] for name, row in zip(row_names, m)))


def read_matrix(path) -> np.ndarray:
    rows = _read_rows(path)[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])
