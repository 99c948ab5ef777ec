"""Compiled inner loops.

Everything here works on plain numpy arrays so that the public modules can
keep their object-level APIs. Random numbers are never generated inside the
kernels: callers pass uniforms drawn from a ``numpy.random.Generator`` so a
seed fully determines a run.
"""

import math

import numpy as np
from numba import njit

INSERT = 0
DELETE = 1
REVERSE = 2

SWEEP_DONE = 0
SWEEP_EMPTIED = 1
SWEEP_NEW = 2


@njit(cache=True)
def _reachability(adj):
    q = adj.shape[0]
    reach = np.zeros((q, q), dtype=np.bool_)
    for u in range(q):
        for v in range(q):
            reach[u, v] = adj[u, v] != 0
    for k in range(q):
        for i in range(q):
            if reach[i, k]:
                for j in range(q):
                    if reach[k, j]:
                        reach[i, j] = True
    return reach


@njit(cache=True)
def list_operators(adj, forbidden, max_parents, out):
    """Write valid (kind, u, v) triples into ``out``; return how many.

    Ordering is kind (insert, delete, reverse), then u, then v.
    ``max_parents < 0`` disables the in-degree cap.
    """
    q = adj.shape[0]
    reach = _reachability(adj)
    indeg = np.zeros(q, dtype=np.int64)
    for u in range(q):
        for v in range(q):
            indeg[v] += adj[u, v]
    cap = max_parents if max_parents >= 0 else q
    count = 0
    for u in range(q):
        for v in range(q):
            if u == v or adj[u, v] != 0 or adj[v, u] != 0:
                continue
            if forbidden[u, v] or reach[v, u] or indeg[v] >= cap:
                continue
            out[count, 0] = INSERT
            out[count, 1] = u
            out[count, 2] = v
            count += 1
    for u in range(q):
        for v in range(q):
            if adj[u, v] != 0:
                out[count, 0] = DELETE
                out[count, 1] = u
                out[count, 2] = v
                count += 1
    for u in range(q):
        for v in range(q):
            if adj[u, v] == 0 or forbidden[v, u] or indeg[u] >= cap:
                continue
            # reversal closes a cycle iff u reaches v through another child
            blocked = False
            for w in range(q):
                if w != v and adj[u, w] != 0 and reach[w, v]:
                    blocked = True
                    break
            if blocked:
                continue
            out[count, 0] = REVERSE
            out[count, 1] = u
            out[count, 2] = v
            count += 1
    return count


@njit(cache=True)
def baseline_chain(adj, forbidden, max_parents, a_w, b_w, uniforms, approx):
    """Metropolis chain on the skeleton-size prior, one move per uniform pair."""
    q = adj.shape[0]
    m_max = q * (q - 1) / 2.0
    cur = adj.copy()
    buf = np.empty((3 * q * q + 1, 3), dtype=np.int64)
    buf_new = np.empty((3 * q * q + 1, 3), dtype=np.int64)
    edges = 0
    for u in range(q):
        for v in range(q):
            edges += cur[u, v]
    n_cur = list_operators(cur, forbidden, max_parents, buf)
    for t in range(uniforms.shape[0]):
        if n_cur == 0:
            break
        idx = int(uniforms[t, 0] * n_cur)
        if idx >= n_cur:
            idx = n_cur - 1
        kind = buf[idx, 0]
        u = buf[idx, 1]
        v = buf[idx, 2]
        new = cur.copy()
        if kind == INSERT:
            new[u, v] = 1
            log_r = np.log((edges + a_w) / (m_max - edges - 1.0 + b_w))
            edges_new = edges + 1
        elif kind == DELETE:
            new[u, v] = 0
            log_r = -np.log((edges - 1.0 + a_w) / (m_max - edges + b_w))
            edges_new = edges - 1
        else:
            new[u, v] = 0
            new[v, u] = 1
            log_r = 0.0
            edges_new = edges
        n_new = list_operators(new, forbidden, max_parents, buf_new)
        if not approx:
            log_r += np.log(n_cur) - np.log(n_new)
        if uniforms[t, 1] < np.exp(log_r):
            cur = new
            edges = edges_new
            n_cur = n_new
            buf, buf_new = buf_new, buf
    return cur


@njit(cache=True)
def family_score(data, rows, j, pa, levels, a, table):
    """BDEu log marginal of node j with parents ``pa`` over ``rows``.

    ``table`` is scratch space of at least |X_pa| * |X_j| entries.
    """
    L = levels[j]
    card = 1
    for u in pa:
        card *= levels[u]
    width = card * L
    table[:width] = 0
    for r in rows:
        s = 0
        for u in pa:
            s = s * levels[u] + data[r, u]
        table[s * L + data[r, j]] += 1
    a_pa = a / card
    a_fa = a_pa / L
    lg_pa = math.lgamma(a_pa)
    lg_fa = math.lgamma(a_fa)
    total = 0.0
    for s in range(card):
        m = 0
        for l in range(L):
            c = table[s * L + l]
            if c:
                total += math.lgamma(a_fa + c) - lg_fa
                m += c
        if m:
            total += lg_pa - math.lgamma(a_pa + m)
    return total


@njit(cache=True)
def row_log_weights(x, k_count, sizes, cfg_row, levels, off, moff, cells,
                    margins, apa, afa, log_alpha, log_empty, out):
    """Unnormalised log assignment weights of one row; row must be unassigned.

    ``cfg_row[k, j]`` is the row's parent-configuration slot in cluster k.
    Entry ``k_count`` of ``out`` holds the new-cluster weight.
    """
    q = x.shape[0]
    for k in range(k_count):
        lw = np.log(sizes[k])
        for j in range(q):
            s = cfg_row[k, j]
            nf = cells[k, off[k, j] + s * levels[j] + x[j]]
            npa = margins[k, moff[k, j] + s]
            lw += np.log(afa[k, j] + nf) - np.log(apa[k, j] + npa)
        out[k] = lw
    out[k_count] = log_alpha + log_empty


@njit(cache=True)
def _shift(row, c, cfg, levels, off, moff, cells, margins, delta):
    q = row.shape[0]
    for j in range(q):
        s = cfg[c, j]
        cells[c, off[c, j] + s * levels[j] + row[j]] += delta
        margins[c, moff[c, j] + s] += delta


@njit(cache=True)
def sweep(data, levels, xi, sizes, k_count, cfg, off, moff, cells, margins,
          apa, afa, log_alpha, log_empty, order, start, uniforms, skip_remove):
    """Gibbs scan over ``order[start:]`` for the cluster indicators.

    ``cfg`` has shape (capacity, n, q). Returns ``(position, event)``; the
    caller handles SWEEP_EMPTIED (compact labels, resume with skip_remove)
    and SWEEP_NEW (open a cluster for the row, resume at position + 1).
    """
    n_pos = order.shape[0]
    for p in range(start, n_pos):
        i = order[p]
        row = data[i]
        if not (skip_remove and p == start):
            c = xi[i]
            _shift(row, c, cfg[:, i, :], levels, off, moff, cells, margins, -1)
            sizes[c] -= 1
            xi[i] = -1
            if sizes[c] == 0:
                return p, SWEEP_EMPTIED
        w = np.empty(k_count + 1)
        row_log_weights(row, k_count, sizes, cfg[:, i, :], levels, off, moff,
                        cells, margins, apa, afa, log_alpha, log_empty, w)
        top = w.max()
        total = 0.0
        for k in range(k_count + 1):
            w[k] = np.exp(w[k] - top)
            total += w[k]
        target = uniforms[p] * total
        chosen = k_count
        acc = 0.0
        for k in range(k_count + 1):
            acc += w[k]
            if target < acc:
                chosen = k
                break
        if chosen == k_count:
            return p, SWEEP_NEW
        _shift(row, chosen, cfg[:, i, :], levels, off, moff, cells, margins, 1)
        sizes[chosen] += 1
        xi[i] = chosen
    return n_pos, SWEEP_DONE
