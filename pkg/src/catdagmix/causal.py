"""Interventional effects of an exposure on a response, per DAG and averaged over a trace."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .catmodel import ThetaDraw
from .errors import InvalidInputError, TooLargeError
from .graph import Dag

ENUMERATION_LIMIT = 10_000_000


@dataclass(frozen=True)
class CausalQuery:
    y: int
    h: int
    treat_level: int = 1
    ref_level: int = 0
    success_level: int = 1

    def __post_init__(self):
        if self.y == self.h:
            raise InvalidInputError("response and exposure must differ")
        if min(self.y, self.h, self.treat_level, self.ref_level, self.success_level) < 0:
            raise InvalidInputError("node indices and levels must be non-negative")

    def validate(self, levels) -> "CausalQuery":
        q = len(levels)
        if not (self.y < q and self.h < q):
            raise InvalidInputError("query node out of range")
        if max(self.treat_level, self.ref_level) >= levels[self.h]:
            raise InvalidInputError("exposure level out of range")
        if self.success_level >= levels[self.y]:
            raise InvalidInputError("success level out of range")
        return self


def _levels(theta: ThetaDraw) -> list[int]:
    return [p.shape[1] for p in theta.probs]


def marginal(theta: ThetaDraw, d: Dag, nodes: list[int]) -> np.ndarray:
    """Joint marginal of ``nodes`` (axes in that order) by variable elimination.

    Only the ancestral set of ``nodes`` is contracted; the contraction order
    is chosen greedily by ``np.einsum``.
    """
    keep = set(nodes)
    for v in nodes:
        keep |= d.ancestors_of(v)
    operands = []
    for j in sorted(keep):
        operands.append(theta.cpt(j))
        operands.append(list(d.parents[j]) + [j])
    return np.einsum(*operands, list(nodes), optimize="greedy")


def causal_effect(theta: ThetaDraw, d: Dag, query: CausalQuery) -> float:
    """Adjustment over the exposure's parents.

    sum_s [P(y | h=treat, pa(h)=s) - P(y | h=ref, pa(h)=s)] P(pa(h)=s), with
    every probability derived from the DAG factorisation of ``theta``.
    """
    y, h = query.y, query.h
    pa_h = list(d.parents[h])
    if y in pa_h:
        return 0.0
    joint = marginal(theta, d, [h] + pa_h + [y])
    p_hs = joint.sum(axis=-1)
    hit = joint[..., query.success_level]
    cond = np.divide(hit, p_hs, out=np.zeros_like(hit), where=p_hs > 0)
    p_s = p_hs.sum(axis=0)
    return float(((cond[query.treat_level] - cond[query.ref_level]) * p_s).sum())


def post_intervention_expectation(theta: ThetaDraw, d: Dag, h: int, level: int, y: int,
                                  success_level: int = 1) -> float:
    """P(Y = success | do(X_h = level)) by summing the truncated factorisation.

    Slow reference for :func:`causal_effect`; refuses joint spaces above
    ``ENUMERATION_LIMIT`` configurations.
    """
    levels = _levels(theta)
    size = int(np.prod(levels, dtype=np.float64))
    if size > ENUMERATION_LIMIT:
        raise TooLargeError(f"{size} joint configurations; use causal_effect instead")
    if y == h:
        return float(level == success_level)
    ranges = [range(L) if j != h else (level,) for j, L in enumerate(levels)]
    total = 0.0
    for x in itertools.product(*ranges):
        if x[y] != success_level:
            continue
        p = 1.0
        for j in range(len(levels)):
            if j == h:
                continue
            s = 0
            for u in d.parents[j]:
                s = s * levels[u] + x[u]
            p *= theta.probs[j][s, x[j]]
        total += p
    return total


@dataclass
class CausalEstimate:
    """BMA effect per subject with equal-tailed interval and the raw draws."""

    query: CausalQuery
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray


class MissingThetaError(InvalidInputError):
    pass


def bma_effects(trace, query: CausalQuery, interval=(0.025, 0.975)) -> CausalEstimate:
    """Average each subject's cluster effect over the recorded draws."""
    if trace.theta is None or len(trace.theta) != trace.n_records:
        raise MissingThetaError("trace has no parameter draws; rerun with record_theta enabled")
    query.validate(trace.levels)
    draws = np.empty((trace.n_records, trace.n))
    for r in range(trace.n_records):
        if len(trace.theta[r]) != trace.K[r]:
            raise MissingThetaError(f"record {r} lacks draws for some clusters")
        per_cluster = np.array([causal_effect(trace.theta[r][k], trace.dag(r, k), query)
                                for k in range(trace.K[r])])
        draws[r] = per_cluster[trace.xi[r]]
    lo, hi = np.quantile(draws, interval, axis=0)
    return CausalEstimate(query, draws.mean(axis=0), lo, hi, draws)


def bma_battery(trace, y: int, h: int, success_level: int = 1, ref_level: int = 0,
                interval=(0.025, 0.975)) -> dict[int, CausalEstimate]:
    """One estimate per non-reference level of a polytomous exposure."""
    out = {}
    for level in range(int(trace.levels[h])):
        if level == ref_level:
            continue
        out[level] = bma_effects(trace, CausalQuery(y, h, level, ref_level, success_level),
                                 interval)
    return out
