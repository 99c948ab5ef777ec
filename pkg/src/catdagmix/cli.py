"""Command-line front end: ``catdagmix {fit,summarize,causal,simulate,benchmark}``.

Settings come from a flat ``key = value`` file (``#`` starts a comment) and
from flags of the same names; a flag beats the file, which beats the default.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import typing
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .catmodel import Dataset, read_dataset
from .causal import CausalQuery, MissingThetaError, bma_battery, bma_effects
from .dpmix import McmcConfig, RunStats, make_rng, run_mcmc
from .errors import InvalidInputError, InvariantError
from .graph import StructuralConstraints, read_constraints
from .io import (dataset_fingerprint, load_trace, pool_traces, save_trace, write_matrix,
                 write_partition)
from .summaries import (point_clustering_minvi, point_clustering_threshold, point_dag,
                        ppi_all, similarity)
from .synth import MODES, SynthConfig, benchmark_run, simulate, write_replicate

EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 2, 3, 4

DEFAULT_GRID_N = (100, 200, 500)
DEFAULT_GRID_ALPHA = (0.1, 0.4)


class ConfigError(InvalidInputError):
    pass


class DataError(InvalidInputError):
    pass


# ---------------------------------------------------------------- config files

def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    out = {}
    for f in dataclasses.fields(cls):
        t = hints[f.name]
        args = [a for a in typing.get_args(t) if a is not type(None)]
        out[f.name] = args[0] if args else t
    return out


def _coerce(raw: str, typ: type, where: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from None
    return raw


def read_config(path, allowed: dict[str, type]) -> dict:
    """Parse ``key = value`` lines into typed values, rejecting unknown keys."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(raw, allowed[key], f"{path}:{lineno}")
    return out


def _add_fields(parser: argparse.ArgumentParser, types: dict[str, type], skip=()):
    for name, typ in types.items():
        if name in skip:
            continue
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction,
                                default=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, dest=name, default=argparse.SUPPRESS,
                                type=lambda s, t=typ, n=name: _coerce(s, t, f"--{n}"))


def resolve(cls, args: argparse.Namespace, file_values: dict, **extra):
    """Build ``cls`` with precedence flag > file > default."""
    names = {f.name for f in dataclasses.fields(cls)}
    values = {k: v for k, v in file_values.items() if k in names}
    values.update({k: v for k, v in vars(args).items() if k in names})
    values.update(extra)
    try:
        return cls(**values)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None


def _load_file(args, types) -> dict:
    return read_config(args.config, types) if getattr(args, "config", None) else {}


# ---------------------------------------------------------------- fit

def _progress_printer(chain: int):
    def report(it, state, stats: RunStats):
        print(f"[chain {chain + 1}] iter {it} K={state.K} alpha={state.alpha:.4g} "
              f"accept={stats.acceptance_rate:.3f}", file=sys.stderr, flush=True)
    return report


def _run_chain(job):
    ds, cfg, constraints, chain, out, every = job
    t0 = time.perf_counter()
    stats = RunStats()
    trace = run_mcmc(ds, cfg, constraints, make_rng(cfg.seed, chain),
                     progress=_progress_printer(chain), progress_every=every, stats=stats)
    save_trace(trace, out, ds)
    return {"chain": chain + 1, "trace": os.path.basename(out),
            "wall_clock_seconds": time.perf_counter() - t0,
            "dag_acceptance_rate": stats.acceptance_rate if stats.proposed else None}


def _read_data(path) -> Dataset:
    try:
        return read_dataset(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    except InvalidInputError as exc:
        raise DataError(str(exc)) from None


def cmd_fit(args) -> int:
    types = _field_types(McmcConfig)
    cfg = resolve(McmcConfig, args, _load_file(args, types))
    ds = _read_data(args.data)
    if args.constraints:
        try:
            constraints = read_constraints(args.constraints, ds.q, ds.names, cfg.max_parents)
        except OSError as exc:
            raise DataError(f"{args.constraints}: {exc.strerror}") from None
        except InvalidInputError as exc:
            raise DataError(str(exc)) from None
    else:
        constraints = StructuralConstraints(ds.q, max_parents=cfg.max_parents)
    if args.chains < 1:
        raise ConfigError("--chains must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    dirs = ([os.path.join(args.out, "trace")] if args.chains == 1 else
            [os.path.join(args.out, f"trace{c + 1}") for c in range(args.chains)])
    jobs = [(ds, cfg, constraints, c, d, args.progress_every) for c, d in enumerate(dirs)]
    t0 = time.perf_counter()
    if args.chains > 1 and args.workers > 1:
        with ProcessPoolExecutor(min(args.workers, args.chains)) as pool:
            chains = list(pool.map(_run_chain, jobs))
    else:
        chains = [_run_chain(j) for j in jobs]
    manifest = {
        "software_version": __version__,
        "command": "fit",
        "data": os.path.abspath(args.data),
        "constraints": os.path.abspath(args.constraints) if args.constraints else None,
        "dataset_sha256": dataset_fingerprint(ds),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "chains": chains,
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(dirs)} trace(s) under {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- summarize

def _load_traces(paths, pool: bool):
    try:
        traces = [load_trace(p) for p in paths]
    except InvalidInputError as exc:
        raise DataError(str(exc)) from None
    if len(traces) > 1 and not pool:
        raise ConfigError("several traces given; pass --pool to combine them")
    return pool_traces(traces) if len(traces) > 1 else traces[0]


def summarize(trace, minvi: bool = False, threshold: float = 0.5, edge_threshold: float = 0.5):
    """In-memory versions of everything ``summarize`` writes."""
    s = similarity(trace)
    part = point_clustering_minvi(s, trace) if minvi else point_clustering_threshold(s, threshold)
    p = ppi_all(trace)
    dags = [point_dag(p[i], edge_threshold) for i in range(trace.n)]
    return s, part, p, dags


def cmd_summarize(args) -> int:
    trace = _load_traces(args.trace, args.pool)
    if trace.n_records == 0:
        raise DataError("trace has no records")
    s, part, p, dags = summarize(trace, args.minvi, args.threshold, args.edge_threshold)
    os.makedirs(args.out, exist_ok=True)
    subjects = [str(i + 1) for i in range(trace.n)]
    write_matrix(s, os.path.join(args.out, "similarity.csv"), subjects)
    write_partition(part, os.path.join(args.out, "partition.csv"))
    names = trace.names
    with open(os.path.join(args.out, "ppi.csv"), "w") as fh:
        fh.write("subject,from,to,ppi\n")
        for i in range(trace.n):
            for u, v in zip(*np.nonzero(~np.eye(trace.q, dtype=bool))):
                fh.write(f"{i + 1},{names[u]},{names[v]},{float(p[i, u, v])!r}\n")
    with open(os.path.join(args.out, "point_dags.csv"), "w") as fh:
        fh.write("subject,from,to\n")
        for i, d in enumerate(dags):
            for u, v in d.edges():
                fh.write(f"{i + 1},{names[u]},{names[v]}\n")
    print(f"{int(part.max()) + 1} clusters in point estimate; outputs in {args.out}",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------- causal

def _node(token: str, names: list[str]) -> int:
    if token in names:
        return names.index(token)
    try:
        j = int(token)
    except ValueError:
        raise ConfigError(f"unknown variable {token!r}") from None
    if not 0 <= j < len(names):
        raise ConfigError(f"variable index {token} out of range 0..{len(names) - 1}")
    return j


def cmd_causal(args) -> int:
    trace = _load_traces(args.trace, args.pool)
    y, h = _node(args.y, trace.names), _node(args.h, trace.names)
    try:
        if args.battery:
            results = bma_battery(trace, y, h, args.success, args.ref)
        else:
            q = CausalQuery(y, h, args.treat, args.ref, args.success)
            results = {args.treat: bma_effects(trace, q)}
    except MissingThetaError as exc:
        raise DataError(f"{exc}; pass --record-theta to fit") from None
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    if os.path.dirname(args.out):
        os.makedirs(os.path.dirname(args.out), exist_ok=True)
    stem, ext = os.path.splitext(args.out)
    for level, est in results.items():
        path = f"{stem}_level{level}{ext or '.csv'}" if args.battery else args.out
        write_effects(est, path)
    return 0


def write_effects(est, path) -> None:
    with open(path, "w") as fh:
        fh.write("subject,estimate,lower,upper\n")
        for i in range(len(est.estimate)):
            fh.write(f"{i + 1},{float(est.estimate[i])!r},{float(est.lower[i])!r},"
                     f"{float(est.upper[i])!r}\n")


# ---------------------------------------------------------------- simulate / benchmark

def cmd_simulate(args) -> int:
    cfg = resolve(SynthConfig, args, _load_file(args, _field_types(SynthConfig)))
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    for r, seq in enumerate(seqs):
        sim = simulate(cfg, np.random.default_rng(seq))
        write_replicate(sim, os.path.join(args.out, f"rep{r + 1:03d}"))
    print(f"wrote {cfg.replicates} replicate(s) under {args.out}", file=sys.stderr)
    return 0


def _parse_list(raw: str, typ, name):
    try:
        return tuple(typ(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"--{name}: cannot parse {raw!r}") from None


def cmd_benchmark(args) -> int:
    stypes, mtypes = _field_types(SynthConfig), _field_types(McmcConfig)
    file_values = _load_file(args, {**stypes, **mtypes})
    modes = _parse_list(args.modes, str, "modes")
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"unknown mode(s) {bad}; choose from {list(MODES)}")
    grid_n = _parse_list(args.grid_n, int, "grid-n")
    grid_a = _parse_list(args.grid_alpha, float, "grid-alpha")
    mcfg = resolve(McmcConfig, args, file_values)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "results.csv")
    with open(path, "w") as fh:
        fh.write("n_per_cluster,alpha_q,replicate,mode,metric,value\n")
        for n_k in grid_n:
            for a_q in grid_a:
                cfg = resolve(SynthConfig, args, file_values, n_per_cluster=n_k, alpha_q=a_q)
                export = (os.path.join(args.out, f"data_n{n_k}_a{a_q}")
                          if args.export_data else None)
                rows = benchmark_run(cfg, mcfg, modes, export, args.workers)
                for row in rows:
                    fh.write(f"{n_k},{a_q},{row.replicate},{row.mode},{row.metric},"
                             f"{row.value!r}\n")
                fh.flush()
                print(f"done n_k={n_k} alpha_q={a_q}", file=sys.stderr, flush=True)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catdagmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the sampler on a CSV dataset")
    fit.add_argument("data")
    fit.add_argument("--config")
    fit.add_argument("--constraints", help="file of 'forbid u v', 'exogenous u', 'response u'")
    fit.add_argument("--out", required=True)
    fit.add_argument("--chains", type=int, default=1)
    fit.add_argument("--workers", type=int, default=1)
    fit.add_argument("--progress-every", type=int, default=1000)
    _add_fields(fit, _field_types(McmcConfig))
    fit.set_defaults(func=cmd_fit)

    summ = sub.add_parser("summarize", help="similarity, partition, PPI and point DAGs")
    summ.add_argument("trace", nargs="+")
    summ.add_argument("--pool", action="store_true")
    summ.add_argument("--out", required=True)
    rule = summ.add_mutually_exclusive_group()
    rule.add_argument("--minvi", action="store_true")
    rule.add_argument("--threshold", type=float, default=0.5)
    summ.add_argument("--edge-threshold", type=float, default=0.5)
    summ.set_defaults(func=cmd_summarize)

    cau = sub.add_parser("causal", help="subject-specific BMA causal effects")
    cau.add_argument("trace", nargs="+")
    cau.add_argument("--pool", action="store_true")
    cau.add_argument("--y", required=True, help="response name or 0-based index")
    cau.add_argument("--h", required=True, help="exposure name or 0-based index")
    cau.add_argument("--treat", type=int, default=1)
    cau.add_argument("--ref", type=int, default=0)
    cau.add_argument("--success", type=int, default=1)
    cau.add_argument("--battery", action="store_true",
                     help="one effect per non-reference exposure level")
    cau.add_argument("--out", required=True)
    cau.set_defaults(func=cmd_causal)

    sim = sub.add_parser("simulate", help="write synthetic replicate datasets")
    sim.add_argument("--config")
    sim.add_argument("--out", required=True)
    _add_fields(sim, _field_types(SynthConfig))
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("benchmark", help="score sampler modes on synthetic replicates")
    bench.add_argument("--config")
    bench.add_argument("--out", required=True)
    bench.add_argument("--modes", default=",".join(MODES))
    bench.add_argument("--grid-n", default=",".join(map(str, DEFAULT_GRID_N)))
    bench.add_argument("--grid-alpha", default=",".join(map(str, DEFAULT_GRID_ALPHA)))
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--export-data", action="store_true")
    _add_fields(bench, _field_types(SynthConfig), skip=("n_per_cluster", "alpha_q"))
    _add_fields(bench, _field_types(McmcConfig), skip=("seed",))
    bench.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
