"""Small version of the simulation study: mixture against its three baselines.

    python demos/simulation_study.py [replicates] [iterations]

The full-size protocol is available as ``catdagmix benchmark``.
"""

import sys
from collections import defaultdict

import numpy as np

from catdagmix.dpmix import McmcConfig
from catdagmix.synth import MODES, SynthConfig, benchmark_run

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 3
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 1000

cfg = SynthConfig(q=10, n_clusters=2, n_per_cluster=200, alpha_q=0.1, replicates=reps, seed=7)
mcfg = McmcConfig(iterations=iters, burn_in=iters // 5)
rows = benchmark_run(cfg, mcfg, MODES)

table = defaultdict(list)
for r in rows:
    table[r.mode, r.metric].append(r.value)
print(f"{'mode':<12}{'VI':>8}{'SHD':>8}{'K_hat':>8}   (medians over {reps} replicates)")
for mode in MODES:
    cells = [np.median(table[mode, m]) if table[mode, m] else np.nan
             for m in ("vi", "shd", "n_clusters")]
    print(f"{mode:<12}" + "".join(f"{c:>8.2f}" for c in cells))
