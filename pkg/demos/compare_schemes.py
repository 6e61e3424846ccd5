"""Fletch against the no-cache baseline on a skewed and a uniform workload.

    python demos/compare_schemes.py [n_files] [length]
"""
import sys

from fletchsim.sim import SimConfig, run_spec
from fletchsim.workload import WorkloadSpec

n_files = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
length = int(sys.argv[2]) if len(sys.argv) > 2 else 20_000

print(f"{'workload':<10}{'skew':<10}{'nocache':>12}{'fletch':>12}{'ratio':>8}{'hit rate':>10}")
for skew in ("powerlaw", "uniform"):
    for wl in ("training", "thumb"):
        spec = WorkloadSpec(name=wl, skew=skew, n_files=n_files, length=length, seed=0)
        base = run_spec(SimConfig(scheme="nocache", n_servers=16), spec)
        fl = run_spec(SimConfig(scheme="fletch", n_servers=16), spec)
        assert not fl.violations, fl.violations[:3]
        print(f"{wl:<10}{skew:<10}{base.throughput:>12.4g}{fl.throughput:>12.4g}"
              f"{fl.throughput / base.throughput:>8.2f}{fl.hit_rate:>10.2%}")
