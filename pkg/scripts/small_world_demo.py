"""Trace-graph diameter and anchor return gaps for a Geometric law."""
import argparse
import math

import numpy as np

from rangerenewal.dist import make_geometric
from rangerenewal.verify import run_replicas, small_world_constant


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--a", type=float, default=math.log(2))
    ap.add_argument("--replicas", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    spec = make_geometric(a.a)
    sched = [10**3, 10**4, 10**5]
    snaps = run_replicas(spec, sched, a.replicas, base_seed=a.seed, what=("diameter",), anchor=1)
    C, tau_target = small_world_constant(spec), -1 / math.log1p(-spec.mass(1))
    print(f"bound constant {C:.4f}; anchor target {tau_target:.4f}")
    print("      n   max L/log n   mean L/log n   mean tau/log n")
    for n in sched:
        L = np.array([s[n].L_n for s in snaps]) / math.log(n)
        tau = np.array([s[n].tau_max for s in snaps]) / math.log(n)
        print(f"{n:7d} {L.max():12.3f} {L.mean():14.3f} {tau.mean():16.3f}")


if __name__ == "__main__":
    main()
