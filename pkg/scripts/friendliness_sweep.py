"""Test-network equilibria: MP throughput as the rtt of the second MP route varies.

The first MP route and the NewReno flow keep rtt 1. With equal rtts the
ordering ewtcp >= semicoupled >= max >= balia >= coupled holds (max, balia
and coupled tie on a single bottleneck); the sweep shows how it moves otherwise.
"""
import argparse

import numpy as np

from mptcplab.algorithms import balia, coupled, ewtcp, generalized, maxalg, semicoupled
from mptcplab.equilibrium import solve_test_network


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--capacity", type=float, default=100.0)
    ap.add_argument("--ratios", type=float, nargs="*", default=[0.25, 0.5, 1.0, 2.0, 4.0], help="second-route rtt")
    args = ap.parse_args()
    algs = [ewtcp(), semicoupled(), maxalg(), balia(), generalized(0.5, 0.5), coupled()]
    print(f"{'rtt_2':>8}" + "".join(f"{a.label.split('(')[0][:11]:>12}" for a in algs))
    for r in args.ratios:
        xs = [solve_test_network(a, [1.0, r], 1.0, args.capacity).mp_throughput for a in algs]
        mono = all(np.diff(xs) <= 1e-9 * args.capacity)
        print(f"{r:>8g}" + "".join(f"{x:>12.4f}" for x in xs) + ("" if mono else "   (not monotone)"))


if __name__ == "__main__":
    main()
