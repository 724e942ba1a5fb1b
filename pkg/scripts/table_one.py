"""Print the C0-C5 verdict table for the legacy algorithms and Balia."""
import argparse
import time

from mptcplab.algorithms import balia, coupled, ewtcp, generalized, maxalg, semicoupled
from mptcplab.analysis import table_one_row


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--beta", type=float, nargs="*", default=[],
                    help="extra generalized(beta, 0, inf) rows")
    args = ap.parse_args()
    algs = [ewtcp(), coupled(), semicoupled(), maxalg(), balia()]
    algs += [generalized(b) for b in args.beta]
    cols = ("C0", "C1", "C2,C3", "C4", "C5")
    print(f"{'algorithm':<34}" + "".join(f"{c:>7}" for c in cols))
    t0 = time.perf_counter()
    for a in algs:
        row = table_one_row(a, args.samples, args.seed)
        print(f"{a.label:<34}" + "".join(f"{'Yes' if row[c] else 'No':>7}" for c in cols))
    print(f"({time.perf_counter() - t0:.1f} s)")


if __name__ == "__main__":
    main()
