"""Local responsiveness: linearization spectra on the fixtures, then the packet experiment."""
import argparse

from mptcplab.analysis import linearization
from mptcplab.fluidsim import settle
from mptcplab.scenarios import MP_ALGORITHMS, _alg, fixture_networks, mixed_algorithms, reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--skip-packet", action="store_true")
    args = ap.parse_args()
    print("spectral abscissa / lambda_bar of J* at equilibrium")
    for name, net in fixture_networks().items():
        cells = []
        for a in ("ewtcp", "semicoupled", "max", "balia"):
            algs = mixed_algorithms(net, _alg(a))
            eq = settle(net, algs)
            s = linearization(net, algs, eq.state)
            cells.append(f"{a}={s.spectral_abscissa:+.4f}/{s.lambda_bar:+.4f}")
        print(f"  {name:<12}" + "  ".join(cells))
    if args.skip_packet:
        return
    rep = reproduce("table4_responsiveness", tuple(range(args.seeds)), args.jobs)
    ct = rep["measured"]["mean_convergence_time"]
    print("packet convergence time after the single-path flows leave (s)")
    for a in MP_ALGORITHMS:
        print(f"  {a:<12}{ct[a]:8.2f}")
    for k, ok in rep["checks"].items():
        print(f"  {'PASS' if ok else 'FAIL'} {k}")


if __name__ == "__main__":
    main()
