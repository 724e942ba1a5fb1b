"""Integrate the fluid model on the fixture networks and report Lyapunov descent.

For each (algorithm, network) pair: the largest per-sample increase of V, the
terminal equilibrium residual and the change in terminal rates when dt halves.
"""
import argparse

import numpy as np

from mptcplab.fluidsim import FluidRunConfig, equilibrium_residual, integrate, settle
from mptcplab.netmodel import SystemState
from mptcplab.scenarios import _alg, fixture_networks, mixed_algorithms


def run_pair(name, net, alg, t_end, dt):
    algs = mixed_algorithms(net, alg)
    eq = settle(net, algs).state
    x0 = eq.rates * np.linspace(0.8, 1.25, net.n_routes)
    start = SystemState(x0, eq.prices * 1.1)
    out = []
    for h in (dt, dt / 2):
        cfg = FluidRunConfig(t_end, start, h, record_every=max(1, int(round(0.1 / h))))
        out.append(integrate(net, algs, cfg, equilibrium=eq))
    tr = out[0]
    dV = float(np.max(np.diff(tr.lyapunov)))
    res = equilibrium_residual(net, algs, tr.final)
    shift = float(np.max(np.abs(out[1].final.rates - tr.final.rates) / tr.final.rates))
    return dV, res, shift


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-end", type=float, default=300.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()
    print(f"{'algorithm':<12}{'network':<13}{'max dV':>12}{'residual':>12}{'dt shift':>12}")
    for a in ("ewtcp", "semicoupled", "max", "balia"):
        for name, net in fixture_networks().items():
            dV, res, shift = run_pair(name, net, _alg(a), args.t_end, args.dt)
            print(f"{a:<12}{name:<13}{dV:>12.2e}{res:>12.2e}{shift:>12.2e}")


if __name__ == "__main__":
    main()
