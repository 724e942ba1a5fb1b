"""Acceptance suite: one test and one PASS/FAIL line per criterion."""
import math
import time

import numpy as np

from mptcplab.algorithms import (INF, balia, coupled, ewtcp, fluid_phi, generalized, maxalg, newreno,
                                 semicoupled)
from mptcplab.analysis import linearization, lemma1_oracle, oscillation_metric, table_one_row
from mptcplab.equilibrium import (c_lower, lemma3_vector, lemma4_form, psi, solve_generalized_equilibrium,
                                  solve_test_network)
from mptcplab.fluidsim import FluidRunConfig, equilibrium_residual, integrate, lyapunov_trace, settle
from mptcplab.netmodel import LinkSpec, NetworkSpec, RouteSpec, SystemState
from mptcplab.packetsim import run_packet_sim
from mptcplab.scenarios import (OscillationConfig, fixture_networks, mixed_algorithms, oscillation_run,
                                reproduce)

YES = {"ewtcp": (1, 1, 1, 1, 1), "coupled": (1, 1, 0, 1, 1), "semicoupled": (0, 1, 1, 1, 1),
       "max": (0, 1, 1, 1, 1), "balia": (0, 1, 1, 1, 1)}
COLS = ("C0", "C1", "C2,C3", "C4", "C5")


def test_criterion_1_table_one(criterion):
    t0 = time.perf_counter()
    bad = []
    for a in (ewtcp(), coupled(), semicoupled(), maxalg(), balia()):
        row = table_one_row(a, 100, 0)
        got = tuple(int(row[c]) for c in COLS)
        if got != YES[a.name]:
            bad.append(f"{a.label}={got}")
    dt = time.perf_counter() - t0
    assert criterion(1, not bad and dt < 10, f"table mismatches={bad or 'none'} runtime={dt:.1f}s")


def test_criterion_2_psi_solver(criterion):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst, mono_fail = 0.0, 0
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        q = rng.uniform(1e-3, 1.0, m)
        beta = float(rng.uniform(1e-3, 1.0))
        n = [1, 2, 3, 4, INF][int(rng.integers(0, 5))]
        t = np.full(m, float(rng.uniform(0.1, 3.0)))
        x = solve_generalized_equilibrium(q, t, beta, n).x
        worst = max(worst, float(np.max(np.abs(fluid_phi(generalized(beta, 0.0, n), x, t) - q)) / np.max(q)))
        if n != INF:
            C = c_lower(q, t) * np.sort(rng.uniform(1.0, 50.0, 6))
            vals = [psi(c, q, t, beta, int(n)) for c in C]
            mono_fail += int(not all(a > b for a, b in zip(vals, vals[1:])))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and mono_fail == 0 and dt < 30
    assert criterion(2, ok, f"worst relative residual={worst:.2e} psi monotone violations={mono_fail} "
                            f"runtime={dt:.1f}s")


def test_criterion_3_lemmas(criterion):
    rng = np.random.default_rng(1)
    v3 = v4 = 0
    for _ in range(10_000):
        m = int(rng.integers(1, 9))
        a = lemma3_vector(np.exp(rng.uniform(-4, 4, m)), int(rng.integers(1, 11)))
        v3 += int(abs(a.sum() - 1.0) > 1e-12 or float(a @ a) > 1.0 + 1e-12)
        z = rng.normal(size=m) * 10.0 ** rng.uniform(-3, 3)
        v4 += int(not lemma4_form(a, z) > 0)
    assert criterion(3, v3 == 0 and v4 == 0, f"lemma 3 violations={v3} lemma 4 violations={v4} (10^4 each)")


def _descent(net, alg, t_end=300.0, dt=1e-3):
    algs = mixed_algorithms(net, alg)
    eq = settle(net, algs).state
    start = SystemState(eq.rates * np.linspace(0.8, 1.25, net.n_routes), eq.prices * 1.1)
    fine = integrate(net, algs, FluidRunConfig(t_end, start, dt, record_every=1))
    V = lyapunov_trace(net, algs, fine.rates, fine.prices, eq)
    half = integrate(net, algs, FluidRunConfig(t_end, start, dt / 2, record_every=1000))
    shift = float(np.max(np.abs(half.final.rates - fine.final.rates) / fine.final.rates))
    return float(np.max(np.diff(V))), equilibrium_residual(net, algs, fine.final), shift


def test_criterion_4_lyapunov_descent(criterion):
    dV = res = shift = -math.inf
    for alg in (ewtcp(), semicoupled(), maxalg(), balia()):
        for net in fixture_networks().values():
            a, b, c = _descent(net, alg)
            dV, res, shift = max(dV, a), max(res, b), max(shift, c)
    ok = dV <= 1e-8 and res <= 1e-4 and shift <= 1e-6
    assert criterion(4, ok, f"max per-step dV={dV:.2e} max residual={res:.2e} max dt-halving shift={shift:.2e}")


def test_criterion_5_linearization(criterion):
    absc, gap = -math.inf, 0.0
    for alg in (ewtcp(), semicoupled(), maxalg(), balia()):
        for net in fixture_networks().values():
            algs = mixed_algorithms(net, alg)
            rep = linearization(net, algs, settle(net, algs).state)
            absc, gap = max(absc, rep.spectral_abscissa), max(gap, rep.rayleigh_gap)
    nr = linearization(NetworkSpec((LinkSpec(1.0),), (RouteSpec(0, (0,), 1.0),)), newreno(),
                       SystemState([1.0], [2.0]))
    lam = np.sort(nr.eigenvalues.real)
    err = float(np.max(np.abs(lam - [-1 - math.sqrt(0.5), -1 + math.sqrt(0.5)])) + np.max(np.abs(nr.eigenvalues.imag)))
    ok = absc < 0 and gap <= 1e-8 and err <= 1e-10
    assert criterion(5, ok, f"max spectral abscissa={absc:.4f} max rayleigh gap={gap:.1e} newreno error={err:.1e}")


def test_criterion_6_friendliness(criterion):
    c = 100.0
    xs = {a.name: solve_test_network(a, [1.0, 1.0], 1.0, c).mp_throughput
          for a in (ewtcp(), semicoupled(), maxalg(), balia(), coupled())}
    v = list(xs.values())
    order = all(a >= b - 1e-9 for a, b in zip(v, v[1:]))
    ok = order and abs(xs["coupled"] - c / 2) <= 1e-6 and abs(xs["ewtcp"] - 2 * c / 3) <= 1e-6
    detail = " >= ".join(f"{k} {x:.4f}" for k, x in xs.items())
    assert criterion(6, ok, f"{detail} (c={c:g})")


def test_criterion_7_oscillation(criterion):
    rng = np.random.default_rng(2)
    half = max(abs(oscillation_metric(newreno(), [x], [1.0], [q]).D_s - 0.5)
               for x, q in zip(rng.uniform(0.1, 100, 50), rng.uniform(1e-4, 0.1, 50)))
    mp = [oscillation_metric(a, rng.uniform(0.1, 100, 2), [1.0, 1.0], [0.01, 0.01]).D_s
          for a in (ewtcp(), coupled(), semicoupled(), maxalg(), balia(), generalized(0.5, 0.0, 2))
          for _ in range(20)]
    cfg = OscillationConfig(horizon=100.0, warmup=10.0)
    gaps = {a: abs(r["empirical"] - r["formula_along_trace"])
            for a in ("newreno", "ewtcp", "semicoupled", "max", "balia", "coupled")
            for r in [oscillation_run(a, 0, cfg)]}
    sizes, d, q = (10, 10), (1.0, 2.0), np.array([0.001, 0.002])
    big = lemma1_oracle(sizes, q, d, 1_000_000, 0)
    small = lemma1_oracle(sizes, q / 10, d, 1_000_000, 0)
    z = (big.estimate - big.closed_form) / big.stderr
    shrink = abs(small.exact - small.closed_form) < abs(big.exact - big.closed_form)
    parts = {"newreno D=0.5": half <= 1e-12, "mp D<0.5": max(mp) < 0.5,
             "packet vs formula <= 0.1": max(gaps.values()) <= 0.1,
             "lemma 1 within 3 stderr": abs(z) <= 3.0, "error shrinks at q/10": shrink}
    detail = (f"newreno |D-0.5|={half:.1e} max mp D={max(mp):.3f} max packet gap={max(gaps.values()):.3f} "
              f"lemma 1 z={z:+.2f} (z vs exact={(big.estimate - big.exact) / big.stderr:+.2f}, "
              f"z at q/10={(small.estimate - small.closed_form) / small.stderr:+.2f}) "
              f"failed={[k for k, v in parts.items() if not v] or 'none'}")
    assert criterion(7, all(parts.values()), detail)


def test_criterion_8_responsiveness(criterion):
    t0 = time.perf_counter()
    rep = reproduce("table4_responsiveness", seeds=(0, 1, 2))
    dt = time.perf_counter() - t0
    ct = rep["measured"]["mean_convergence_time"]
    detail = " ".join(f"{a}={t:.2f}s" for a, t in ct.items())
    assert criterion(8, rep["all_orderings_hold"] and dt < 120, f"{detail} runtime={dt:.0f}s")


def test_criterion_9_degeneracy(criterion):
    fields = ("times", "windows", "in_flight", "queues", "sent", "acked", "lost")
    same = True
    for loss, buf in ((0.0, 20), (0.01, 100_000)):
        net = NetworkSpec((LinkSpec(1000.0, buffer=buf, prop_delay=0.01, loss_prob=loss),),
                          (RouteSpec(0, (0,), 0.02),))
        a = run_packet_sim(net, balia(), horizon=30.0, seed=7)
        b = run_packet_sim(net, newreno(), horizon=30.0, seed=7)
        same &= all(np.array_equal(getattr(a, f), getattr(b, f)) for f in fields)
        same &= [(e.t, e.window_after) for e in a.epochs] == [(e.t, e.window_after) for e in b.epochs]
    assert criterion(9, same, "balia |s|=1 trace bit-identical to newreno" if same else "traces differ")
