"""Integration of the primal-dual fluid dynamics

    dx_r/dt = k_r(x_s) (phi_r(x_s) - q_r)^+_{x_r}
    dp_l/dt = gamma_l (y_l - c_l)^+_{p_l}

with projection at the nonnegativity boundary, plus the diagnostics used to
judge a trajectory: equilibrium residual and the Lyapunov function.

The stepping loop is compiled with numba; ``rhs`` below is the plain numpy
reference and the tests hold the two to each other.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import integrate as spi
from scipy import optimize

from .algorithms import INF, RATE_FLOOR, Algorithm, fluid_k, fluid_phi
from .netmodel import NetworkSpec, SystemState, aggregate_price, aggregate_rate

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class FluidDivergence(RuntimeError):
    """Rates blew past DIVERGENCE_FACTOR * max capacity, or went non-finite."""

    def __init__(self, msg: str, t: float):
        super().__init__(msg)
        self.t = t


@dataclass
class FluidRunConfig:
    t_end: float
    initial: SystemState
    dt: float = 1e-4
    method: str = "rk4"
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_end > self.dt:
            raise ValueError("t_end must exceed dt")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"method must be 'euler' or 'rk4', got {self.method!r}")


@dataclass
class SimTrace:
    times: np.ndarray
    rates: np.ndarray                   # (T, |R|)
    prices: np.ndarray                  # (T, |L|)
    lyapunov: np.ndarray | None = None
    residuals: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> list[SystemState]:
        return [SystemState(x, p) for x, p in zip(self.rates, self.prices)]

    @property
    def final(self) -> SystemState:
        return SystemState(self.rates[-1].copy(), self.prices[-1].copy())

    def to_csv(self, path) -> None:
        nr, nl = self.rates.shape[1], self.prices.shape[1]
        header = (["t"] + [f"x_{i + 1}" for i in range(nr)]
                  + [f"p_{l + 1}" for l in range(nl)] + ["V", "residual"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, t in enumerate(self.times):
                V = "" if self.lyapunov is None else repr(float(self.lyapunov[i]))
                res = "" if self.residuals is None else repr(float(self.residuals[i]))
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.rates[i]]
                           + [repr(float(v)) for v in self.prices[i]] + [V, res])


def per_source(net: NetworkSpec, algs) -> tuple[Algorithm, ...]:
    """Broadcast one algorithm to every source, or validate a per-source list."""
    if isinstance(algs, Algorithm):
        return (algs,) * net.n_sources
    algs = tuple(algs)
    if len(algs) != net.n_sources:
        raise ValueError(f"need {net.n_sources} algorithms (one per source), got {len(algs)}")
    return algs


# ------------------------------------------------------------ numpy reference

def phi_all(net: NetworkSpec, algs, x, guarded: bool = False) -> np.ndarray:
    algs = per_source(net, algs)
    x = np.asarray(x, dtype=float)
    out = np.empty(net.n_routes)
    for alg, idx in zip(algs, net.sources):
        idx = list(idx)
        out[idx] = fluid_phi(alg, x[idx], net.rtts[idx], guarded=guarded)
    return out


def k_all(net: NetworkSpec, algs, x) -> np.ndarray:
    algs = per_source(net, algs)
    x = np.asarray(x, dtype=float)
    out = np.empty(net.n_routes)
    for alg, idx in zip(algs, net.sources):
        idx = list(idx)
        out[idx] = fluid_k(alg, x[idx], net.rtts[idx])
    return out


def rhs(net: NetworkSpec, algs, state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    """Projected time derivatives (dx, dp)."""
    x, p = state.rates, state.prices
    if np.any(x < 0) or np.any(p < 0):
        raise ValueError("state must be nonnegative")
    q = aggregate_price(net, state)
    y = aggregate_rate(net, state)
    phi = phi_all(net, algs, x, guarded=True)
    interior = x > RATE_FLOOR
    if not np.all(np.isfinite(phi[interior])):
        raise FloatingPointError(f"non-finite marginal at interior rates {x}")
    k = k_all(net, algs, np.maximum(x, RATE_FLOOR))
    bracket = phi - q
    bracket = np.where(interior, bracket, np.maximum(bracket, 0.0))
    dx = k * bracket
    dp = net.gains * (y - net.capacities)
    dp = np.where(p > 0, dp, np.maximum(dp, 0.0))
    return dx, dp


# ------------------------------------------------------------- numba kernel

_CODES = {"newreno": 0, "ewtcp": 0, "coupled": 2, "semicoupled": 3, "max": 4,
          "generalized": 5, "balia": 5}


def _pack(net: NetworkSpec, algs):
    algs = per_source(net, algs)
    order = [r for idx in net.sources for r in idx]
    ptr = np.zeros(net.n_sources + 1, dtype=np.int64)
    for s, idx in enumerate(net.sources):
        ptr[s + 1] = ptr[s] + len(idx)
    code = np.array([_CODES[a.name] for a in algs], dtype=np.int64)
    a = np.array([a.a if a.name == "ewtcp" else 1.0 for a in algs])
    beta = np.array([a.beta for a in algs])
    eta = np.array([a.eta for a in algs])
    n = np.array([-1.0 if a.n == INF else float(a.n) for a in algs])
    return np.array(order, dtype=np.int64), ptr, code, a, beta, eta, n


@njit(cache=True)
def _source_terms(code, a, beta, eta, n, x, tau, phi, k):
    m = x.size
    S = 0.0
    xmax = 0.0
    mt = 0.0
    for i in range(m):
        S += x[i]
        if x[i] > xmax:
            xmax = x[i]
        if x[i] / tau[i] > mt:
            mt = x[i] / tau[i]
    N = xmax
    if code == 5 and n > 0:
        acc = 0.0
        for i in range(m):
            acc += (x[i] / xmax) ** n
        N = xmax * acc ** (1.0 / n)
    for i in range(m):
        t2 = tau[i] * tau[i]
        if code == 0:
            phi[i] = 2.0 * a / (t2 * x[i] * x[i])
        elif code == 2:
            phi[i] = 2.0 / (t2 * S * S)
        elif code == 3:
            phi[i] = 2.0 / (t2 * x[i] * S)
        elif code == 4:
            phi[i] = 2.0 * mt / (tau[i] * x[i] * S * S)
        else:
            v = (1.0 - beta) / (S * S)
            if beta > 0.0:
                v += beta * N / (x[i] * S * S)
            phi[i] = 2.0 * v / t2
        if code == 5:
            k[i] = 0.5 * x[i] * (x[i] + eta * (xmax - x[i]))
        else:
            k[i] = 0.5 * x[i] * x[i]


@njit(cache=True)
def _deriv(x, p, H, c, gamma, tau, order, ptr, code, a, beta, eta, n, floor, dx, dp):
    L, R = H.shape
    q = np.zeros(R)
    y = np.zeros(L)
    for l in range(L):
        for r in range(R):
            if H[l, r] != 0.0:
                q[r] += p[l]
                y[l] += x[r]
    for s in range(code.size):
        lo = ptr[s]
        hi = ptr[s + 1]
        m = hi - lo
        xs = np.empty(m)
        ts = np.empty(m)
        for j in range(m):
            r = order[lo + j]
            xs[j] = max(x[r], floor)
            ts[j] = tau[r]
        ph = np.empty(m)
        kk = np.empty(m)
        _source_terms(code[s], a[s], beta[s], eta[s], n[s], xs, ts, ph, kk)
        for j in range(m):
            r = order[lo + j]
            b = ph[j] - q[r]
            if x[r] <= floor and b < 0.0:
                b = 0.0
            dx[r] = kk[j] * b
    for l in range(L):
        d = gamma[l] * (y[l] - c[l])
        if p[l] <= 0.0 and d < 0.0:
            d = 0.0
        dp[l] = d


@njit(cache=True)
def _run(x0, p0, H, c, gamma, tau, order, ptr, code, a, beta, eta, n,
         dt, nsteps, record_every, rk4, xlimit, floor):
    L, R = H.shape
    nrec = nsteps // record_every + 1
    T = np.empty(nrec)
    X = np.empty((nrec, R))
    P = np.empty((nrec, L))
    x = x0.copy()
    p = p0.copy()
    T[0] = 0.0
    X[0] = x
    P[0] = p
    k1x = np.empty(R); k2x = np.empty(R); k3x = np.empty(R); k4x = np.empty(R)
    k1p = np.empty(L); k2p = np.empty(L); k3p = np.empty(L); k4p = np.empty(L)
    xt = np.empty(R)
    pt = np.empty(L)
    rec = 1
    status = 0
    step = 0
    for step in range(1, nsteps + 1):
        _deriv(x, p, H, c, gamma, tau, order, ptr, code, a, beta, eta, n, floor, k1x, k1p)
        if rk4:
            for r in range(R):
                xt[r] = max(x[r] + 0.5 * dt * k1x[r], 0.0)
            for l in range(L):
                pt[l] = max(p[l] + 0.5 * dt * k1p[l], 0.0)
            _deriv(xt, pt, H, c, gamma, tau, order, ptr, code, a, beta, eta, n, floor, k2x, k2p)
            for r in range(R):
                xt[r] = max(x[r] + 0.5 * dt * k2x[r], 0.0)
            for l in range(L):
                pt[l] = max(p[l] + 0.5 * dt * k2p[l], 0.0)
            _deriv(xt, pt, H, c, gamma, tau, order, ptr, code, a, beta, eta, n, floor, k3x, k3p)
            for r in range(R):
                xt[r] = max(x[r] + dt * k3x[r], 0.0)
            for l in range(L):
                pt[l] = max(p[l] + dt * k3p[l], 0.0)
            _deriv(xt, pt, H, c, gamma, tau, order, ptr, code, a, beta, eta, n, floor, k4x, k4p)
            for r in range(R):
                x[r] = max(x[r] + dt / 6.0 * (k1x[r] + 2.0 * k2x[r] + 2.0 * k3x[r] + k4x[r]), 0.0)
            for l in range(L):
                p[l] = max(p[l] + dt / 6.0 * (k1p[l] + 2.0 * k2p[l] + 2.0 * k3p[l] + k4p[l]), 0.0)
        else:
            for r in range(R):
                x[r] = max(x[r] + dt * k1x[r], 0.0)
            for l in range(L):
                p[l] = max(p[l] + dt * k1p[l], 0.0)
        bad = False
        for r in range(R):
            if not np.isfinite(x[r]):
                bad = True
                status = 2
            elif x[r] > xlimit:
                bad = True
                status = 1
        for l in range(L):
            if not np.isfinite(p[l]):
                bad = True
                status = 2
        if step % record_every == 0 or bad:
            T[rec] = step * dt
            X[rec] = x
            P[rec] = p
            rec += 1
        if bad:
            break
    return T[:rec], X[:rec], P[:rec], status


def integrate(net: NetworkSpec, algs, cfg: FluidRunConfig,
              equilibrium: SystemState | None = None,
              residuals: bool = False, raise_on_divergence: bool = True) -> SimTrace:
    """Fixed-step integration; x, p clamped at zero after every step.

    Pass ``equilibrium`` to record the Lyapunov value at every sample.
    """
    algs = per_source(net, algs)
    x0 = np.asarray(cfg.initial.rates, dtype=float).copy()
    p0 = np.asarray(cfg.initial.prices, dtype=float).copy()
    if x0.shape != (net.n_routes,) or p0.shape != (net.n_links,):
        raise ValueError("initial state does not match the network")
    if np.any(x0 < 0) or np.any(p0 < 0):
        raise ValueError("initial state must be nonnegative")
    nsteps = int(round(cfg.t_end / cfg.dt))
    xlimit = DIVERGENCE_FACTOR * float(np.max(net.capacities))
    packed = _pack(net, algs)
    T, X, P, status = _run(x0, p0, np.ascontiguousarray(net.H), net.capacities, net.gains,
                           net.rtts, *packed, float(cfg.dt), nsteps, int(cfg.record_every),
                           cfg.method == "rk4", xlimit, RATE_FLOOR)
    trace = SimTrace(T, X, P, meta={"dt": cfg.dt, "method": cfg.method, "status": "ok"})
    if status:
        trace.meta["status"] = "diverged" if status == 1 else "non-finite"
        msg = f"fluid run {trace.meta['status']} at t={T[-1]:.6g}"
        log.warning(msg)
        if raise_on_divergence:
            raise FluidDivergence(msg, float(T[-1]))
    if equilibrium is not None:
        trace.lyapunov = np.array([lyapunov(net, algs, s, equilibrium) for s in trace.states])
    if residuals:
        trace.residuals = np.array([equilibrium_residual(net, algs, s) for s in trace.states])
    return trace


# ---------------------------------------------------------------- diagnostics

def equilibrium_residual(net: NetworkSpec, algs, state: SystemState) -> float:
    """Largest violation of the complementarity conditions at ``state``."""
    x, p = state.rates, state.prices
    q = aggregate_price(net, state)
    y = aggregate_rate(net, state)
    phi = phi_all(net, algs, x)
    with np.errstate(invalid="ignore"):
        route = np.maximum(np.abs(np.minimum(x, q - phi)), np.maximum(phi - q, 0.0))
    slack = net.capacities - y
    link = np.maximum(np.abs(np.minimum(p, slack)), np.maximum(-slack, 0.0))
    route = np.where(np.isnan(route), INF, route)
    return float(max(np.max(route), np.max(link)))


def _legacy_gain(alg: Algorithm) -> bool:
    """k_r(x) == x_r^2 / 2."""
    return not alg.family or alg.eta == 0


def lyapunov(net: NetworkSpec, algs, state: SystemState, equilibrium: SystemState,
             quadrature: bool = False) -> float:
    """V = sum_r int_{x*}^{x} (z - x*)/k_r(z) dz + sum_l (p_l - p*_l)^2 / (2 gamma_l).

    Gains that depend on the whole source vector are frozen at the equilibrium,
    which makes V a local Lyapunov function only.
    """
    algs = per_source(net, algs)
    x, xe = state.rates, equilibrium.rates
    kstar = k_all(net, algs, xe)
    V = 0.0
    for alg, idx in zip(algs, net.sources):
        for r in idx:
            xr, xs = float(x[r]), float(xe[r])
            if _legacy_gain(alg):
                if xr <= 0 or xs <= 0:
                    raise ValueError(f"route {r}: log-divergent Lyapunov term at zero rate")
                if quadrature:
                    V += spi.quad(lambda z: (z - xs) / (0.5 * z * z), xs, xr,
                                  epsabs=1e-12, epsrel=1e-10)[0]
                else:
                    V += 2.0 * (math.log(xr / xs) + xs / xr - 1.0)
            else:
                kr = float(kstar[r])
                if quadrature:
                    V += spi.quad(lambda z: (z - xs) / kr, xs, xr, epsabs=1e-12, epsrel=1e-10)[0]
                else:
                    V += (xr - xs) ** 2 / (2.0 * kr)
    dp = state.prices - equilibrium.prices
    V += 0.5 * float(np.sum(dp * dp / net.gains))
    return V


def lyapunov_trace(net: NetworkSpec, algs, rates: np.ndarray, prices: np.ndarray,
                   equilibrium: SystemState) -> np.ndarray:
    """Closed-form V at every row of a recorded trajectory (vectorized ``lyapunov``)."""
    algs = per_source(net, algs)
    X = np.asarray(rates, dtype=float)
    xe = equilibrium.rates
    kstar = k_all(net, algs, xe)
    legacy = np.zeros(net.n_routes, dtype=bool)
    for alg, idx in zip(algs, net.sources):
        legacy[list(idx)] = _legacy_gain(alg)
    if np.any(X[:, legacy] <= 0) or np.any(xe <= 0):
        raise ValueError("log-divergent Lyapunov term at zero rate")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = 2.0 * (np.log(X / xe) + xe / X - 1.0)
    quad_term = (X - xe) ** 2 / (2.0 * kstar)
    V = np.where(legacy, log_term, quad_term).sum(axis=1)
    dp = np.asarray(prices, dtype=float) - equilibrium.prices
    return V + 0.5 * (dp * dp / net.gains).sum(axis=1)


@dataclass
class EquilibriumResult:
    state: SystemState
    residual: float
    active_links: np.ndarray
    converged: bool
    diagnostics: dict = field(default_factory=dict)


def default_initial(net: NetworkSpec) -> SystemState:
    """Even split of each link's capacity, zero prices."""
    share = np.zeros(net.n_routes)
    for r, route in enumerate(net.routes):
        share[r] = min(net.capacities[l] / net.H[l].sum() for l in route.links)
    return SystemState(0.5 * share, np.zeros(net.n_links))


def polish(net: NetworkSpec, algs, guess: SystemState, p_tol: float = 1e-9) -> SystemState | None:
    """Newton solve of phi(x) = H_A^T p_A, H_A x = c_A over the active links of ``guess``."""
    x0, p0 = guess.rates, guess.prices
    if np.any(x0 <= 0):
        return None
    y = net.H @ x0
    active = (p0 > p_tol) | (y >= net.capacities * (1 - 1e-6))
    HA = net.H[active]
    cA = net.capacities[active]
    nR = net.n_routes

    def F(u):
        x = np.exp(u[:nR])
        pA = u[nR:]
        return np.concatenate([(phi_all(net, algs, x) - HA.T @ pA) / np.maximum(np.abs(HA.T @ pA), 1e-12),
                               (HA @ x - cA) / cA])

    u0 = np.concatenate([np.log(x0), p0[active]])
    with np.errstate(over="ignore", invalid="ignore"):
        sol = optimize.root(F, u0, method="hybr", options={"xtol": 1e-14})
        # hybr flags "no further improvement" even when the root is exact
        if not np.all(np.isfinite(sol.fun)) or np.max(np.abs(sol.fun)) > 1e-10:
            return None
    p = np.zeros(net.n_links)
    p[active] = sol.x[nR:]
    if np.any(p < 0):
        return None
    return SystemState(np.exp(sol.x[:nR]), p)


def settle(net: NetworkSpec, algs, initial: SystemState | None = None, t_end: float = 200.0,
           dt: float | None = None, tol: float = 1e-10) -> EquilibriumResult:
    """Locate the equilibrium: integrate towards it, then Newton-polish."""
    algs = per_source(net, algs)
    initial = default_initial(net) if initial is None else initial
    dt = dt if dt is not None else 1e-3 * float(np.min(net.rtts))
    cfg = FluidRunConfig(t_end=t_end, initial=initial, dt=dt, record_every=max(1, int(t_end / dt) // 1000))
    trace = integrate(net, algs, cfg)
    coarse = trace.final
    res_coarse = equilibrium_residual(net, algs, coarse)
    fine = polish(net, algs, coarse)
    best, res = coarse, res_coarse
    if fine is not None:
        res_fine = equilibrium_residual(net, algs, fine)
        if res_fine < res_coarse:
            best, res = fine, res_fine
    active = best.prices > 0
    return EquilibriumResult(best, res, active, res <= tol,
                             {"integrated_residual": res_coarse, "t_end": t_end, "dt": dt})
