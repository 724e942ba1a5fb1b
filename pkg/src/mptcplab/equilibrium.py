"""Direct equilibrium construction at fixed prices, and the friendliness test network.

For the generalized family with finite norm order n, the rates solving
phi_r(x) = q_r on one source follow from a single scalar: with C = ||x||_1^2,

    a_r(C) = 2 beta / (2 beta + q_r tau_r^2 C - 2),    psi(C) = sum_r a_r(C)^n

psi is strictly decreasing on C >= C_lower = 2 / min_r(q_r tau_r^2), starts at
>= 1 and tends to 0, so bisection finds the unique C~ with psi(C~) = 1 and then
x_r = a_r / sum(a) * sqrt(C~).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .algorithms import INF, Algorithm, fluid_phi, generalized

PSI_TOL = 1e-12
SYSTEM_RTOL = 1e-8
MAX_BISECT = 200


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PsiSolveResult:
    C_tilde: float
    a: np.ndarray
    x: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class FriendlinessResult:
    algorithm: str
    mp_throughput: float
    sp_throughput: float
    bottleneck_price: float
    residual: float
    mp_rates: np.ndarray


def _as_arrays(qs, taus):
    q = np.atleast_1d(np.asarray(qs, dtype=float))
    tau = np.atleast_1d(np.asarray(taus, dtype=float))
    if q.shape != tau.shape:
        raise ValueError("prices and rtts differ in shape")
    if np.any(q <= 0) or np.any(tau <= 0):
        raise ValueError("route prices and rtts must be positive")
    return q, tau


def c_lower(qs, taus) -> float:
    q, tau = _as_arrays(qs, taus)
    return 2.0 / float(np.min(q * tau * tau))


def _a(C, q, tau, beta):
    return 2.0 * beta / (2.0 * beta + q * tau * tau * C - 2.0)


def psi(C: float, qs, taus, beta: float, n: int) -> float:
    q, tau = _as_arrays(qs, taus)
    if not beta > 0:
        raise ValueError("psi needs beta > 0")
    lo = 2.0 / float(np.min(q * tau * tau))
    if C < lo * (1 - 1e-14):
        raise ValueError(f"C={C} lies below the domain bound {lo}")
    return float(np.sum(_a(C, q, tau, beta) ** n))


def _check_phi(alg: Algorithm, x, tau, q, rtol=SYSTEM_RTOL):
    phi = fluid_phi(alg, x, tau)
    live = x > 0
    err = float(np.max(np.abs(phi[live] - q[live]) / q[live]))
    if not err <= rtol:
        raise SolverError(f"{alg.label}: phi(x) misses q by {err:.3g} (relative)")
    if np.any(phi[~live] > q[~live] * (1 + rtol)):
        raise SolverError(f"{alg.label}: idle route whose phi exceeds its price")
    return err


def solve_generalized_equilibrium(qs, taus, beta: float, n: float) -> PsiSolveResult:
    """Unique positive x with phi(x) = q for the (beta, ., n) family on one source."""
    if n == INF:
        return solve_generalized_equilibrium_maxnorm(qs, taus, beta)
    q, tau = _as_arrays(qs, taus)
    if not beta > 0:
        raise ValueError("the psi construction needs beta > 0")
    n = int(n)
    lo = 2.0 / float(np.min(q * tau * tau))
    f = lambda C: float(np.sum(_a(C, q, tau, beta) ** n)) - 1.0
    f_lo = f(lo)
    assert f_lo >= -PSI_TOL, "psi(C_lower) < 1: bracket assumption broken"
    it = 0
    if abs(f_lo) <= PSI_TOL:
        C = lo
    else:
        hi = 2.0 * lo
        while f(hi) >= 0:
            hi *= 2.0
            it += 1
            if it > MAX_BISECT:
                raise SolverError("could not bracket the psi root")
        C = 0.5 * (lo + hi)
        for it in range(it, it + MAX_BISECT):
            C = 0.5 * (lo + hi)
            v = f(C)
            if abs(v) <= PSI_TOL or hi - lo <= 4 * np.spacing(C):
                break
            if v > 0:
                lo = C
            else:
                hi = C
        else:
            raise SolverError("psi bisection did not converge")
    a = _a(C, q, tau, beta)
    x = a / np.sum(a) * math.sqrt(C)
    _check_phi(generalized(beta, 0.0, n), x, tau, q)
    return PsiSolveResult(C, a, x, it + 1, abs(f(C)))


def solve_generalized_equilibrium_maxnorm(qs, taus, beta: float, max_iter: int = 10_000) -> PsiSolveResult:
    """n = inf member of the family.

    Ratios to the max-norm obey x_r / ||x||_inf = a_r(C), and the largest ratio
    is exactly 1, which pins C to C_lower. That limit construction seeds a
    Newton solve of phi(x) = q on the original system; damped fixed-point
    iteration is the fallback.
    """
    q, tau = _as_arrays(qs, taus)
    if not beta > 0:
        raise ValueError("the max-norm construction needs beta > 0")
    alg = generalized(beta, 0.0, INF)
    C = 2.0 / float(np.min(q * tau * tau))
    a = _a(C, q, tau, beta)
    x = a / np.sum(a) * math.sqrt(C)
    it = 0

    def F(u):
        return fluid_phi(alg, np.exp(u), tau) / q - 1.0

    if np.max(np.abs(F(np.log(x)))) > 1e-13:
        sol = optimize.root(F, np.log(x), method="hybr", options={"xtol": 1e-15})
        it = int(sol.nfev)
        if sol.success and np.max(np.abs(F(sol.x))) < np.max(np.abs(F(np.log(x)))):
            x = np.exp(sol.x)
        else:
            for it in range(max_iter):
                # phi scales like 1/x^2 near a fixed direction: halfway step in log space
                ratio = fluid_phi(alg, x, tau) / q
                if np.max(np.abs(ratio - 1)) <= 1e-12:
                    break
                x = x * ratio ** 0.25
            else:
                raise SolverError("max-norm fixed point did not converge")
    _check_phi(alg, x, tau, q)
    S = float(np.sum(x))
    return PsiSolveResult(S * S, x / np.max(x), x, it + 1, float(np.max(np.abs(F(np.log(x))))))


def source_rates(alg: Algorithm, qs, taus) -> np.ndarray:
    """Rates of one source at fixed route prices: phi_r(x) = q_r where x_r > 0."""
    q, tau = _as_arrays(qs, taus)
    name = alg.name
    if name in ("newreno", "ewtcp"):
        a = alg.a if name == "ewtcp" else 1.0
        x = np.sqrt(2.0 * a / (tau * tau * q))
    elif name == "coupled" or (alg.family and alg.beta == 0):
        # only routes with the smallest q tau^2 carry traffic; ties split evenly
        m = q * tau * tau
        best = m <= np.min(m) * (1 + 1e-12)
        S = math.sqrt(2.0 / float(np.min(m)))
        x = np.where(best, S / np.sum(best), 0.0)
    elif name == "semicoupled":
        S = math.sqrt(float(np.sum(2.0 / (tau * tau * q))))
        x = 2.0 / (tau * tau * q * S)
    elif name == "max":
        S = math.sqrt(2.0 / float(np.min(q * tau * tau)))
        inv = 1.0 / (tau * q)
        x = S * inv / np.sum(inv)
    else:
        x = solve_generalized_equilibrium(q, tau, alg.beta, alg.n).x
    _check_phi(alg, x, tau, q)
    return x


def solve_test_network(alg: Algorithm, taus_mp, tau_g: float, c: float,
                       rtol: float = 1e-12) -> FriendlinessResult:
    """Equilibrium of one multipath source and one NewReno flow on a single bottleneck.

    Every route sees the same price p; bisection on log p closes sum(x_s) + x_g = c.
    """
    if not c > 0:
        raise ValueError("capacity must be positive")
    taus_mp = np.atleast_1d(np.asarray(taus_mp, dtype=float))

    def excess(p):
        xs = source_rates(alg, np.full(taus_mp.shape, p), taus_mp)
        xg = math.sqrt(2.0 / p) / tau_g     # NewReno: 2 / (tau_g^2 x_g^2) = p
        return float(np.sum(xs)) + xg - c, xs, xg

    lo, hi = -2.0, 2.0
    while excess(10.0 ** lo)[0] <= 0:
        lo -= 4.0
    while excess(10.0 ** hi)[0] >= 0:
        hi += 4.0
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        g, xs, xg = excess(10.0 ** mid)
        if abs(g) <= rtol * c:
            break
        if g > 0:
            lo = mid
        else:
            hi = mid
    else:
        raise SolverError("bottleneck price bisection did not converge")
    return FriendlinessResult(alg.label, float(np.sum(xs)), float(xg), 10.0 ** mid, abs(g), xs)


# ----------------------------------------------------- algebraic properties

def lemma3_vector(x, p: int) -> np.ndarray:
    """a_i = 2 x_i / sum(x) - x_i^p / sum(x^p); sums to 1 with sum(a^2) <= 1."""
    x = np.asarray(x, dtype=float)
    xp = (x / np.max(x)) ** p
    return 2.0 * x / np.sum(x) - xp / np.sum(xp)


def lemma4_form(a, z) -> float:
    """f(z) = ||z||^2 + sum(z) * a.z, positive for z != 0 when |a| = m <= 8."""
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    return float(z @ z + np.sum(z) * (a @ z))


def lemma4_slice_min(a, M: float) -> float:
    """Minimum of f over the hyperplane sum(z) = M, attained at z = M/2 (3/m - a)."""
    a = np.asarray(a, dtype=float)
    return M * M / 4.0 * (9.0 / a.size - float(a @ a))


def contraction_gap(alg: Algorithm, x1, x2, taus) -> float:
    """(x1 - x2)^T (Phi(x1) - Phi(x2)); negative under a negative definite Jacobian."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return float((x1 - x2) @ (fluid_phi(alg, x1, taus) - fluid_phi(alg, x2, taus)))
