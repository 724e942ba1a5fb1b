"""Design-criteria checkers, Jacobians of Phi_s, linearization spectra and the
oscillation metric.

Every checker is a sampling certificate: a verdict holds "at N samples", never
as a proof. Checkers return a ``CheckReport`` that serializes to
``{criterion, algorithm, verdict, samples, worst_witness}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algorithms import INF, Algorithm, fluid_k, fluid_phi, generalized
from .equilibrium import source_rates
from .fluidsim import equilibrium_residual, k_all, per_source
from .netmodel import LinkSpec, NetworkSpec, RouteSpec, SystemState, full_row_rank

SYM_RTOL = 1e-8
C2_EIG_TOL = 1e-10
C4_TOL = 1e-10
FD_RTOL = 1e-5
RAYLEIGH_TOL = 1e-8
X_RANGE = (1e-2, 1e2)


class AnalysisError(ValueError):
    pass


# ------------------------------------------------------------------ sampling

def sample_points(n: int = 100, sizes: Sequence[int] = (2, 3, 4), tau: float = 1.0,
                  seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(x, taus) pairs with x_r ~ logUniform[1e-2, 1e2] and a common rtt."""
    rng = np.random.default_rng(seed)
    lo, hi = np.log(X_RANGE[0]), np.log(X_RANGE[1])
    out = []
    for _ in range(n):
        m = int(rng.choice(sizes))
        out.append((np.exp(rng.uniform(lo, hi, m)), np.full(m, float(tau))))
    return out


def _points(points, seed=0):
    if points is None:
        return sample_points(seed=seed)
    if isinstance(points, int):
        return sample_points(points, seed=seed)
    return [(np.asarray(x, float), np.asarray(t, float)) for x, t in points]


# ------------------------------------------------------------------ jacobians

@dataclass(frozen=True)
class JacobianReport:
    J_phi: np.ndarray
    symmetric: bool
    sym_part_max_eig: float
    method: str


def _norm_grad(x: np.ndarray, n: float) -> tuple[float, np.ndarray]:
    """||x||_n and its gradient; for n = inf the gradient sits on the first argmax."""
    if n == INF:
        g = np.zeros_like(x)
        g[int(np.argmax(x))] = 1.0
        return float(np.max(x)), g
    m = float(np.max(x))
    N = m * float(np.sum((x / m) ** n)) ** (1.0 / n)
    return N, (x / N) ** (n - 1)


def _jacobian_closed(alg: Algorithm, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
    m = x.size
    S = float(np.sum(x))
    eye = np.eye(m)
    t2 = (tau * tau)[:, None]
    xr = x[:, None]
    name = alg.name
    if name in ("newreno", "ewtcp"):
        a = alg.a if name == "ewtcp" else 1.0
        return np.diag(-4.0 * a / (tau * tau * x ** 3))
    if name == "coupled":
        return -4.0 / (t2 * S ** 3) * np.ones((m, m))
    if name == "semicoupled":
        return -2.0 / (t2 * xr * S * S) - eye * 2.0 / (t2 * xr * xr * S)
    if name == "max":
        ratio = x / tau
        j = int(np.argmax(ratio))
        M = float(ratio[j])
        dM = np.zeros(m)
        dM[j] = 1.0 / tau[j]
        tr = tau[:, None]
        return 2.0 / tr * (dM[None, :] / (xr * S * S) - eye * M / (xr * xr * S * S)
                           - 2.0 * M / (xr * S ** 3))
    # generalized family
    b = alg.beta
    N, dN = _norm_grad(x, alg.n)
    return 2.0 / t2 * (-2.0 * (1.0 - b) / S ** 3
                       + b * dN[None, :] / (xr * S * S)
                       - eye * b * N / (xr * xr * S * S)
                       - 2.0 * b * N / (xr * S ** 3))


def _jacobian_fd(alg: Algorithm, x: np.ndarray, tau: np.ndarray) -> np.ndarray:
    m = x.size
    J = np.empty((m, m))
    for k in range(m):
        h = 1e-6 * max(x[k], 1.0)
        e = np.zeros(m)
        e[k] = h
        J[:, k] = (fluid_phi(alg, x + e, tau) - fluid_phi(alg, x - e, tau)) / (2.0 * h)
    return J


def sym_part(J: np.ndarray) -> np.ndarray:
    return 0.5 * (J + J.T)


def jacobian_phi(alg: Algorithm, xs, taus, method: str = "closed_form") -> JacobianReport:
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    tau = np.atleast_1d(np.asarray(taus, dtype=float))
    if x.shape != tau.shape:
        raise AnalysisError("rates and rtts differ in shape")
    if np.any(x <= 0):
        raise AnalysisError("Jacobian requested on the boundary x_r = 0")
    if method == "closed_form":
        J = _jacobian_closed(alg, x, tau)
    elif method == "finite_difference":
        if np.any(x - 1e-6 * np.maximum(x, 1.0) <= 0):
            raise AnalysisError("finite-difference stencil leaves the positive orthant")
        J = _jacobian_fd(alg, x, tau)
    else:
        raise AnalysisError(f"unknown method {method!r}")
    if not np.all(np.isfinite(J)):
        raise AnalysisError("non-finite Jacobian entry")
    scale = np.linalg.norm(J, np.inf)
    symmetric = bool(np.linalg.norm(J - J.T, np.inf) <= SYM_RTOL * scale)
    eig = float(np.max(np.linalg.eigvalsh(sym_part(J))))
    return JacobianReport(J, symmetric, eig, method)


def generalized_decomposition(alg: Algorithm, xs, tau: float) -> np.ndarray:
    """-(4(1-b)/tau^2 S^3) 11^T - (2 b N/tau^2 S^2) L^-1 (I + 1 a^T) L^-1, L = diag(x).

    a_r = 2 x_r/S - x_r^n/N^n (n = inf: indicator of the argmax). Equal rtts only.
    """
    if not alg.family:
        raise AnalysisError("decomposition applies to the generalized family only")
    x = np.asarray(xs, dtype=float)
    m = x.size
    S = float(np.sum(x))
    N, dN = _norm_grad(x, alg.n)
    a = 2.0 * x / S - x * dN / N
    Linv = np.diag(1.0 / x)
    b = alg.beta
    return (-4.0 * (1.0 - b) / (tau * tau * S ** 3) * np.ones((m, m))
            - 2.0 * b * N / (tau * tau * S * S) * Linv @ (np.eye(m) + np.outer(np.ones(m), a)) @ Linv)


# ------------------------------------------------------------------- checkers

@dataclass
class CheckReport:
    criterion: str
    algorithm: str
    verdict: bool
    samples: int
    worst_witness: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.verdict


def check_c0(alg: Algorithm, sample_points=None, seed: int = 0) -> CheckReport:
    """Symmetric Jacobian at every sampled point."""
    pts = _points(sample_points, seed)
    worst = {"asymmetry": 0.0}
    for x, tau in pts:
        rep = jacobian_phi(alg, x, tau)
        asym = float(np.linalg.norm(rep.J_phi - rep.J_phi.T, np.inf) / np.linalg.norm(rep.J_phi, np.inf))
        if asym > worst["asymmetry"]:
            worst = {"asymmetry": asym, "x": x, "taus": tau}
        if not rep.symmetric:
            return CheckReport("C0", alg.label, False, len(pts), worst)
    return CheckReport("C0", alg.label, True, len(pts), worst)


def check_c2(alg: Algorithm, sample_points=None, seed: int = 0) -> CheckReport:
    """Largest eigenvalue of [J]^+ below -1e-10 at every sampled point."""
    pts = _points(sample_points, seed)
    worst = {"max_eig": -INF}
    for x, tau in pts:
        e = jacobian_phi(alg, x, tau).sym_part_max_eig
        if e > worst["max_eig"]:
            worst = {"max_eig": e, "x": x, "taus": tau}
    return CheckReport("C2", alg.label, bool(worst["max_eig"] < -C2_EIG_TOL), len(pts), worst)


def check_c3(alg: Algorithm, taus=(1.0, 1.0), net: NetworkSpec | None = None,
             interior=None, seed: int = 0) -> CheckReport:
    """phi_r diverges as x_r -> 0 (others fixed) and is finite in the interior."""
    tau = np.asarray(taus, dtype=float)
    m = tau.size
    ts = np.geomspace(1.0, 1e-12, 25)
    worst: dict = {}
    ok = True
    for r in range(m):
        vals = []
        for t in ts:
            x = np.ones(m)
            x[r] = t
            vals.append(float(fluid_phi(alg, x, tau)[r]))
        vals = np.array(vals)
        x0 = np.ones(m)
        x0[r] = 0.0
        at_zero = float(fluid_phi(alg, x0, tau)[r])
        diverges = bool(np.all(np.diff(vals) > 0) and vals[-1] >= 1e6 * vals[0] and at_zero == INF)
        if not diverges:
            ok = False
            worst = {"route": r, "phi_at_1e-12": vals[-1], "phi_at_1": vals[0], "phi_at_0": at_zero}
            break
    pts = _points(interior if interior is not None else 100, seed)
    for x, t in pts:
        if not np.all(np.isfinite(fluid_phi(alg, x, t))):
            ok = False
            worst = {"x": x, "taus": t, "reason": "infinite marginal at an interior point"}
            break
    if net is not None and not full_row_rank(net.H):
        ok = False
        worst = {"reason": "routing matrix lacks full row rank"}
    return CheckReport("C3", alg.label, ok, m + len(pts), worst)


def _inverse(J: np.ndarray) -> tuple[np.ndarray, str]:
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        return np.linalg.pinv(J, rcond=1e-10), "pinv"
    return np.linalg.inv(J), "inv"


def check_c4(alg: Algorithm, sample_points=None, seed: int = 0) -> CheckReport:
    """Column sums of [dPhi/dx]^-1 are <= 1e-10 (relative to max |J^-1|) at every sample.

    For n = inf members the sums off the argmax route are exactly zero, so the
    tolerance has to scale with the inverse. A singular Jacobian (Coupled)
    falls back to the Moore-Penrose inverse.
    """
    pts = _points(sample_points, seed)
    worst = {"max_column_sum": -INF}
    kinds = set()
    for x, tau in pts:
        Jinv, kind = _inverse(jacobian_phi(alg, x, tau).J_phi)
        kinds.add(kind)
        col = float(np.max(Jinv.sum(axis=0)) / np.max(np.abs(Jinv)))
        if col > worst["max_column_sum"]:
            worst = {"max_column_sum": col, "x": x, "taus": tau, "inverse": kind}
    worst["inverses_used"] = sorted(kinds)
    return CheckReport("C4", alg.label, bool(worst["max_column_sum"] <= C4_TOL), len(pts), worst)


def check_c5(alg: Algorithm, taus=(1.0, 1.0)) -> CheckReport:
    """phi_r -> 0 as x_r -> inf with the other rates fixed."""
    tau = np.asarray(taus, dtype=float)
    m = tau.size
    ts = np.geomspace(1.0, 1e12, 25)
    for r in range(m):
        vals = []
        for t in ts:
            x = np.ones(m)
            x[r] = t
            vals.append(float(fluid_phi(alg, x, tau)[r]))
        vals = np.array(vals)
        tail = vals[len(vals) // 2:]
        if not (np.all(np.diff(tail) < 0) and vals[-1] <= 1e-10 * vals[0]):
            return CheckReport("C5", alg.label, False, m,
                               {"route": r, "phi_at_1": vals[0], "phi_at_1e12": vals[-1]})
    return CheckReport("C5", alg.label, True, m, {})


def c1_fixture(capacity: float = 1e5, tau: float = 0.1) -> NetworkSpec:
    """Three links; a 3-route source, a 2-route source with a 2-hop route, one single-path flow.

    Capacities are large so that 1e-6 c sits above the NewReno rate at p = 1e6.
    """
    links = tuple(LinkSpec(capacity) for _ in range(3))
    routes = (RouteSpec(0, (0,), tau), RouteSpec(0, (1,), tau), RouteSpec(0, (2,), tau),
              RouteSpec(1, (0, 1), tau), RouteSpec(1, (2,), tau),
              RouteSpec(2, (1,), tau))
    return NetworkSpec(links, routes)


def _source_link_rates(alg, net, s, p):
    idx = list(net.sources[s])
    q = net.H[:, idx].T @ p
    x = source_rates(alg, q, net.rtts[idx])
    return net.H[:, idx] @ x


def check_c1(alg: Algorithm, net: NetworkSpec | None = None, price_samples: int = 20,
             seed: int = 0, p_large: float = 1e6) -> CheckReport:
    """Every y_l^s(p) is nonincreasing in p_l and vanishes as p_l grows.

    Monotonicity is a forward-difference sign test at sampled p > 0 with
    slack 1e-9 (relative); the limit test asks y_l^s <= 1e-6 c_l at p_l = 1e6.
    """
    net = c1_fixture() if net is None else net
    algs = per_source(net, alg)
    rng = np.random.default_rng(seed)
    table = []
    worst = {"increase": -INF}
    ok = True
    for _ in range(price_samples):
        p = np.exp(rng.uniform(np.log(1e-4), np.log(1e-1), net.n_links))
        for s, a in enumerate(algs):
            links = np.flatnonzero(net.H[:, list(net.sources[s])].sum(axis=1))
            base = _source_link_rates(a, net, s, p)
            for l in links:
                pp = p.copy()
                pp[l] *= 1.0 + 1e-3
                bumped = _source_link_rates(a, net, s, pp)
                inc = float((bumped[l] - base[l]) / max(base[l], 1e-300))
                table.append({"source": s, "link": int(l), "y": base[l], "y_bumped": bumped[l]})
                if inc > worst["increase"]:
                    worst = {"increase": inc, "source": s, "link": int(l), "p": p}
                if inc > 1e-9:
                    ok = False
                pl = p.copy()
                pl[l] = p_large
                far = _source_link_rates(a, net, s, pl)[l]
                if far > 1e-6 * net.capacities[l]:
                    ok = False
                    worst = {"reason": "y_l^s does not vanish", "source": s, "link": int(l),
                             "y_at_large_p": far}
    worst["witness_table_rows"] = len(table)
    return CheckReport("C1", alg.label, ok, price_samples, worst)


def table_one(alg: Algorithm, n: int = 100, seed: int = 0) -> dict[str, CheckReport]:
    pts = sample_points(n, seed=seed)
    return {"C0": check_c0(alg, pts), "C1": check_c1(alg, seed=seed),
            "C2": check_c2(alg, pts), "C3": check_c3(alg, (1.0, 1.0, 1.0), seed=seed),
            "C4": check_c4(alg, pts), "C5": check_c5(alg, (1.0, 1.0, 1.0))}


def table_one_row(alg: Algorithm, n: int = 100, seed: int = 0) -> dict[str, bool]:
    """Yes/No pattern in the column layout C0, C1, C2+C3, C4, C5."""
    r = table_one(alg, n, seed)
    return {"C0": r["C0"].verdict, "C1": r["C1"].verdict,
            "C2,C3": r["C2"].verdict and r["C3"].verdict,
            "C4": r["C4"].verdict, "C5": r["C5"].verdict}


# -------------------------------------------------------------- linearization

@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    spectral_abscissa: float
    rayleigh_bound: np.ndarray
    lambda_bar: float
    J_star: np.ndarray
    active_links: np.ndarray

    @property
    def rayleigh_gap(self) -> float:
        """max |Re(lambda) - quotient| over eigenpairs (zero by the proof identity)."""
        return float(np.max(np.abs(self.eigenvalues.real - self.rayleigh_bound)))


def phi_jacobian_net(net: NetworkSpec, algs, x) -> np.ndarray:
    """Block-diagonal dPhi/dx over all routes."""
    algs = per_source(net, algs)
    J = np.zeros((net.n_routes, net.n_routes))
    for a, idx in zip(algs, net.sources):
        idx = list(idx)
        J[np.ix_(idx, idx)] = jacobian_phi(a, x[idx], net.rtts[idx]).J_phi
    return J


def linearization(net: NetworkSpec, algs, equilibrium: SystemState,
                  max_residual: float = 1e-6, p_tol: float = 1e-12) -> SpectrumReport:
    """Spectrum of J* = [[L_k dPhi/dx, -L_k H^T], [L_g H, 0]] at the equilibrium.

    Links with zero price are removed first.
    """
    algs = per_source(net, algs)
    res = equilibrium_residual(net, algs, equilibrium)
    if not res <= max_residual:
        raise AnalysisError(f"equilibrium residual {res:.3g} exceeds {max_residual:g}")
    x = equilibrium.rates
    active = equilibrium.prices > p_tol
    H = net.H[active]
    Lk = np.diag(k_all(net, algs, x))
    Lg = np.diag(net.gains[active])
    Jphi = phi_jacobian_net(net, algs, x)
    nR, nA = net.n_routes, int(active.sum())
    Js = np.block([[Lk @ Jphi, -Lk @ H.T], [Lg @ H, np.zeros((nA, nA))]])
    lam, Z = np.linalg.eig(Js)
    Jsym = sym_part(Jphi)
    kinv = 1.0 / np.diag(Lk)
    ginv = 1.0 / np.diag(Lg)
    quot = np.empty(lam.size)
    for i in range(lam.size):
        zx, zp = Z[:nR, i], Z[nR:, i]
        num = np.real(np.conj(zx) @ Jsym @ zx)
        den = float(np.sum(kinv * np.abs(zx) ** 2) + np.sum(ginv * np.abs(zp) ** 2))
        quot[i] = num / den
    return SpectrumReport(lam, float(np.max(lam.real)), quot, float(np.max(quot)), Js, active)


def compare_responsiveness(a: SpectrumReport, b: SpectrumReport) -> dict:
    """Orders two linearizations by lambda_bar (smaller = faster local convergence)."""
    if math.isclose(a.lambda_bar, b.lambda_bar, rel_tol=1e-12, abs_tol=1e-15):
        order = "equal"
    else:
        order = "a<b" if a.lambda_bar < b.lambda_bar else "a>b"
    return {"order": order, "lambda_bar": (a.lambda_bar, b.lambda_bar),
            "spectral_abscissa": (a.spectral_abscissa, b.spectral_abscissa)}


# ---------------------------------------------------------------- oscillation

@dataclass(frozen=True)
class OscillationReport:
    D_s: float
    mc_estimate: float | None = None
    mc_stderr: float | None = None


def oscillation_metric(alg: Algorithm, xs, taus, qs, mc_samples: int = 0,
                       seed: int = 0) -> OscillationReport:
    """D_s = sum(tau q k) / (||x||_1 sum(tau q x)), first order in q.

    With ``mc_samples`` the same quantity is estimated by direct simulation of
    per-packet losses over one round trip (windows rounded to whole packets).
    """
    x = np.asarray(xs, dtype=float)
    tau = np.asarray(taus, dtype=float)
    q = np.asarray(qs, dtype=float)
    if np.any(x <= 0) or np.any(q <= 0):
        raise AnalysisError("oscillation metric needs positive rates and prices")
    k = fluid_k(alg, x, tau)
    S = float(np.sum(x))
    D = float(np.sum(tau * q * k) / (S * np.sum(tau * q * x)))
    if not mc_samples:
        return OscillationReport(D)
    sizes = np.maximum(1, np.rint(x * tau)).astype(int)
    d = k / (x * S)                  # relative aggregate drop when route r cuts
    mc = lemma1_oracle(sizes, q, d, mc_samples, seed)
    return OscillationReport(D, mc.estimate, mc.stderr)


@dataclass(frozen=True)
class Lemma1Result:
    estimate: float
    stderr: float
    closed_form: float
    exact: float
    conditioned: int


def lemma1_closed_form(sizes, probs, weights) -> float:
    n = np.asarray(sizes, float)
    q = np.asarray(probs, float)
    d = np.asarray(weights, float)
    return float(np.sum(d * q * n) / np.sum(q * n))


def lemma1_exact(sizes, probs, weights) -> float:
    """E[sum D_k | any loss] without the first-order truncation."""
    n = np.asarray(sizes, float)
    q = np.asarray(probs, float)
    d = np.asarray(weights, float)
    hit = -np.expm1(n * np.log1p(-q))               # 1 - (1-q)^n
    none = float(np.exp(np.sum(n * np.log1p(-q))))
    return float(np.sum(d * hit) / (1.0 - none))


def lemma1_oracle(sizes, probs, weights, samples: int = 1_000_000, seed: int = 0,
                  chunk: int = 50_000) -> Lemma1Result:
    """Monte Carlo of E[sum_k d_k 1(set k has a loss) | some loss].

    Each trial draws every binary element; trials without any loss are
    discarded, so the standard error is over the conditioned trials.
    """
    n = np.asarray(sizes, dtype=int)
    q = np.asarray(probs, dtype=float)
    d = np.asarray(weights, dtype=float)
    if not (n.shape == q.shape == d.shape) or np.any(n < 1):
        raise AnalysisError("sizes, probs and weights must align and sizes be >= 1")
    if np.any(q <= 0) or np.any(q >= 1):
        raise AnalysisError("probabilities must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    owner = np.repeat(np.arange(n.size), n)
    qe = q[owner]
    total = 0.0
    total_sq = 0.0
    count = 0
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        loss = rng.random((b, qe.size)) < qe
        per_set = np.zeros((b, n.size), dtype=bool)
        for i in range(n.size):
            per_set[:, i] = loss[:, owner == i].any(axis=1)
        hit = per_set.any(axis=1)
        vals = per_set[hit] @ d
        total += float(vals.sum())
        total_sq += float(vals @ vals)
        count += int(hit.sum())
        done += b
    if count < 2:
        raise AnalysisError("too few conditioned trials for an estimate")
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0) * count / (count - 1)
    return Lemma1Result(mean, math.sqrt(var / count), lemma1_closed_form(n, q, d),
                        lemma1_exact(n, q, d), count)


# ------------------------------------------------------------------- tradeoff

def tradeoff_witness(beta1: float, beta2: float, xs, tau: float = 1.0, eta: float = 0.0,
                     n: float = INF) -> dict:
    """At one point: phi(beta2) >= phi(beta1), and the max eigenvalue of [J2]^+ - [J1]^+."""
    x = np.asarray(xs, dtype=float)
    t = np.full(x.size, tau)
    a1, a2 = generalized(beta1, eta, n), generalized(beta2, eta, n)
    dphi = fluid_phi(a2, x, t) - fluid_phi(a1, x, t)
    J1 = jacobian_phi(a1, x, t).J_phi
    J2 = jacobian_phi(a2, x, t).J_phi
    D = sym_part(J2) - sym_part(J1)
    scale = max(np.linalg.norm(J1, np.inf), np.linalg.norm(J2, np.inf))
    return {"phi_min_gap": float(np.min(dphi)), "phi_scale": float(np.max(np.abs(fluid_phi(a2, x, t)))),
            "diff_max_eig": float(np.max(np.linalg.eigvalsh(D))), "jac_scale": float(scale)}
