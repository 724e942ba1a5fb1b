"""Window-update algorithms in fluid form (k_r, phi_r) and packet form (I_r, D_r).

All per-source functions take the rate (or window) vector of ONE source and the
matching per-route round-trip times. Every function is pure.

Fluid forms, with S = sum(x), N = ||x||_n:

    newreno/ewtcp  k = x_r^2/2   phi = 2a / (tau_r^2 x_r^2)
    coupled        k = x_r^2/2   phi = 2 / (tau_r^2 S^2)
    semicoupled    k = x_r^2/2   phi = 2 / (tau_r^2 x_r S)
    max            k = x_r^2/2   phi = 2 max_k(x_k/tau_k) / (tau_r x_r S^2)
    generalized    k = x_r (x_r + eta (||x||_inf - x_r)) / 2
                   phi = 2 ((1-beta) x_r + beta N) / (tau_r^2 x_r S^2)

Balia is generalized(beta=0.2, eta=0.5, n=inf) in fluid form, with its own
per-ACK increment and a per-loss decrement capped at 1.5 w_r/2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

INF = math.inf
RATE_FLOOR = 1e-9           # packets/s, guarded-mode floor
BALIA_CAP = 1.5

NAMES = ("newreno", "ewtcp", "coupled", "semicoupled", "max", "generalized", "balia")
LEGACY = ("newreno", "ewtcp", "coupled", "semicoupled", "max")


class AlgorithmError(ValueError):
    pass


@dataclass(frozen=True)
class Algorithm:
    name: str
    a: float = 1.0          # ewtcp aggressiveness
    beta: float = 0.0
    eta: float = 0.0
    n: float = INF          # positive int or INF
    cap: float = BALIA_CAP  # balia decrement cap

    def __post_init__(self):
        if self.name not in NAMES:
            raise AlgorithmError(f"unknown algorithm {self.name!r}; expected one of {NAMES}")
        if self.name == "ewtcp" and not self.a > 0:
            raise AlgorithmError("ewtcp needs a > 0")
        if self.name in ("generalized", "balia"):
            if self.beta < 0 or self.eta < 0:
                raise AlgorithmError("generalized needs beta >= 0 and eta >= 0")
            if not (self.n == INF or (float(self.n).is_integer() and self.n >= 1)):
                raise AlgorithmError(f"norm order n must be a positive integer or inf, got {self.n}")

    @property
    def family(self) -> bool:
        """True for members of the (beta, eta, n) family, Balia included."""
        return self.name in ("generalized", "balia")

    @property
    def separable_gain(self) -> bool:
        """k_r depends on x_r alone."""
        return not self.family or self.eta == 0

    @property
    def label(self) -> str:
        if self.name == "ewtcp" and self.a != 1.0:
            return f"ewtcp(a={self.a:g})"
        if self.name == "generalized":
            n = "inf" if self.n == INF else int(self.n)
            return f"generalized(beta={self.beta:g},eta={self.eta:g},n={n})"
        return self.name

    def as_dict(self) -> dict:
        d = {"name": self.name}
        if self.name == "ewtcp":
            d["a"] = self.a
        if self.name == "generalized":
            d.update(beta=self.beta, eta=self.eta, n="inf" if self.n == INF else int(self.n))
        return d


def newreno() -> Algorithm:
    return Algorithm("newreno")


def ewtcp(a: float = 1.0) -> Algorithm:
    return Algorithm("ewtcp", a=a)


def coupled() -> Algorithm:
    return Algorithm("coupled")


def semicoupled() -> Algorithm:
    return Algorithm("semicoupled")


def maxalg() -> Algorithm:
    return Algorithm("max")


def generalized(beta: float, eta: float = 0.0, n: float = INF) -> Algorithm:
    return Algorithm("generalized", beta=beta, eta=eta, n=n)


def balia() -> Algorithm:
    return Algorithm("balia", beta=0.2, eta=0.5, n=INF)


def from_config(spec: dict | str) -> Algorithm:
    """Build an algorithm from a name or a ``{"name": ..., params...}`` mapping."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = str(spec.pop("name", "")).lower()
    if name not in NAMES:
        raise AlgorithmError(f"unknown algorithm {name!r}; expected one of {NAMES}")
    if name == "ewtcp":
        return ewtcp(float(spec.pop("a", 1.0)))
    if name == "generalized":
        n = spec.pop("n", "inf")
        n = INF if str(n).lower() in ("inf", "infinity") else int(n)
        return generalized(float(spec.pop("beta")), float(spec.pop("eta", 0.0)), n)
    return {"newreno": newreno, "coupled": coupled, "semicoupled": semicoupled,
            "max": maxalg, "balia": balia}[name]()


def _norm(x: np.ndarray, n: float) -> float:
    if n == INF:
        return float(np.max(x))
    if n == 1:
        return float(np.sum(x))
    m = float(np.max(x))
    if m == 0.0:
        return 0.0
    # scale before powering so large n does not overflow
    return m * float(np.sum((x / m) ** n)) ** (1.0 / n)


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


# ---------------------------------------------------------------- fluid form

def fluid_k(alg: Algorithm, xs, taus) -> np.ndarray:
    x = _vec(xs)
    if alg.family and alg.eta != 0:
        return 0.5 * x * (x + alg.eta * (np.max(x) - x))
    return 0.5 * x * x


def fluid_phi(alg: Algorithm, xs, taus, guarded: bool = False) -> np.ndarray:
    """Marginal phi_r for every route of one source.

    A route with x_r == 0 gets ``math.inf`` when phi diverges there. With
    ``guarded=True`` rates are floored at RATE_FLOOR first (integrator use).
    """
    x = _vec(xs)
    tau = _vec(taus)
    if x.shape != tau.shape:
        raise AlgorithmError(f"rates {x.shape} and rtts {tau.shape} differ in shape")
    if np.any(x < 0):
        raise AlgorithmError("rates must be nonnegative")
    if guarded:
        x = np.maximum(x, RATE_FLOOR)
    S = float(np.sum(x))
    name = alg.name
    with np.errstate(divide="ignore", invalid="ignore"):
        if name in ("newreno", "ewtcp"):
            a = alg.a if name == "ewtcp" else 1.0
            phi = 2.0 * a / (tau * tau * x * x)
        elif name == "coupled":
            phi = 2.0 / (tau * tau * S * S)
        elif name == "semicoupled":
            phi = 2.0 / (tau * tau * x * S)
        elif name == "max":
            m = float(np.max(x / tau))
            phi = 2.0 * m / (tau * x * S * S)
        else:
            N = _norm(x, alg.n)
            phi = (1.0 - alg.beta) / (S * S) * np.ones_like(x)
            if alg.beta > 0:
                phi = phi + alg.beta * N / (x * S * S)
            phi = 2.0 * phi / (tau * tau)
    phi = np.where(np.isnan(phi), INF, phi)
    return phi


# --------------------------------------------------------------- packet form

def _rates_alpha(ws, taus):
    w = _vec(ws)
    tau = _vec(taus)
    x = w / tau
    return w, tau, x, np.max(x) / x


def packet_increment(alg: Algorithm, ws, taus) -> np.ndarray:
    """Per-ACK window increase I_r(w_s) for every route of one source."""
    w = _vec(ws)
    tau = _vec(taus)
    if np.any(w <= 0):
        raise AlgorithmError("packet increments need positive windows on every route")
    name = alg.name
    if name == "newreno" or (name == "balia" and w.size == 1):
        # single-path balia is newreno; same expression keeps traces bit-identical
        return 1.0 / w
    if name == "ewtcp":
        return alg.a / w
    x = w / tau
    S = float(np.sum(x))
    if name == "coupled":
        return (w / (tau * tau)) / (S * S)
    if name == "semicoupled":
        return 1.0 / (tau * S)
    if name == "max":
        return np.minimum(float(np.max(w / (tau * tau))) / (S * S), 1.0 / w)
    alpha = float(np.max(x)) / x
    if name == "balia":
        return x / (tau * S * S) * ((1.0 + alpha) / 2.0) * ((4.0 + alpha) / 5.0)
    # generalized: invert the packet<->fluid conversion exactly
    return fluid_phi(alg, x, tau) * _generalized_decrement(alg, w, alpha)


def _generalized_decrement(alg: Algorithm, w: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return 0.5 * w * (1.0 + alg.eta * (alpha - 1.0))


def packet_decrement(alg: Algorithm, ws, taus, r: int) -> float:
    """Per-loss window decrease D_r(w_s) on route ``r`` (index within the source)."""
    w = _vec(ws)
    if w[r] <= 0:
        raise AlgorithmError("packet decrements need a positive window on the lossy route")
    if alg.name in LEGACY or w.size == 1:
        return w[r] / 2.0
    _, _, _, alpha = _rates_alpha(w, taus)
    if alg.name == "balia":
        return w[r] / 2.0 * min(alpha[r], alg.cap)
    return float(_generalized_decrement(alg, w, alpha)[r])


@dataclass(frozen=True)
class GainAndMarginal:
    k: np.ndarray
    phi: np.ndarray


def packet_to_fluid(increment: Callable, decrement: Callable, ws, taus) -> GainAndMarginal:
    """Convert per-ACK/per-loss rules into (k, phi): k = x D / tau, phi = I / D."""
    w = _vec(ws)
    tau = _vec(taus)
    x = w / tau
    I = _vec(increment(w, tau))
    D = np.array([decrement(w, tau, r) for r in range(w.size)], dtype=float)
    if np.any(D <= 0):
        raise AlgorithmError("zero window decrement leaves phi undefined")
    return GainAndMarginal(k=x / tau * D, phi=I / D)


def packet_to_fluid_for(alg: Algorithm, ws, taus) -> GainAndMarginal:
    return packet_to_fluid(partial(packet_increment, alg), partial(packet_decrement, alg), ws, taus)


# ------------------------------------------------- scalar forms (per event)
#
# The packet simulator calls these once per ACK or loss; plain floats avoid
# numpy call overhead. Tests hold them to the array forms above.

def increment_one(alg: Algorithm, w: list, tau: list, r: int) -> float:
    """I_r for one route; same rules as ``packet_increment``."""
    name = alg.name
    m = len(w)
    if name == "newreno" or (name == "balia" and m == 1):
        return 1.0 / w[r]
    if name == "ewtcp":
        return alg.a / w[r]
    x = [w[i] / tau[i] for i in range(m)]
    S = sum(x)
    if name == "coupled":
        return (w[r] / (tau[r] * tau[r])) / (S * S)
    if name == "semicoupled":
        return 1.0 / (tau[r] * S)
    if name == "max":
        best = max(w[i] / (tau[i] * tau[i]) for i in range(m))
        return min(best / (S * S), 1.0 / w[r])
    xmax = max(x)
    alpha = xmax / x[r]
    if name == "balia":
        return x[r] / (tau[r] * S * S) * ((1.0 + alpha) / 2.0) * ((4.0 + alpha) / 5.0)
    if alg.n == INF:
        N = xmax
    else:
        N = xmax * sum((v / xmax) ** alg.n for v in x) ** (1.0 / alg.n)
    phi = 2.0 * ((1.0 - alg.beta) + alg.beta * N / x[r]) / (tau[r] * tau[r] * S * S)
    return phi * 0.5 * w[r] * (1.0 + alg.eta * (alpha - 1.0))


def decrement_one(alg: Algorithm, w: list, tau: list, r: int) -> float:
    """D_r for one route; same rules as ``packet_decrement``."""
    m = len(w)
    if alg.name in LEGACY or m == 1:
        return w[r] / 2.0
    xmax = max(w[i] / tau[i] for i in range(m))
    alpha = xmax / (w[r] / tau[r])
    if alg.name == "balia":
        return w[r] / 2.0 * min(alpha, alg.cap)
    return 0.5 * w[r] * (1.0 + alg.eta * (alpha - 1.0))
