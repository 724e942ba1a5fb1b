"""Network topology, routing matrix and state vectors.

Networks here are tiny (a handful of links and routes), so everything is dense
numpy. Routes are grouped into sources; route indices are assigned in
construction order and stay stable for the lifetime of a ``NetworkSpec``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised when a network or state is malformed."""


@dataclass(frozen=True)
class LinkSpec:
    capacity: float                 # packets / second
    price_gain: float = 1.0         # gamma_l
    buffer: int = 100               # packets, packet simulator only
    prop_delay: float = 0.0         # seconds, packet simulator only
    loss_prob: float = 0.0          # Bernoulli loss mode, packet simulator only

    def __post_init__(self):
        if not self.capacity > 0:
            raise NetworkError(f"link capacity must be > 0, got {self.capacity}")
        if not self.price_gain > 0:
            raise NetworkError(f"price_gain must be > 0, got {self.price_gain}")
        if self.buffer < 1:
            raise NetworkError(f"buffer must be >= 1, got {self.buffer}")
        if self.prop_delay < 0:
            raise NetworkError(f"prop_delay must be >= 0, got {self.prop_delay}")
        if not 0.0 <= self.loss_prob < 1.0:
            raise NetworkError(f"loss_prob must lie in [0, 1), got {self.loss_prob}")


@dataclass(frozen=True)
class RouteSpec:
    source: int
    links: tuple[int, ...]
    rtt: float

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(int(l) for l in self.links))
        if not self.links:
            raise NetworkError("a route needs at least one link")
        if len(set(self.links)) != len(self.links):
            raise NetworkError(f"route visits a link twice: {self.links}")
        if not self.rtt > 0:
            raise NetworkError(f"route rtt must be > 0, got {self.rtt}")


@dataclass(frozen=True)
class NetworkSpec:
    links: tuple[LinkSpec, ...]
    routes: tuple[RouteSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "routes", tuple(self.routes))
        if not self.links or not self.routes:
            raise NetworkError("network needs at least one link and one route")
        nl = len(self.links)
        for i, r in enumerate(self.routes):
            bad = [l for l in r.links if not 0 <= l < nl]
            if bad:
                raise NetworkError(f"route {i} references unknown links {bad}")
        ids = sorted({r.source for r in self.routes})
        if ids != list(range(len(ids))):
            raise NetworkError(f"source ids must be 0..S-1 without gaps, got {ids}")

    @classmethod
    def build(cls, links: Sequence[LinkSpec], routes: Sequence[RouteSpec]) -> "NetworkSpec":
        return cls(tuple(links), tuple(routes))

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    @cached_property
    def sources(self) -> tuple[tuple[int, ...], ...]:
        """Route indices grouped by source, each group in construction order."""
        n_src = 1 + max(r.source for r in self.routes)
        groups: list[list[int]] = [[] for _ in range(n_src)]
        for i, r in enumerate(self.routes):
            groups[r.source].append(i)
        return tuple(tuple(g) for g in groups)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @cached_property
    def H(self) -> np.ndarray:
        H = np.zeros((self.n_links, self.n_routes))
        for j, r in enumerate(self.routes):
            H[list(r.links), j] = 1.0
        H.flags.writeable = False
        return H

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array([l.capacity for l in self.links], dtype=float)

    @cached_property
    def gains(self) -> np.ndarray:
        return np.array([l.price_gain for l in self.links], dtype=float)

    @cached_property
    def rtts(self) -> np.ndarray:
        return np.array([r.rtt for r in self.routes], dtype=float)

    def check_packet_delays(self) -> None:
        """The packet simulator needs each rtt to cover its links' propagation delays."""
        for i, r in enumerate(self.routes):
            prop = sum(self.links[l].prop_delay for l in r.links)
            if r.rtt < prop - 1e-12:
                raise NetworkError(
                    f"route {i}: rtt {r.rtt} is shorter than its propagation delay {prop}")


@dataclass
class SystemState:
    rates: np.ndarray                              # x, per route
    prices: np.ndarray                             # p, per link

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.prices = np.asarray(self.prices, dtype=float)

    def copy(self) -> "SystemState":
        return SystemState(self.rates.copy(), self.prices.copy())

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.rates >= 0) and np.all(self.prices >= 0))


def routing_matrix(net: NetworkSpec) -> np.ndarray:
    return np.array(net.H)


def _check_dims(net: NetworkSpec, state: SystemState) -> None:
    if state.rates.shape != (net.n_routes,):
        raise NetworkError(
            f"rates has shape {state.rates.shape}, network has {net.n_routes} routes")
    if state.prices.shape != (net.n_links,):
        raise NetworkError(
            f"prices has shape {state.prices.shape}, network has {net.n_links} links")


def aggregate_price(net: NetworkSpec, state: SystemState) -> np.ndarray:
    """Route prices q = H^T p."""
    _check_dims(net, state)
    return net.H.T @ state.prices


def aggregate_rate(net: NetworkSpec, state: SystemState) -> np.ndarray:
    """Link loads y = H x."""
    _check_dims(net, state)
    return net.H @ state.rates


def full_row_rank(H: np.ndarray, rtol: float = 1e-9) -> bool:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    s = np.linalg.svd(H, compute_uv=False)
    if s.size == 0:
        return False
    rank = int(np.sum(s > rtol * s[0]))
    return rank == H.shape[0]


def single_bottleneck(c: float, taus_mp: Sequence[float], tau_sp: float | None = None,
                      gain: float = 1.0, buffer: int = 100, prop_delay: float = 0.0) -> NetworkSpec:
    """One bottleneck link shared by one multipath source and, optionally, one single-path source.

    This is the friendliness test network collapsed to its only bottleneck.
    """
    link = LinkSpec(c, gain, buffer, prop_delay)
    routes = [RouteSpec(0, (0,), t) for t in taus_mp]
    if tau_sp is not None:
        routes.append(RouteSpec(1, (0,), tau_sp))
    return NetworkSpec((link,), tuple(routes))


def two_link_shared(c1: float, c2: float, tau: float, n_sp: int = 1, gain: float = 1.0,
                    buffer: int = 100, prop_delay: float = 0.0) -> NetworkSpec:
    """Two links; a multipath source uses both, ``n_sp`` single-path sources share link 2."""
    links = (LinkSpec(c1, gain, buffer, prop_delay), LinkSpec(c2, gain, buffer, prop_delay))
    routes = [RouteSpec(0, (0,), tau), RouteSpec(0, (1,), tau)]
    routes += [RouteSpec(1 + i, (1,), tau) for i in range(n_sp)]
    return NetworkSpec(links, tuple(routes))
