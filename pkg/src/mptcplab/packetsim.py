"""Event-driven packet simulator.

Minimal congestion-avoidance model: each route keeps a fractional window w_r
and sends while in_flight < floor(w_r). Links are FIFO with a finite
drop-tail buffer (optionally also Bernoulli loss) and fixed propagation delay.
Every ACK adds I_r(w_s); a loss, noticed one smoothed RTT after the packet
was sent, cuts D_r(w_s) unless the packet was sent before the route's last
cut (once-per-window reduction). Windows never fall below 1 and there is no
slow start.

The algorithm formulas see the smoothed measured RTT (EWMA gain 1/8) in place
of tau_r.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algorithms import Algorithm, decrement_one, increment_one
from .analysis import oscillation_metric
from .netmodel import NetworkSpec
from .reporting import jsonable

SRTT_GAIN = 1.0 / 8.0

_ARRIVE, _ACK, _LOSS, _START, _STOP, _SAMPLE = range(6)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSchedule:
    """Activity window of one source (flow id = source id)."""
    flow: int
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ScheduleError(f"flow {self.flow}: start {self.start} must precede end {self.end}")
        if self.start < 0:
            raise ScheduleError(f"flow {self.flow}: negative start time")


@dataclass
class FlowState:
    windows: list
    in_flight: list
    srtt: list


@dataclass
class LossEpoch:
    t: float
    flow: int
    route: int
    window_before: float
    window_after: float
    aggregate_before: float
    aggregate_after: float


@dataclass
class PacketTrace:
    times: np.ndarray                  # sample times
    windows: np.ndarray                # (T, R)
    in_flight: np.ndarray              # (T, R)
    queues: np.ndarray                 # (T, L)
    sent: np.ndarray                   # (T, R) cumulative
    acked: np.ndarray                  # (T, R) cumulative
    lost: np.ndarray                   # (T, R) cumulative, counted when noticed
    epochs: list
    flow_of_route: np.ndarray
    schedule: tuple
    horizon: float
    seed: int
    max_queue: np.ndarray              # per link, over the whole run
    buffers: np.ndarray
    rtts: np.ndarray                   # configured per-route rtt
    events: list = field(default_factory=list)

    def routes_of(self, flow: int) -> np.ndarray:
        return np.flatnonzero(self.flow_of_route == flow)

    def conservation_ok(self) -> bool:
        return bool(np.all(self.sent == self.acked + self.lost + self.in_flight))

    def queue_bound_ok(self) -> bool:
        return bool(np.all(self.max_queue <= self.buffers))

    def to_csv(self, path) -> None:
        """Long format: one row per (sample, route), plus loss-epoch marker rows."""
        nl = self.queues.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "flow", "route", "w", "in_flight", "sent", "acked", "lost"]
                       + [f"queue_{l + 1}" for l in range(nl)] + ["event"])
            for i, t in enumerate(self.times):
                qs = [int(v) for v in self.queues[i]]
                for r in range(self.windows.shape[1]):
                    w.writerow([repr(float(t)), int(self.flow_of_route[r]), r,
                                repr(float(self.windows[i, r])), int(self.in_flight[i, r]),
                                int(self.sent[i, r]), int(self.acked[i, r]), int(self.lost[i, r])]
                               + qs + [""])
            for e in self.epochs:
                w.writerow([repr(e.t), e.flow, e.route, repr(e.window_after)] + [""] * (4 + nl) + ["cut"])


class _Sim:
    def __init__(self, net: NetworkSpec, algs, schedule, horizon, seed, sample_dt, log_events,
                 ack_jitter=0.0):
        self.net = net
        self.algs = algs
        self.horizon = horizon
        self.rng = random.Random(seed)
        self.log_events = log_events
        self.ack_jitter = ack_jitter
        self.events: list = []
        nR = net.n_routes
        self.route_links = [r.links for r in net.routes]
        self.flow_of = [r.source for r in net.routes]
        self.groups = [list(g) for g in net.sources]
        self.pos = [0] * nR
        for g in self.groups:
            for i, r in enumerate(g):
                self.pos[r] = i
        self.base_rtt = [r.rtt for r in net.routes]
        self.reverse = [r.rtt - sum(net.links[l].prop_delay for l in r.links) for r in net.routes]
        self.svc = [1.0 / l.capacity for l in net.links]
        self.prop = [l.prop_delay for l in net.links]
        self.buf = [l.buffer for l in net.links]
        self.ploss = [l.loss_prob for l in net.links]
        self.queue = [deque() for _ in net.links]
        self.last_dep = [0.0] * net.n_links
        self.max_q = [0] * net.n_links
        # per-source views share the same list objects, so updates are visible
        self.w = [[1.0] * len(g) for g in self.groups]
        self.srtt = [[self.base_rtt[r] for r in g] for g in self.groups]
        self.inflight = [0] * nR
        self.sent = [0] * nR
        self.acked = [0] * nR
        self.lost = [0] * nR
        self.last_cut = [-math.inf] * nR
        self.active = [False] * len(self.groups)
        self.epochs: list = []
        self.heap: list = []
        self.seq = 0
        for s in schedule:
            self._push(s.start, _START, s.flow, 0.0, 0)
            if s.end < horizon:
                self._push(s.end, _STOP, s.flow, 0.0, 0)
        n = int(math.floor(horizon / sample_dt + 1e-9))
        self.sample_times = [i * sample_dt for i in range(n + 1)]
        for i, t in enumerate(self.sample_times):
            self._push(t, _SAMPLE, i, 0.0, 0)
        self.rows = []

    def _push(self, t, kind, a, b, c):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, a, b, c))

    # --------------------------------------------------------------- links
    def _occupancy(self, l, t):
        q = self.queue[l]
        while q and q[0] <= t:
            q.popleft()
        return len(q)

    def _arrive(self, t, r, send_t, hop):
        l = self.route_links[r][hop]
        n = self._occupancy(l, t)
        if n >= self.buf[l] or (self.ploss[l] > 0.0 and self.rng.random() < self.ploss[l]):
            s = self.flow_of[r]
            notice = max(t, send_t + self.srtt[s][self.pos[r]])
            self._push(notice, _LOSS, r, send_t, 0)
            if self.log_events:
                self.events.append((t, "drop", r, l))
            return
        dep = max(t, self.last_dep[l]) + self.svc[l]
        self.last_dep[l] = dep
        self.queue[l].append(dep)
        if n + 1 > self.max_q[l]:
            self.max_q[l] = n + 1
        nxt = dep + self.prop[l]
        if hop + 1 < len(self.route_links[r]):
            self._push(nxt, _ARRIVE, r, send_t, hop + 1)
        else:
            back = self.reverse[r]
            if self.ack_jitter > 0.0:
                back += self.rng.random() * self.ack_jitter
            self._push(nxt + back, _ACK, r, send_t, 0)

    # -------------------------------------------------------------- senders
    def _send(self, t, r):
        s = self.flow_of[r]
        wlist = self.w[s]
        i = self.pos[r]
        while self.active[s] and self.inflight[r] < math.floor(wlist[i]):
            self.inflight[r] += 1
            self.sent[r] += 1
            if self.log_events:
                self.events.append((t, "send", r, self.inflight[r], wlist[i]))
            self._arrive(t, r, t, 0)

    def _ack(self, t, r, send_t):
        s = self.flow_of[r]
        i = self.pos[r]
        self.inflight[r] -= 1
        self.acked[r] += 1
        tau = self.srtt[s]
        tau[i] += SRTT_GAIN * ((t - send_t) - tau[i])
        if not self.active[s]:
            return
        wl = self.w[s]
        wl[i] += increment_one(self.algs[s], wl, tau, i)
        self._send(t, r)

    def _loss(self, t, r, send_t):
        s = self.flow_of[r]
        i = self.pos[r]
        self.inflight[r] -= 1
        self.lost[r] += 1
        if not self.active[s]:
            return
        if send_t > self.last_cut[r]:
            wl = self.w[s]
            before = wl[i]
            agg = sum(wl)
            d = decrement_one(self.algs[s], wl, self.srtt[s], i)
            wl[i] = max(1.0, before - d)
            self.last_cut[r] = t
            self.epochs.append(LossEpoch(t, s, r, before, wl[i], agg, sum(wl)))
            if self.log_events:
                self.events.append((t, "cut", r, before))
        self._send(t, r)

    def _sample(self, t):
        q = [self._occupancy(l, t) for l in range(len(self.queue))]
        w = [0.0] * len(self.flow_of)
        for s, g in enumerate(self.groups):
            for i, r in enumerate(g):
                w[r] = self.w[s][i]
        self.rows.append((t, w, list(self.inflight), q, list(self.sent), list(self.acked), list(self.lost)))

    def run(self):
        heap = self.heap
        pop = heapq.heappop
        while heap:
            t, _, kind, a, b, c = pop(heap)
            if t > self.horizon:
                break
            if kind == _ACK:
                self._ack(t, a, b)
            elif kind == _ARRIVE:
                self._arrive(t, a, b, c)
            elif kind == _LOSS:
                self._loss(t, a, b)
            elif kind == _SAMPLE:
                self._sample(t)
            elif kind == _START:
                self.active[a] = True
                for r in self.groups[a]:
                    self._send(t, r)
            elif kind == _STOP:
                self.active[a] = False


def run_packet_sim(net: NetworkSpec, algs, schedule: Sequence[FlowSchedule] | None = None,
                   horizon: float = 60.0, seed: int = 0, sample_dt: float = 0.01,
                   start_jitter: float = 0.01, ack_jitter: float = 0.0,
                   log_events: bool = False) -> PacketTrace:
    """Simulate until ``horizon``. ``algs`` is one Algorithm or one per source.

    Flows without a schedule entry run for the whole horizon. The seed drives
    the start-time jitter (uniform on [0, start_jitter]), Bernoulli losses and
    the ACK return jitter (uniform on [0, ack_jitter], which breaks drop-tail
    phase locking); identical arguments give identical traces.
    """
    if isinstance(algs, Algorithm):
        algs = (algs,) * net.n_sources
    algs = tuple(algs)
    if len(algs) != net.n_sources:
        raise ScheduleError(f"need {net.n_sources} algorithms, got {len(algs)}")
    if not horizon > 0:
        raise ScheduleError("horizon must be positive")
    net.check_packet_delays()
    given = {s.flow: s for s in (schedule or ())}
    for f, s in given.items():
        if not 0 <= f < net.n_sources:
            raise ScheduleError(f"schedule names unknown flow {f}")
        if s.start >= horizon:
            raise ScheduleError(f"flow {f} starts at or after the horizon")
    rng = random.Random(seed)
    jitter = [rng.uniform(0.0, start_jitter) for _ in range(net.n_sources)]
    sched = tuple(FlowSchedule(f, given[f].start + jitter[f] if f in given else jitter[f],
                               given[f].end if f in given else math.inf)
                  for f in range(net.n_sources))
    sim = _Sim(net, algs, sched, horizon, seed, sample_dt, log_events, ack_jitter)
    sim.run()
    rows = sim.rows
    col = lambda k, dt: np.array([row[k] for row in rows], dtype=dt)
    return PacketTrace(
        times=col(0, float), windows=col(1, float), in_flight=col(2, np.int64),
        queues=col(3, np.int64), sent=col(4, np.int64), acked=col(5, np.int64),
        lost=col(6, np.int64), epochs=sim.epochs,
        flow_of_route=np.array(sim.flow_of, dtype=np.int64), schedule=sched,
        horizon=horizon, seed=seed, max_queue=np.array(sim.max_q),
        buffers=np.array(sim.buf), rtts=np.array(net.rtts), events=sim.events)


# -------------------------------------------------------------------- metrics

def convergence_time(trace: PacketTrace, route: int, after: float,
                     target_window: float | None = None) -> float:
    """Seconds after ``after`` until w_route first reaches the target.

    The default target is the route's mean window over the last third of the
    run. Returns ``math.inf`` when the target is never reached (> horizon).
    """
    w = trace.windows[:, route]
    t = trace.times
    if target_window is None:
        target_window = float(np.mean(w[t >= 2.0 * trace.horizon / 3.0]))
    hit = np.flatnonzero((t >= after) & (w >= target_window))
    if hit.size == 0:
        return math.inf
    return float(t[hit[0]] - after)


def _delivered(trace: PacketTrace, routes, t0: float, t1: float) -> float:
    i0 = int(np.searchsorted(trace.times, t0))
    i1 = int(np.searchsorted(trace.times, t1, side="right")) - 1
    if i1 <= i0:
        raise ValueError("throughput window holds fewer than two samples")
    a = trace.acked[:, list(routes)].sum(axis=1)
    return float(a[i1] - a[i0]) / float(trace.times[i1] - trace.times[i0])


def friendliness_split(trace: PacketTrace, mp_flow: int, sp_flows: Sequence[int],
                       window: tuple[float, float]) -> tuple[float, float]:
    """(MP throughput, total SP throughput) in packets/s, by ACK counting over ``window``."""
    mp = _delivered(trace, trace.routes_of(mp_flow), *window)
    sp_routes = [r for f in sp_flows for r in trace.routes_of(f)]
    sp = _delivered(trace, sp_routes, *window) if sp_routes else 0.0
    return mp, sp


def oscillation_trace_metric(trace: PacketTrace, flow: int, t0: float = 0.0) -> float:
    """Mean over loss epochs of (aggregate window drop) / (aggregate window)."""
    drops = [(e.aggregate_before - e.aggregate_after) / e.aggregate_before
             for e in trace.epochs if e.flow == flow and e.t >= t0]
    if not drops:
        return math.nan
    return float(np.mean(drops))


def predicted_oscillation(trace: PacketTrace, alg: Algorithm, flow: int, loss_prob: float,
                          t0: float = 0.0) -> float:
    """First-order D_s along the sampled trajectory, weighted by the loss rate sum(q x).

    Loss epochs sample the state in proportion to the loss rate, so this is
    the quantity the empirical per-epoch average estimates.
    """
    routes = trace.routes_of(flow)
    X = trace.windows[trace.times >= t0][:, routes] / trace.rtts[routes]
    q = np.full(routes.size, loss_prob)
    D = np.array([oscillation_metric(alg, x, trace.rtts[routes], q).D_s for x in X])
    weight = X @ q
    return float(np.sum(D * weight) / np.sum(weight))


def mean_windows(trace: PacketTrace, routes, t0: float, t1: float) -> np.ndarray:
    m = (trace.times >= t0) & (trace.times <= t1)
    return trace.windows[m][:, list(routes)].mean(axis=0)


def summary(trace: PacketTrace, **metrics) -> dict:
    out = {"horizon": trace.horizon, "seed": trace.seed, "samples": int(trace.times.size),
           "loss_epochs": len(trace.epochs), "conservation_ok": trace.conservation_ok(),
           "queue_bound_ok": trace.queue_bound_ok(), "max_queue": trace.max_queue,
           "schedule": [(s.flow, s.start, s.end) for s in trace.schedule]}
    out.update(metrics)
    return jsonable(out)


def dump_summary(trace: PacketTrace, path, **metrics) -> None:
    with open(path, "w") as fh:
        json.dump(summary(trace, **metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")
