"""Fixture networks and the desk-scaled packet experiments.

The three built-in experiments mirror the testbed runs (friendliness,
responsiveness, window oscillation) at packet rates a laptop simulates in
seconds. Only orderings are compared with the published tables.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .algorithms import Algorithm, balia, coupled, ewtcp, maxalg, newreno, semicoupled
from .analysis import oscillation_metric
from .netmodel import LinkSpec, NetworkSpec, RouteSpec, single_bottleneck, two_link_shared
from .packetsim import (FlowSchedule, convergence_time, friendliness_split, mean_windows,
                        oscillation_trace_metric, predicted_oscillation, run_packet_sim)

MP_ALGORITHMS = ("ewtcp", "semicoupled", "max", "balia", "coupled")


def _alg(name: str) -> Algorithm:
    return {"ewtcp": ewtcp, "semicoupled": semicoupled, "max": maxalg,
            "balia": balia, "coupled": coupled, "newreno": newreno}[name]()


# ------------------------------------------------------------ fluid fixtures

def fixture_networks() -> dict[str, NetworkSpec]:
    """Multi-link networks with full-row-rank routing and equal rtts inside each source."""
    two_link = two_link_shared(10.0, 8.0, 1.0, n_sp=1)
    chain = NetworkSpec(
        (LinkSpec(10.0), LinkSpec(12.0), LinkSpec(8.0)),
        (RouteSpec(0, (0,), 1.0), RouteSpec(0, (1,), 1.0),
         RouteSpec(1, (1,), 1.5), RouteSpec(1, (2,), 1.5),
         RouteSpec(2, (2,), 0.8)))
    three_route = NetworkSpec(
        (LinkSpec(6.0), LinkSpec(9.0), LinkSpec(7.0)),
        (RouteSpec(0, (0,), 1.2), RouteSpec(0, (1, 2), 1.2), RouteSpec(0, (2,), 1.2),
         RouteSpec(1, (0,), 1.0), RouteSpec(2, (1,), 2.0)))
    return {"two_link": two_link, "chain": chain, "three_route": three_route}


def mixed_algorithms(net: NetworkSpec, mp: Algorithm) -> list[Algorithm]:
    """``mp`` on multipath sources, NewReno on single-path ones."""
    return [mp if len(g) > 1 else newreno() for g in net.sources]


# ------------------------------------------------------- packet experiments

@dataclass(frozen=True)
class ResponsivenessConfig:
    capacity: float = 2000.0        # packets/s on both links
    prop_delay: float = 0.01        # one way, per link
    rtt: float = 0.02
    buffer: int = 40
    n_sp: int = 5
    sp_start: float = 10.0
    sp_end: float = 30.0
    horizon: float = 60.0
    ack_jitter: float = 1e-3
    sample_dt: float = 0.01


def responsiveness_run(alg_name: str, seed: int, cfg: ResponsivenessConfig = ResponsivenessConfig()) -> dict:
    """One MP flow on both links; ``n_sp`` NewReno flows join link 2 for a while."""
    net = two_link_shared(cfg.capacity, cfg.capacity, cfg.rtt, n_sp=cfg.n_sp,
                          buffer=cfg.buffer, prop_delay=cfg.prop_delay)
    sched = [FlowSchedule(f, cfg.sp_start, cfg.sp_end) for f in range(1, cfg.n_sp + 1)]
    algs = [_alg(alg_name)] + [newreno()] * cfg.n_sp
    tr = run_packet_sim(net, algs, sched, cfg.horizon, seed, cfg.sample_dt,
                        ack_jitter=cfg.ack_jitter)
    late = tr.times >= 2.0 * cfg.horizon / 3.0
    target = float(np.mean(tr.windows[late, 1]))
    solo = float(mean_windows(tr, [1], 0.5 * cfg.sp_start, cfg.sp_start)[0])
    mp, sp = friendliness_split(tr, 0, range(1, cfg.n_sp + 1), (cfg.sp_start, cfg.sp_end))
    return {"algorithm": alg_name, "seed": seed,
            "convergence_time": convergence_time(tr, 1, cfg.sp_end, target),
            "target_window": target, "pre_arrival_window": solo,
            "mp_throughput": mp, "sp_throughput": sp,
            "conservation_ok": tr.conservation_ok(), "queue_bound_ok": tr.queue_bound_ok()}


@dataclass(frozen=True)
class FriendlinessConfig:
    capacity: float = 1000.0
    prop_delay: float = 0.01
    rtt: float = 0.02
    buffer: int = 60                # 3x the bandwidth-delay product
    horizon: float = 100.0
    warmup: float = 20.0
    ack_jitter: float = 1e-3
    sample_dt: float = 0.05


def friendliness_run(alg_name: str, seed: int, cfg: FriendlinessConfig = FriendlinessConfig()) -> dict:
    """MP flow over two links, one NewReno flow sharing the second link."""
    net = two_link_shared(cfg.capacity, cfg.capacity, cfg.rtt, n_sp=1, buffer=cfg.buffer,
                          prop_delay=cfg.prop_delay)
    tr = run_packet_sim(net, [_alg(alg_name), newreno()], None, cfg.horizon, seed,
                        cfg.sample_dt, ack_jitter=cfg.ack_jitter)
    mp, sp = friendliness_split(tr, 0, [1], (cfg.warmup, cfg.horizon))
    return {"algorithm": alg_name, "seed": seed, "mp_throughput": mp, "sp_throughput": sp}


@dataclass(frozen=True)
class OscillationConfig:
    loss_prob: float = 0.01         # Bernoulli, so the link never queues
    capacity: float = 1e5
    prop_delay: float = 0.01
    rtt: float = 0.02
    n_routes: int = 2
    horizon: float = 200.0
    warmup: float = 20.0
    sample_dt: float = 0.01


def oscillation_run(alg_name: str, seed: int, cfg: OscillationConfig = OscillationConfig()) -> dict:
    m = 1 if alg_name == "newreno" else cfg.n_routes
    net = NetworkSpec((LinkSpec(cfg.capacity, buffer=100_000, prop_delay=cfg.prop_delay,
                                loss_prob=cfg.loss_prob),),
                      tuple(RouteSpec(0, (0,), cfg.rtt) for _ in range(m)))
    alg = _alg(alg_name)
    tr = run_packet_sim(net, alg, None, cfg.horizon, seed, cfg.sample_dt)
    wbar = mean_windows(tr, range(m), cfg.warmup, cfg.horizon)
    taus = net.rtts
    return {"algorithm": alg_name, "seed": seed, "routes": m,
            "empirical": oscillation_trace_metric(tr, 0, cfg.warmup),
            "formula_along_trace": predicted_oscillation(tr, alg, 0, cfg.loss_prob, cfg.warmup),
            "formula_at_mean": oscillation_metric(alg, wbar / taus, taus,
                                                  np.full(m, cfg.loss_prob)).D_s,
            "mean_windows": wbar}


# ------------------------------------------------------------ reproduction

PAPER_ORDERINGS = {
    "table3_friendliness": "mp throughput: ewtcp >= semicoupled >= max >= balia >= coupled",
    "table4_responsiveness": "convergence: ewtcp < semicoupled < {balia, max} < coupled",
    "fig5_oscillation": "relative drop per loss: every MP algorithm < single-path NewReno",
}

EXPERIMENTS = {
    "table3_friendliness": "MP over two 1000 pkt/s links, one NewReno flow on link 2, equal rtts, 100 s",
    "table4_responsiveness": "MP on two 2000 pkt/s links, 5 NewReno flows on link 2 from 10 s to 30 s, 60 s",
    "fig5_oscillation": "one link with 1% Bernoulli loss, 2-route MP flows vs single-path NewReno, 200 s",
}


def _job(args):
    kind, name, seed = args
    fn = {"table3_friendliness": friendliness_run, "table4_responsiveness": responsiveness_run,
          "fig5_oscillation": oscillation_run}[kind]
    return fn(name, seed)


def _mean(rows, key):
    return float(np.mean([r[key] for r in rows]))


def reproduce(name: str, seeds=(0, 1, 2), jobs: int = 1) -> dict:
    """Run a named experiment over ``seeds``; returns per-run rows and ordering checks."""
    if name not in EXPERIMENTS:
        raise KeyError(name)
    algs = list(MP_ALGORITHMS) + (["newreno"] if name == "fig5_oscillation" else [])
    tasks = [(name, a, s) for a in algs for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            rows = list(ex.map(_job, tasks))
    else:
        rows = [_job(t) for t in tasks]
    by = {a: [r for r in rows if r["algorithm"] == a] for a in algs}
    checks: dict[str, bool] = {}
    if name == "table3_friendliness":
        mp = {a: _mean(by[a], "mp_throughput") for a in algs}
        chain = list(MP_ALGORITHMS)
        checks = {f"{a}>={b}": mp[a] >= mp[b] for a, b in zip(chain, chain[1:])}
        measured = {"mean_mp_throughput": mp,
                    "mean_sp_throughput": {a: _mean(by[a], "sp_throughput") for a in algs}}
    elif name == "table4_responsiveness":
        ct = {a: _mean(by[a], "convergence_time") for a in algs}
        checks = {"ewtcp<semicoupled": ct["ewtcp"] < ct["semicoupled"],
                  "max<coupled": ct["max"] < ct["coupled"],
                  "balia<coupled": ct["balia"] < ct["coupled"],
                  "coupled>3*ewtcp": ct["coupled"] > 3.0 * ct["ewtcp"]}
        measured = {"mean_convergence_time": ct,
                    "mean_pre_arrival_window": {a: _mean(by[a], "pre_arrival_window") for a in algs},
                    "mean_target_window": {a: _mean(by[a], "target_window") for a in algs}}
    else:
        emp = {a: _mean(by[a], "empirical") for a in algs}
        checks = {f"{a}<newreno": emp[a] < emp["newreno"] for a in MP_ALGORITHMS}
        measured = {"mean_empirical_drop": emp,
                    "mean_formula_along_trace": {a: _mean(by[a], "formula_along_trace") for a in algs}}
    return {"experiment": name, "description": EXPERIMENTS[name], "paper_ordering": PAPER_ORDERINGS[name],
            "seeds": list(seeds), "measured": measured, "checks": checks,
            "all_orderings_hold": all(checks.values()), "runs": rows}


def config_dict(cfg) -> dict:
    return asdict(cfg)
