import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mptcplab.algorithms import balia, coupled, ewtcp, maxalg, newreno, semicoupled
from mptcplab.equilibrium import solve_test_network
from mptcplab.netmodel import LinkSpec, NetworkSpec, RouteSpec, single_bottleneck, two_link_shared
from mptcplab.packetsim import (FlowSchedule, ScheduleError, convergence_time, friendliness_split,
                                oscillation_trace_metric, run_packet_sim, summary)

C, RTT, PROP = 1000.0, 0.02, 0.01


def one_link(buffer=20, loss=0.0, n=1):
    return NetworkSpec((LinkSpec(C, buffer=buffer, prop_delay=PROP, loss_prob=loss),),
                       tuple(RouteSpec(i, (0,), RTT) for i in range(n)))


def same(a, b):
    return all(np.array_equal(getattr(a, f), getattr(b, f))
               for f in ("times", "windows", "in_flight", "queues", "sent", "acked", "lost"))


def test_deterministic(tmp_path):
    net = two_link_shared(C, C, RTT, n_sp=2, buffer=20, prop_delay=PROP)
    runs = [run_packet_sim(net, [balia(), newreno(), newreno()], [FlowSchedule(1, 2.0, 6.0)], 10.0, 5,
                           ack_jitter=1e-3) for _ in range(2)]
    assert same(*runs)
    for i, tr in enumerate(runs):
        tr.to_csv(tmp_path / f"{i}.csv")
    assert (tmp_path / "0.csv").read_bytes() == (tmp_path / "1.csv").read_bytes()
    other = run_packet_sim(net, [balia(), newreno(), newreno()], [FlowSchedule(1, 2.0, 6.0)], 10.0, 6,
                           ack_jitter=1e-3)
    assert not same(runs[0], other)


def test_balia_single_path_is_newreno():
    for loss in (0.0, 0.01):
        net = one_link(loss=loss)
        a = run_packet_sim(net, balia(), horizon=20.0, seed=3)
        b = run_packet_sim(net, newreno(), horizon=20.0, seed=3)
        assert same(a, b)
        assert [(e.t, e.window_after) for e in a.epochs] == [(e.t, e.window_after) for e in b.epochs]


@settings(max_examples=15)
@given(st.sampled_from([newreno, ewtcp, coupled, semicoupled, maxalg, balia]),
       st.integers(1, 30), st.integers(0, 1000), st.floats(0.0, 0.02))
def test_invariants(make, buffer, seed, loss):
    net = two_link_shared(500.0, 300.0, RTT, n_sp=1, buffer=buffer, prop_delay=PROP)
    if loss:
        net = NetworkSpec(tuple(LinkSpec(l.capacity, buffer=buffer, prop_delay=PROP, loss_prob=loss)
                                for l in net.links), net.routes)
    tr = run_packet_sim(net, [make(), newreno()], [FlowSchedule(1, 1.0, 3.0)], 5.0, seed,
                        ack_jitter=1e-3, log_events=True)
    assert tr.conservation_ok()
    assert tr.queue_bound_ok()
    assert np.all(tr.queues <= tr.buffers)
    assert np.all(tr.windows >= 1.0)
    assert np.all(np.diff(tr.times) > 0)
    # a cut can leave more packets in flight than the new window; sends never can
    sends = [e[3:] for e in tr.events if e[1] == "send"]
    assert sends and all(n <= math.floor(w) for n, w in sends)


def test_newreno_saturates_link():
    tr = run_packet_sim(one_link(), newreno(), horizon=60.0, seed=0, ack_jitter=1e-3)
    thr, _ = friendliness_split(tr, 0, [], (10.0, 60.0))
    assert abs(thr - C) <= 0.15 * C


def test_sp_only_network():
    tr = run_packet_sim(one_link(n=2), newreno(), horizon=40.0, seed=1, ack_jitter=1e-3)
    _, sp = friendliness_split(tr, 0, [1], (10.0, 40.0))
    mp, _ = friendliness_split(tr, 0, [], (10.0, 40.0))
    assert abs(mp + sp - C) <= 0.15 * C


def test_coupled_shares_evenly_with_newreno():
    net = single_bottleneck(C, [RTT, RTT], RTT, buffer=40, prop_delay=PROP)
    tr = run_packet_sim(net, [coupled(), newreno()], horizon=60.0, seed=0, ack_jitter=1e-3)
    mp, sp = friendliness_split(tr, 0, [1], (10.0, 60.0))
    assert abs(mp - C / 2) <= 0.15 * C / 2 and abs(sp - C / 2) <= 0.15 * C / 2


@pytest.mark.parametrize("alg", [ewtcp(), semicoupled(), maxalg(), balia(), coupled()], ids=lambda a: a.label)
def test_packet_matches_fluid_on_single_bottleneck(alg):
    net = single_bottleneck(C, [RTT, RTT], RTT, buffer=40, prop_delay=PROP)
    tr = run_packet_sim(net, [alg, newreno()], horizon=60.0, seed=0, ack_jitter=1e-3)
    mp, _ = friendliness_split(tr, 0, [1], (10.0, 60.0))
    fluid = solve_test_network(alg, [RTT, RTT], RTT, C).mp_throughput
    assert abs(mp - fluid) <= 0.2 * fluid


def test_oscillation_metrics():
    tr = run_packet_sim(one_link(buffer=100_000, loss=0.01), newreno(), horizon=100.0, seed=0)
    nr = oscillation_trace_metric(tr, 0, 10.0)
    assert abs(nr - 0.5) <= 0.05
    tb = run_packet_sim(one_link(buffer=100_000, loss=0.01), balia(), horizon=100.0, seed=0)
    assert oscillation_trace_metric(tb, 0, 10.0) == nr
    two = NetworkSpec((LinkSpec(1e5, buffer=100_000, prop_delay=PROP, loss_prob=0.01),),
                      (RouteSpec(0, (0,), RTT), RouteSpec(0, (0,), RTT)))
    t2 = run_packet_sim(two, balia(), horizon=100.0, seed=0)
    assert oscillation_trace_metric(t2, 0, 10.0) < 0.5


def test_cuts_coalesce_within_a_round_trip():
    tr = run_packet_sim(one_link(buffer=5), newreno(), horizon=30.0, seed=0)
    t = np.array([e.t for e in tr.epochs if e.route == 0])
    assert t.size > 5
    assert np.min(np.diff(t)) >= 0.99 * RTT


def test_convergence_time():
    net = two_link_shared(C, C, RTT, n_sp=2, buffer=20, prop_delay=PROP)
    tr = run_packet_sim(net, [ewtcp(), newreno(), newreno()],
                        [FlowSchedule(1, 3.0, 8.0), FlowSchedule(2, 3.0, 8.0)], 15.0, 0, ack_jitter=1e-3)
    assert convergence_time(tr, 1, 8.0, target_window=0.5) == 0.0
    assert convergence_time(tr, 1, 8.0, target_window=1e9) == math.inf
    ct = convergence_time(tr, 1, 8.0)
    assert 0.0 <= ct < 7.0


def test_schedule_validation():
    net = one_link(n=2)
    with pytest.raises(ScheduleError):
        FlowSchedule(0, 5.0, 2.0)
    with pytest.raises(ScheduleError):
        run_packet_sim(net, newreno(), [FlowSchedule(1, 50.0, 60.0)], horizon=10.0)
    with pytest.raises(ScheduleError):
        run_packet_sim(net, newreno(), [FlowSchedule(7, 1.0, 2.0)], horizon=10.0)
    with pytest.raises(ScheduleError):
        run_packet_sim(net, [newreno()], horizon=10.0)


def test_scheduled_flow_is_silent_outside_its_window():
    net = one_link(n=2)
    tr = run_packet_sim(net, newreno(), [FlowSchedule(1, 4.0, 6.0)], 10.0, 0)
    before = tr.times < 4.0
    after = tr.times > 6.5
    assert np.all(tr.sent[before, 1] == 0)
    assert tr.sent[after, 1].max() == tr.sent[after, 1].min()


def test_csv_recomputes_throughput(tmp_path):
    tr = run_packet_sim(one_link(), newreno(), horizon=10.0, seed=0)
    tr.to_csv(tmp_path / "t.csv")
    rows = [r for r in csv.DictReader(open(tmp_path / "t.csv")) if r["event"] == ""]
    by_t = {float(r["t"]): int(r["acked"]) for r in rows}
    ts = sorted(by_t)
    i0 = ts.index(min(t for t in ts if t >= 2.0))
    thr = (by_t[ts[-1]] - by_t[ts[i0]]) / (ts[-1] - ts[i0])
    assert thr == pytest.approx(friendliness_split(tr, 0, [], (2.0, 10.0))[0])
    cuts = [r for r in csv.DictReader(open(tmp_path / "t.csv")) if r["event"] == "cut"]
    assert len(cuts) == len(tr.epochs)
    assert summary(tr)["loss_epochs"] == len(tr.epochs)
