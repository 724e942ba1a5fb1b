import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mptcplab.netmodel import (LinkSpec, NetworkError, NetworkSpec, RouteSpec, SystemState,
                               aggregate_price, aggregate_rate, full_row_rank, routing_matrix,
                               single_bottleneck, two_link_shared)


def test_single_link_single_route():
    net = NetworkSpec((LinkSpec(1.0),), (RouteSpec(0, (0,), 1.0),))
    assert routing_matrix(net).tolist() == [[1.0]]


def test_collapsed_test_network_matrix():
    net = single_bottleneck(10.0, [1.0, 1.0], 1.0)
    assert routing_matrix(net).tolist() == [[1, 1, 1]]


def test_two_link_shared_matrix():
    net = two_link_shared(10.0, 10.0, 1.0)
    assert routing_matrix(net).tolist() == [[1, 0, 0], [0, 1, 1]]


def test_aggregates_by_hand():
    one = single_bottleneck(10.0, [1.0, 1.0], 1.0)
    two = two_link_shared(10.0, 10.0, 1.0)
    np.testing.assert_array_equal(aggregate_price(one, SystemState(np.zeros(3), [0.0])), 0.0)
    np.testing.assert_allclose(aggregate_price(one, SystemState(np.zeros(3), [0.02])), [0.02] * 3)
    np.testing.assert_allclose(aggregate_price(two, SystemState(np.zeros(3), [0.01, 0.03])),
                               [0.01, 0.03, 0.03])
    np.testing.assert_array_equal(aggregate_rate(one, SystemState(np.zeros(3), [0.0])), 0.0)
    np.testing.assert_allclose(aggregate_rate(one, SystemState([1, 2, 3], [0.0])), [6])
    np.testing.assert_allclose(aggregate_rate(two, SystemState([5, 1, 2], [0.0, 0.0])), [5, 3])


def test_full_row_rank_examples():
    assert full_row_rank(np.array([[1, 1, 1]]))
    assert not full_row_rank(np.array([[1, 0], [1, 0]]))
    assert full_row_rank(np.array([[1, 0, 0], [0, 1, 1]]))


@pytest.mark.parametrize("kw", [dict(capacity=0.0), dict(capacity=1.0, price_gain=0.0),
                                dict(capacity=1.0, buffer=0), dict(capacity=1.0, loss_prob=1.0)])
def test_bad_links_rejected(kw):
    with pytest.raises(NetworkError):
        LinkSpec(**kw)


def test_bad_routes_rejected():
    with pytest.raises(NetworkError):
        RouteSpec(0, (), 1.0)
    with pytest.raises(NetworkError):
        RouteSpec(0, (1, 1), 1.0)
    with pytest.raises(NetworkError):
        RouteSpec(0, (0,), 0.0)
    with pytest.raises(NetworkError):
        NetworkSpec((LinkSpec(1.0),), (RouteSpec(0, (3,), 1.0),))
    with pytest.raises(NetworkError):
        NetworkSpec((LinkSpec(1.0),), (RouteSpec(1, (0,), 1.0),))


def test_packet_delay_check():
    net = NetworkSpec((LinkSpec(1.0, prop_delay=0.5),), (RouteSpec(0, (0,), 0.2),))
    with pytest.raises(NetworkError):
        net.check_packet_delays()


def test_sources_keep_construction_order():
    net = NetworkSpec((LinkSpec(1.0), LinkSpec(1.0)),
                      (RouteSpec(1, (0,), 1.0), RouteSpec(0, (1,), 1.0), RouteSpec(1, (1,), 1.0)))
    assert net.sources == ((1,), (0, 2))


@st.composite
def networks(draw):
    nl = draw(st.integers(1, 5))
    nr = draw(st.integers(1, 6))
    routes = []
    for r in range(nr):
        links = draw(st.lists(st.integers(0, nl - 1), min_size=1, max_size=nl, unique=True))
        routes.append(RouteSpec(r % 2 if nr > 1 else 0, tuple(links), 1.0))
    return NetworkSpec(tuple(LinkSpec(1.0) for _ in range(nl)), tuple(routes))


@given(networks(), st.data())
def test_aggregates_match_route_sums(net, data):
    x = np.array(data.draw(st.lists(st.floats(0, 1e3), min_size=net.n_routes, max_size=net.n_routes)))
    p = np.array(data.draw(st.lists(st.floats(0, 1.0), min_size=net.n_links, max_size=net.n_links)))
    s = SystemState(x, p)
    q = aggregate_price(net, s)
    y = aggregate_rate(net, s)
    for r, route in enumerate(net.routes):
        assert q[r] == pytest.approx(sum(p[l] for l in route.links), abs=1e-12)
    for l in range(net.n_links):
        assert y[l] == pytest.approx(sum(x[r] for r, rt in enumerate(net.routes) if l in rt.links),
                                     rel=1e-12, abs=1e-12)
    # recomputing gives the identical result
    assert np.array_equal(q, aggregate_price(net, s)) and np.array_equal(y, aggregate_rate(net, s))
