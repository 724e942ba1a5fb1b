import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mptcplab.algorithms import (INF, balia, coupled, ewtcp, fluid_phi, generalized, maxalg, newreno,
                                 semicoupled)
from mptcplab.analysis import (AnalysisError, check_c0, check_c1, check_c2, check_c3, check_c4,
                               check_c5, compare_responsiveness, generalized_decomposition,
                               jacobian_phi, lemma1_closed_form, lemma1_exact, lemma1_oracle,
                               linearization, oscillation_metric, sample_points, sym_part,
                               tradeoff_witness)
from mptcplab.equilibrium import solve_test_network
from mptcplab.fluidsim import settle
from mptcplab.netmodel import LinkSpec, NetworkSpec, RouteSpec, SystemState, single_bottleneck, two_link_shared
from mptcplab.scenarios import fixture_networks, mixed_algorithms

SEVEN = [newreno(), ewtcp(), coupled(), semicoupled(), maxalg(), generalized(0.5, 0.3, 3), balia()]
pos = st.floats(1e-2, 1e2)


# ------------------------------------------------------------------ Jacobians

def test_ewtcp_jacobian_diagonal():
    J = jacobian_phi(ewtcp(), [1.0, 2.0, 3.0], [1, 1, 1]).J_phi
    assert np.count_nonzero(J - np.diag(np.diag(J))) == 0


def test_coupled_jacobian_by_hand():
    x = np.array([1.0, 3.0])
    rep = jacobian_phi(coupled(), x, [1, 1])
    np.testing.assert_allclose(rep.J_phi, -4.0 / 4.0 ** 3 * np.ones((2, 2)))
    assert rep.symmetric
    assert rep.sym_part_max_eig == pytest.approx(0.0, abs=1e-15)


def test_max_jacobian_asymmetric():
    J = jacobian_phi(maxalg(), [1.0, 2.0], [1, 1], method="finite_difference").J_phi
    assert np.linalg.norm(J - J.T) > 1e-3


@given(st.lists(pos, min_size=1, max_size=6), st.lists(st.floats(0.2, 3.0), min_size=6, max_size=6))
def test_closed_form_matches_finite_difference(x, tau):
    x = np.array(x)
    tau = np.array(tau[:x.size])
    # keep the argmaxes of x and x/tau unique, the max-norm has a kink there
    for v in (x, x / tau):
        r = np.sort(v)
        if x.size > 1 and r[-1] - r[-2] < 1e-3 * r[-1]:
            return
    for a in SEVEN + [generalized(0.3, 0.0, INF)]:
        if a.name == "newreno" and x.size > 1:
            continue
        cf = jacobian_phi(a, x, tau).J_phi
        fd = jacobian_phi(a, x, tau, method="finite_difference").J_phi
        scale = np.max(np.abs(cf))
        assert np.max(np.abs(cf - fd)) <= 1e-5 * scale


@given(st.lists(pos, min_size=1, max_size=8), st.floats(0.01, 1.0), st.sampled_from([1, 2, 3, INF]),
       st.floats(0.1, 3.0))
def test_generalized_decomposition(x, beta, n, tau):
    x = np.array(x)
    if x.size > 1 and np.sort(x)[-1] - np.sort(x)[-2] < 1e-3 * np.max(x):
        return
    a = generalized(beta, 0.0, n)
    t = np.full(x.size, tau)
    D = generalized_decomposition(a, x, tau)
    np.testing.assert_allclose(D, jacobian_phi(a, x, t).J_phi, rtol=1e-9, atol=0)
    fd = jacobian_phi(a, x, t, method="finite_difference").J_phi
    assert np.max(np.abs(D - fd)) <= 1e-5 * np.max(np.abs(D))


def test_generalized_sym_part_negative_definite_many_samples():
    rng = np.random.default_rng(7)
    worst = -INF
    for _ in range(1000):
        m = int(rng.integers(1, 9))
        x = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), m))
        beta = rng.uniform(1e-3, 1.0)
        n = [1, 2, 3, 5, INF][int(rng.integers(5))]
        J = jacobian_phi(generalized(beta, 0.0, n), x, np.ones(m)).J_phi
        worst = max(worst, float(np.max(np.linalg.eigvalsh(sym_part(J))) / np.max(np.abs(J))))
    assert worst < 0


def test_jacobian_rejects_boundary():
    with pytest.raises(AnalysisError):
        jacobian_phi(balia(), [0.0, 1.0], [1, 1])


# ------------------------------------------------------------------- checkers

def test_c0_examples():
    assert check_c0(ewtcp()).verdict
    assert check_c0(coupled()).verdict
    assert not check_c0(semicoupled()).verdict
    assert not check_c0(balia()).verdict


def test_c2_examples():
    pts = sample_points(100, sizes=(4,), seed=1)
    assert check_c2(generalized(0.5, 0.7, INF), pts).verdict
    assert not check_c2(coupled()).verdict
    assert not check_c2(generalized(0.0)).verdict


def test_c3_examples():
    assert check_c3(balia()).verdict
    assert check_c3(ewtcp()).verdict
    rep = check_c3(coupled())
    assert not rep.verdict and math.isfinite(rep.worst_witness["phi_at_0"])
    assert math.isfinite(fluid_phi(coupled(), [0.0, 1.0], [1, 1])[0])


def test_c3_rank_condition():
    net = NetworkSpec((LinkSpec(1.0), LinkSpec(1.0)), (RouteSpec(0, (0, 1), 1.0),))
    assert not check_c3(balia(), net=net).verdict


def test_c4_examples():
    for a in (ewtcp(), balia(), semicoupled()):
        assert check_c4(a).verdict


def test_c5_examples():
    for a in SEVEN:
        assert check_c5(a).verdict
    assert fluid_phi(newreno(), [1e6], [1.0])[0] == pytest.approx(2e-12)
    vals = [fluid_phi(balia(), [t, 1.0], [1, 1])[0] for t in (1e2, 1e4, 1e6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-10


def test_c1_examples():
    rep = check_c1(generalized(0.2))
    assert rep.verdict and rep.worst_witness["witness_table_rows"] > 0
    assert check_c1(ewtcp()).verdict


# -------------------------------------------------------------- linearization

def test_newreno_two_by_two():
    net = NetworkSpec((LinkSpec(1.0),), (RouteSpec(0, (0,), 1.0),))
    rep = linearization(net, newreno(), SystemState([1.0], [2.0]))
    np.testing.assert_allclose(rep.J_star, [[-2.0, -0.5], [1.0, 0.0]])
    lam = np.sort(rep.eigenvalues.real)
    np.testing.assert_allclose(lam, [-1 - math.sqrt(0.5), -1 + math.sqrt(0.5)], atol=1e-10)
    assert np.all(np.abs(rep.eigenvalues.imag) == 0)


@pytest.mark.parametrize("name", ["two_link", "chain", "three_route"])
@pytest.mark.parametrize("alg", [ewtcp(), semicoupled(), maxalg(), balia()], ids=lambda a: a.label)
def test_spectrum_and_rayleigh_identity(name, alg):
    net = fixture_networks()[name]
    algs = mixed_algorithms(net, alg)
    eq = settle(net, algs)
    rep = linearization(net, algs, eq.state)
    assert rep.spectral_abscissa < 0
    assert rep.rayleigh_gap <= 1e-8


def test_linearization_rejects_non_equilibrium():
    net = NetworkSpec((LinkSpec(1.0),), (RouteSpec(0, (0,), 1.0),))
    with pytest.raises(AnalysisError):
        linearization(net, newreno(), SystemState([0.5], [2.0]))


def test_compare_responsiveness():
    net = single_bottleneck(10.0, [1.0, 1.0])
    reps = {}
    for a in (ewtcp(), coupled()):
        eq = settle(net, a, SystemState([3.0, 2.0], [0.0]))
        reps[a.name] = linearization(net, a, eq.state)
    cmp = compare_responsiveness(reps["ewtcp"], reps["coupled"])
    assert reps["ewtcp"].lambda_bar <= reps["coupled"].lambda_bar
    assert cmp["order"] in ("a<b", "equal")
    assert compare_responsiveness(reps["ewtcp"], reps["ewtcp"])["order"] == "equal"


# ---------------------------------------------------------------- oscillation

@given(pos, st.floats(0.01, 2.0), st.floats(1e-4, 0.1))
def test_newreno_oscillation_half(x, tau, q):
    assert oscillation_metric(newreno(), [x], [tau], [q]).D_s == pytest.approx(0.5, rel=1e-14)


@given(st.lists(pos, min_size=2, max_size=2), st.floats(1e-4, 0.1))
def test_legacy_mp_oscillation_below_half(x, q):
    for a in (ewtcp(), coupled(), semicoupled(), maxalg()):
        assert oscillation_metric(a, x, [1, 1], [q, q]).D_s < 0.5


def test_balia_oscillation_by_hand():
    assert oscillation_metric(balia(), [1, 1], [1, 1], [0.01, 0.01]).D_s == pytest.approx(0.25)


def test_oscillation_mc_close_to_formula():
    rep = oscillation_metric(ewtcp(), [20.0, 20.0], [1.0, 1.0], [0.001, 0.001], mc_samples=100_000)
    assert rep.mc_estimate == pytest.approx(rep.D_s, abs=0.02)


def test_lemma1_closed_form_and_exact():
    assert lemma1_closed_form((10, 10), (0.001, 0.002), (1, 2)) == pytest.approx(5 / 3)
    assert lemma1_exact((7,), (0.3,), (2.5,)) == pytest.approx(2.5)
    # the gap between exact and first-order value is O(q)
    g1 = lemma1_exact((10, 10), (1e-3, 2e-3), (1, 2)) - 5 / 3
    g2 = lemma1_exact((10, 10), (1e-4, 2e-4), (1, 2)) - 5 / 3
    assert 0 < g2 < g1 / 5


def test_lemma1_single_set_exact():
    r = lemma1_oracle((5,), (0.2,), (1.7,), samples=20_000)
    assert r.estimate == pytest.approx(1.7, rel=1e-12) and r.stderr < 1e-9


def test_lemma1_oracle_agrees_with_exact():
    r = lemma1_oracle((4, 6), (0.05, 0.02), (1.0, 3.0), samples=200_000, seed=3)
    assert abs(r.estimate - r.exact) <= 4 * r.stderr


def test_lemma1_input_validation():
    with pytest.raises(AnalysisError):
        lemma1_oracle((1, 2), (0.1,), (1.0, 1.0), samples=10)
    with pytest.raises(AnalysisError):
        lemma1_oracle((1,), (1.5,), (1.0,), samples=10)


# --------------------------------------------------------- cross-module claims

@given(st.lists(pos, min_size=2, max_size=6), st.floats(0.0, 0.99), st.floats(0.0, 1.0),
       st.floats(0, 1), st.sampled_from([1, 2, INF]))
def test_tradeoff_phi_grows_with_beta(x, b1, gap, eta, n):
    b2 = b1 + gap * (1.0 - b1)
    w = tradeoff_witness(b1, b2, np.array(x), eta=eta, n=n)
    assert w["phi_min_gap"] >= -1e-12 * w["phi_scale"]


@given(pos, st.floats(1.0, 4.0), st.floats(0.0, 0.99), st.floats(0.01, 1.0), st.sampled_from([1, 2, 3]))
def test_tradeoff_jacobian_order_near_balanced_rates(x1, spread, b1, gap, n):
    # two routes, finite n, rates within a factor 4: the symmetric parts are ordered
    b2 = b1 + gap * (1.0 - b1)
    w = tradeoff_witness(b1, b2, np.array([x1, x1 * spread]), n=n)
    assert w["diff_max_eig"] <= 1e-9 * w["jac_scale"]


def test_tradeoff_jacobian_order_fails_for_spread_rates():
    # At x = (1, 18) the symmetric part of J(beta=1) - J(beta=0) is indefinite,
    # so the ordering of Jacobians is local, not global. Exact arithmetic:
    from fractions import Fraction as F
    x = [F(1), F(18)]
    S = sum(x)
    D = [[-(1 / x[r] + 1 / x[k]) / S ** 2 + 4 / S ** 3 - (2 / (x[r] ** 2 * S) if r == k else 0)
          for k in range(2)] for r in range(2)]
    assert D[0][0] * D[1][1] - D[0][1] ** 2 == F(-1, 42224004)
    assert tradeoff_witness(0.0, 1.0, [1.0, 18.0], n=1)["diff_max_eig"] > 0


@given(st.lists(pos, min_size=2, max_size=8))
def test_ewtcp_semicoupled_jacobian_order(x):
    x = np.array(x)
    t = np.ones(x.size)
    D = sym_part(jacobian_phi(ewtcp(), x, t).J_phi) - sym_part(jacobian_phi(semicoupled(), x, t).J_phi)
    assert np.max(np.linalg.eigvalsh(D)) <= 1e-12 * np.max(np.abs(D))


def test_phi_ordering_agrees_with_equilibrium_ordering():
    rng = np.random.default_rng(2)
    algs = (ewtcp(), semicoupled(), maxalg(), coupled())
    for _ in range(20):
        x = np.exp(rng.uniform(-3, 3, 2))
        phis = [fluid_phi(a, x, [1, 1]) for a in algs]
        assert all(np.all(p1 >= p2 * (1 - 1e-12)) for p1, p2 in zip(phis, phis[1:]))
    c = 10.0
    thr = [solve_test_network(a, [1, 1], 1.0, c).mp_throughput for a in algs]
    assert all(t1 >= t2 - 1e-9 for t1, t2 in zip(thr, thr[1:]))
