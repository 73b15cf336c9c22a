"""Bracket algebra, Lie series, and flow integration checks.

Several tests use integer-coefficient Hamiltonians on purpose: every bracket
contribution is then a Gaussian integer, float arithmetic is exact, and the
algebraic identities (antisymmetry, Jacobi, the diagonal-frequency derivation)
can be asserted with zero tolerance.
"""

import math

import numpy as np
import pytest

from bnflab.hamiltonians import (
    HamiltonianBuilder,
    MajorantHamiltonian,
    MultiIndex,
    NormParams,
    lower_norm,
    momentum,
    upper_norm,
)
from bnflab.lie import (
    FlowEscapeError,
    ad_series,
    bracket_capped,
    bracket_norm_bound,
    compose_flows,
    conjugate_by_flow,
    flow_map,
    flow_smallness_delta,
    frequency_action,
    frequency_divisor,
    lie_tail_bound,
    poisson_bracket,
)
from bnflab.spaces import FourierState, WeightProfile

E0 = MultiIndex.single(0)
E1 = MultiIndex.single(1)
E2 = MultiIndex.single(2)
EM1 = MultiIndex.single(-1)
EM2 = MultiIndex.single(-2)


def action(window: int, j: int, c: float) -> MajorantHamiltonian:
    return HamiltonianBuilder(window).add_action(j, c).build()


def hop(window: int, j: int, k: int, c: complex) -> MajorantHamiltonian:
    """c u_j ubar_k + conj: the elementary mode-coupling quadratic."""
    return HamiltonianBuilder(window).add_real_pair(MultiIndex.single(j), MultiIndex.single(k), c).build()


def random_real_ham(rng: np.random.Generator, window: int = 2, pairs: int = 3, momentum_free: bool = False):
    b = HamiltonianBuilder(window)
    count = 0
    while count < pairs:
        deg = int(rng.integers(1, 3))
        modes = rng.integers(-window, window + 1, size=2 * deg)
        alpha = MultiIndex((int(m), 1) for m in modes[:deg])
        beta = MultiIndex((int(m), 1) for m in modes[deg:])
        if momentum_free and momentum(alpha, beta) != 0:
            continue
        c = complex(rng.normal(), rng.normal())
        if alpha == beta:
            c = abs(c)
        b.add_real_pair(alpha, beta, c)
        count += 1
    return b.build()


def conjugation_symmetric(H: MajorantHamiltonian) -> bool:
    table = {(a, b): c for a, b, c in H.terms()}
    return all(table.get((b, a)) == c.conjugate() for (a, b), c in table.items())


# -- bracket algebra ----------------------------------------------------------


def test_bracket_hand_oracle():
    F = action(2, 1, 1.0)
    G = hop(2, 1, 2, 1.0)
    B = poisson_bracket(F, G)
    # {|u_1|^2, u_1 ubar_2 + u_2 ubar_1} = -i u_1 ubar_2 + i u_2 ubar_1
    assert B.coeff(E1, E2) == -1j
    assert B.coeff(E2, E1) == 1j
    assert B.n_terms == 2


def test_bracket_antisymmetry_exact():
    F = HamiltonianBuilder(2).add_real_pair(E1 + EM1, E0 + E0, 2.0).add_action(1, 3.0).build()
    G = HamiltonianBuilder(2).add_real_pair(E2, E1, 1 + 2j).add_real_pair(E1 + E1, E2 + E0, 1.0).build()
    B1 = poisson_bracket(F, G)
    B2 = poisson_bracket(G, F)
    assert (B1 + B2).l1_coefficient_norm() == 0.0


def test_jacobi_identity_exact():
    F = HamiltonianBuilder(2).add(E1 + E1, E1 + E1, 1.0).build()
    G = hop(2, 1, 2, 1.0)
    H = HamiltonianBuilder(2).add_real_pair(E1 + EM1, E0 + E0, 1.0).build()
    total = (
        poisson_bracket(F, poisson_bracket(G, H))
        + poisson_bracket(G, poisson_bracket(H, F))
        + poisson_bracket(H, poisson_bracket(F, G))
    )
    assert total.l1_coefficient_norm() == 0.0


def test_bracket_bilinearity_exact():
    rng = np.random.default_rng(7)
    F = random_real_ham(rng)
    G = random_real_ham(rng)
    # power-of-two factor keeps float scaling exact, so the identity is sharp
    lhs = poisson_bracket(F.scaled(4.0), G)
    rhs = poisson_bracket(F, G).scaled(4.0)
    assert (lhs - rhs).l1_coefficient_norm() == 0.0


def test_bracket_reality_mass_momentum():
    rng = np.random.default_rng(11)
    for _ in range(10):
        F = random_real_ham(rng, momentum_free=True)
        G = random_real_ham(rng, momentum_free=True)
        B = poisson_bracket(F, G)
        assert conjugation_symmetric(B)
        assert all(a.total == b.total for a, b, _ in B.terms())
        assert B.preserves_momentum()


def test_bracket_rejects_nonreal_input():
    bad = MajorantHamiltonian(2, {(E1, E2): 1.0 + 0j})  # no conjugate partner
    G = action(2, 1, 1.0)
    with pytest.raises(ValueError, match="real"):
        poisson_bracket(bad, G)


def test_frequency_action_matches_bracket_exactly():
    omega = {j: j * j for j in range(-2, 3)}
    b = HamiltonianBuilder(2)
    for j, w in omega.items():
        if w:
            b.add_action(j, float(w))
    D = b.build()
    rng = np.random.default_rng(3)
    # integer-frequency D and small Hamiltonians: exact float identity
    S = HamiltonianBuilder(2).add_real_pair(E2, E1, 1 + 1j).add_real_pair(E1 + E1, E2 + E0, 2.0).add_action(2, 5.0).build()
    LS = frequency_action(omega, S)
    assert (poisson_bracket(S, D) - LS).l1_coefficient_norm() == 0.0
    # kernel terms are annihilated, not just small
    assert all(a != b_ for a, b_, _ in LS.terms())
    K = action(2, 2, 4.0)
    assert poisson_bracket(K, D).is_zero()
    assert frequency_action(omega, K).is_zero()
    assert frequency_divisor(omega, E2, E1) == 3.0
    del rng


def test_degree_cap_drop_recording():
    F = HamiltonianBuilder(2).add(E1 + E1, E1 + E1, 1.0).build()  # |u_1|^4
    G = HamiltonianBuilder(2).add_real_pair(E1 + E1, E2 + E2, 1.0).build()
    full = poisson_bracket(F, G)
    assert full.l1_coefficient_norm() == 8.0
    capped, dropped = bracket_capped(F, G, 4)
    assert capped.is_zero()
    # the tally majorizes what the cap discarded (block skips are coarse)
    assert set(dropped) == {6}
    assert dropped[6] >= full.l1_coefficient_norm()
    kept, none_dropped = bracket_capped(F, G, 6)
    assert none_dropped == {}
    assert (kept - full).l1_coefficient_norm() == 0.0


def test_ad_series_terminates_and_flags_degree_two_generators():
    S = HamiltonianBuilder(1).add_real_pair(E1 + EM1, E0 + E0, 0.1).build()
    X = action(1, 0, 1.0)
    res = ad_series(S, X, lambda k: 1.0 / math.factorial(k), degree_cap=8, max_order=16)
    assert res.orders_used >= 3
    assert res.dropped_total > 0.0
    rot = hop(1, 0, 1, 1.0)
    with pytest.raises(RuntimeError, match="orders"):
        ad_series(rot, X, lambda k: 1.0, degree_cap=None, max_order=8)


# -- analytic bound helpers ---------------------------------------------------


def test_flow_smallness_and_tail_bound_frozen():
    # delta = rho / (8 e (r + rho)) at r = rho = 1: 1 / (16 e)
    delta = flow_smallness_delta(1.0, 1.0)
    assert math.isclose(delta, 1.0 / (16.0 * math.e), rel_tol=1e-15)
    assert lie_tail_bound(1.0, delta / 2.0, 1.0, 1.0, 2) == pytest.approx(1.0 / 8.0, rel=1e-12)
    assert lie_tail_bound(1.0, delta * 1.5, 1.0, 1.0, 2) == math.inf
    assert bracket_norm_bound(2.0, 3.0, 1.0, 0.5) == pytest.approx(4.0 * 3.0 * 6.0)


def test_fan_inequality_on_surrogates():
    rng = np.random.default_rng(23)
    profile = WeightProfile.sobolev(1.0)
    r, rho, eta = 0.5, 0.25, 0.3
    inner = NormParams(r, eta, profile)
    outer = NormParams(r + rho, eta, profile)
    for _ in range(5):
        F = random_real_ham(rng, window=2, pairs=2)
        G = random_real_ham(rng, window=2, pairs=2)
        B = poisson_bracket(F, G)
        if B.is_zero():
            continue
        lhs = lower_norm(B, inner, rng=np.random.default_rng(1))
        rhs = bracket_norm_bound(upper_norm(F, outer), upper_norm(G, outer), r, rho)
        assert lhs <= rhs * (1.0 + 1e-9)


# -- flows --------------------------------------------------------------------


def test_flow_linear_phase_oracle():
    theta = 0.7
    S = action(1, 1, theta)
    u0 = FourierState.from_modes(1, {1: 0.3 + 0.4j, 0: 0.2})
    t = 2.5
    u1 = flow_map(S, u0, t=t)
    assert abs(u1.amp(1) - (0.3 + 0.4j) * np.exp(1j * theta * t)) < 1e-10
    assert abs(u1.amp(0) - 0.2) < 1e-12


def test_flow_nonlinear_phase_oracle():
    c = 0.9
    S = HamiltonianBuilder(1).add(E1 + E1, E1 + E1, c).build()  # c |u_1|^4
    a = 0.6
    u0 = FourierState.from_modes(1, {1: a})
    t = 1.7
    u1 = flow_map(S, u0, t=t)
    # u' = 2 i c |u|^2 u with |u| frozen at a
    expected = a * np.exp(2j * c * a * a * t)
    assert abs(u1.amp(1) - expected) < 1e-10


def test_flow_conserves_mass():
    rng = np.random.default_rng(5)
    S = HamiltonianBuilder(2).add_real_pair(E2 + EM2, E0 + E0, 0.8).add_real_pair(E1 + E1, E2 + E0, 0.5j).build()
    u0 = FourierState(2, rng.normal(size=5) + 1j * rng.normal(size=5))
    u1 = flow_map(S, u0, t=3.0)
    assert math.isclose(u1.mass(), u0.mass(), rel_tol=1e-12)


def test_conjugation_matches_flow_pullback():
    """H(Phi_S(u)) must agree with (exp(-ad_S) H)(u) within the recorded tail.

    This pins the sign conventions across the bracket, the series, and the
    integrator at once: a single flipped sign shows up at first order, about
    five orders of magnitude above the tolerance used here.
    """
    eps = 1e-2
    S = HamiltonianBuilder(1).add_real_pair(E1 + EM1, E0 + E0, eps).build()
    H = (
        HamiltonianBuilder(1)
        .add_action(1, 1.0)
        .add_action(-1, 1.0)
        .add(E1 + E0, E1 + E0, 0.7)
        .build()
    )
    res = conjugate_by_flow(S, H, degree_cap=8)
    rng = np.random.default_rng(17)
    for _ in range(5):
        amps = 0.4 * (rng.normal(size=3) + 1j * rng.normal(size=3)) / math.sqrt(2)
        u = FourierState(1, amps)
        pushed = flow_map(S, u)
        lhs = H.value_at(pushed)
        rhs = res.hamiltonian.value_at(u)
        tail = 2.0 * res.dropped_ball_value(float(np.max(np.abs(amps))))
        assert abs(lhs - rhs) <= 1e-8 + tail


def test_flow_escape_event():
    S = HamiltonianBuilder(2).add_real_pair(E2 + EM2, E0 + E0, 1.0).build()
    u0 = FourierState.from_modes(2, {0: 0.8, 2: 0.1 * np.exp(1j * np.pi / 4), -2: 0.1})
    profile = WeightProfile.sobolev(1.0)
    radius = u0.seq_norm(profile) + 0.02
    with pytest.raises(FlowEscapeError) as err:
        flow_map(S, u0, t=50.0, ball_radius=radius, profile=profile)
    assert 0.0 < err.value.time < 50.0


def test_compose_flows_applies_last_generator_first():
    Sa = action(2, 1, 0.9)
    Sb = HamiltonianBuilder(2).add_real_pair(E2 + EM2, E0 + E0, 0.6).build()
    u0 = FourierState.from_modes(2, {0: 0.5, 1: 0.3j, 2: 0.1})
    composed = compose_flows([Sa, Sb], u0)
    manual = flow_map(Sa, flow_map(Sb, u0))
    assert np.array_equal(composed.amps, manual.amps)
