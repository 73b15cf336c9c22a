"""Rearrangement lemmas and the homological solver.

The scalar checkers are the oracles for the vectorized sweeps: one test
re-runs a whole sweep budget pair by pair through the scalar path and
demands identical counts and worst margins.
"""

import math

import numpy as np
import pytest

from bnflab.constants import ledger_eval
from bnflab.frequencies import FrequencyVector, sample_frequency
from bnflab.hamiltonians import MajorantHamiltonian, MultiIndex, NormParams
from bnflab.smalldiv import (
    ResonanceError,
    check_constance,
    check_eleganza,
    check_fiorentina,
    check_shift,
    check_smalldiv,
    enumerate_C,
    enumerate_K,
    homological_residual,
    iter_pairs,
    n_hat,
    solve_homological,
    sweep_coefficient_monotonicity,
    sweep_constance,
    sweep_near_resonant,
    sweep_rearrangement,
)
from bnflab.spaces import WeightProfile

E = MultiIndex.single


def test_n_hat_frozen():
    assert n_hat(MultiIndex({0: 2})) == (1, 1)
    assert n_hat(MultiIndex({3: 1, -3: 1, 0: 2})) == (3, 3, 1, 1)
    assert n_hat(MultiIndex.empty()) == ()
    assert n_hat({5: 1, -2: 3}) == (5, 2, 2, 2)
    with pytest.raises(ValueError):
        n_hat({1: -1})


def test_fiorentina_and_eleganza():
    alpha = E(2) + E(-2)
    beta = MultiIndex({0: 2})
    assert check_fiorentina(alpha, beta)
    lhs, rhs, ok = check_eleganza(alpha, beta)
    assert (lhs, rhs, ok) == (2, 4, True)
    # momentum-heavy pair: n1 = 5 <= |pi| + n2 = 10 + 5
    lhs, rhs, ok = check_eleganza(E(5), E(-5))
    assert (lhs, rhs, ok) == (5, 15, True)
    with pytest.raises(ValueError):
        check_eleganza(E(1), MultiIndex({1: 2}))


def test_constance_frozen_example():
    rep = check_constance(E(2) + E(-2), MultiIndex({0: 2}), 0.5)
    assert rep.lhs == pytest.approx(2.0 + 2.0 * math.sqrt(2.0), rel=1e-15)
    assert rep.rhs == pytest.approx(4.0, rel=1e-15)
    assert rep.holds
    # equality case: alpha = beta = e_0 gives lhs = rhs = 2
    rep = check_constance(E(0), E(0), 0.5)
    assert rep.lhs == rep.rhs == 2.0
    assert rep.holds


def test_shift_frozen_example():
    rep = check_shift(E(2) + E(-2), MultiIndex({0: 2}), 0.5, 2)
    assert rep.lhs == pytest.approx(2.0, rel=1e-15)
    assert rep.rhs == pytest.approx(1.0, rel=1e-15)
    assert rep.holds
    with pytest.raises(ValueError):
        check_shift(E(2) + E(-2), MultiIndex({0: 2}), 0.5, 5)


def test_smalldiv_frozen_example():
    rep = check_smalldiv(E(2) + E(-2), MultiIndex({0: 2}), 0.5)
    assert not rep.skipped
    assert rep.c_star == 26.0
    # adele: lhs = 2 * 2^(1/4) + 2, rhs = 26 * 2
    assert rep.adele_margin == pytest.approx(52.0 - (2.0 * 2.0**0.25 + 2.0), rel=1e-14)
    # cosette: lhs = log 27, rhs = 27 + 6 log 4
    assert rep.cosette_log_margin == pytest.approx(27.0 + 6.0 * math.log(4.0) - math.log(27.0), rel=1e-14)
    assert rep.adele_holds and rep.cosette_holds


def test_smalldiv_skips_fast_divisors():
    # |sum (a-b) i^2| = 72 > 10 * 4: the divisor is >= 1 outright
    rep = check_smalldiv(MultiIndex({6: 2}), MultiIndex({0: 2}), 0.5)
    assert rep.skipped
    assert math.isnan(rep.adele_margin)
    rng = np.random.default_rng(7)
    ell = {6: 2, 0: -2}
    for seed in rng.integers(0, 2**31, size=100):
        omega = sample_frequency(q=0.0, window=6, seed=int(seed))
        value = sum(e * omega.omega_at(j) for j, e in ell.items())
        assert abs(value) >= 1.0


def test_sweeps_zero_failures_small_budget():
    rep = sweep_rearrangement(4, 3)
    assert rep.ok and rep.cases_checked > 0
    rep = sweep_constance(4, 3, (0.5,))
    assert rep.ok and rep.worst_margin >= -1e-12
    rep = sweep_near_resonant(4, 3, (0.5,), (0.0,))
    assert rep.ok and rep.skipped == 0  # modes <= 3 have i^2 < 10: no fast divisors
    rep = sweep_near_resonant(4, 5, (0.5,), (0.0,))
    assert rep.ok and rep.skipped > 0  # e_5 vs e_0 has quad 25 > 10 * 2
    assert rep.csv_values()[0] == "near-resonant"


def test_sweep_matches_scalar_checkers():
    """The vectorized sweeps agree with the pairwise scalar oracles."""
    max_degree, max_mode, theta = 4, 5, 0.5
    worst_con = math.inf
    worst_nr = math.inf
    checked = skipped = 0
    for alpha, beta in iter_pairs(max_degree, max_mode, include_kernel=True):
        rep = check_constance(alpha, beta, theta)
        assert rep.holds, (alpha.to_dict(), beta.to_dict())
        worst_con = min(worst_con, rep.margin)
        sd = check_smalldiv(alpha, beta, theta)
        if sd.skipped:
            skipped += 1
            continue
        checked += 1
        assert sd.adele_holds and sd.cosette_holds
        worst_nr = min(worst_nr, min(sd.adele_margin, sd.cosette_log_margin))
    con = sweep_constance(max_degree, max_mode, (theta,))
    nr = sweep_near_resonant(max_degree, max_mode, (theta,), (0.0,))
    assert con.cases_checked == checked + skipped
    assert con.worst_margin == pytest.approx(worst_con, rel=1e-12, abs=1e-12)
    assert nr.cases_checked == checked
    assert nr.skipped == skipped
    assert nr.worst_margin == pytest.approx(worst_nr, rel=1e-12, abs=1e-12)


def _omega_two_modes() -> FrequencyVector:
    # omega_{-1} = 1.1, omega_1 = 1.3 at q = 0: divisor for e_1 - e_{-1} is 0.2
    return FrequencyVector(q=0.0, window=1, xi=(0.1, 0.0, 0.3))


def test_homological_frozen_divisor():
    ledger = ledger_eval()
    omega = _omega_two_modes()
    R = MajorantHamiltonian(1, {(E(1), E(-1)): 1.0 + 0.0j})
    params = NormParams(1.0, 0.5, WeightProfile.sobolev(1.0))
    rep = solve_homological(R, omega, "S", params, ledger, sigma=0.25, rho=0.25)
    coeff = rep.S.coeff(E(1), E(-1))
    assert coeff == pytest.approx(-5.0j, rel=1e-15)
    assert rep.S.l1_coefficient_norm() == pytest.approx(5.0 * R.l1_coefficient_norm(), rel=1e-15)
    assert rep.worst_divisor == ({1: 1, -1: -1}, pytest.approx(0.2, rel=1e-14))
    assert homological_residual(rep.S, omega, R) <= 1e-15
    assert rep.within_bound


def test_homological_rejects_kernel_and_resonance():
    ledger = ledger_eval()
    params = NormParams(1.0, 0.5, WeightProfile.sobolev(1.0))
    kernel = MajorantHamiltonian(1, {(E(1), E(1)): 1.0 + 0.0j})
    with pytest.raises(ValueError, match="kernel"):
        solve_homological(kernel, _omega_two_modes(), "S", params, ledger, sigma=0.25, rho=0.25)
    flat = FrequencyVector(q=0.0, window=1, xi=(0.0, 0.0, 0.0))
    R = MajorantHamiltonian(1, {(E(1), E(-1)): 1.0 + 0.0j})
    with pytest.raises(ResonanceError):
        solve_homological(R, flat, "S", params, ledger, sigma=0.25, rho=0.25)


def test_homological_empty_right_hand_side():
    ledger = ledger_eval()
    rep = solve_homological(
        MajorantHamiltonian(1, {}),
        _omega_two_modes(),
        "S",
        NormParams(1.0, 0.5, WeightProfile.sobolev(1.0)),
        ledger,
        sigma=0.25,
        rho=0.25,
    )
    assert rep.S.is_zero()
    assert rep.enumerated_K == 0.0
    assert rep.worst_divisor is None


def test_residual_random_range_hamiltonians():
    ledger = ledger_eval()
    rng = np.random.default_rng(11)
    omega = sample_frequency(q=0.0, window=4, seed=5)
    params = NormParams(1.0, 0.5, WeightProfile.sobolev(1.0))
    pool = list(iter_pairs(4, 4))
    for _ in range(20):
        picks = rng.choice(len(pool), size=6, replace=False)
        terms = {}
        for idx in picks:
            a, b = pool[int(idx)]
            terms[(a, b)] = complex(rng.normal(), rng.normal())
        R = MajorantHamiltonian(4, terms)
        rep = solve_homological(R, omega, "S", params, ledger, sigma=0.25, rho=0.25)
        assert homological_residual(rep.S, omega, R) <= 1e-14


@pytest.mark.parametrize(
    "case,profile,kwargs,momentum_only",
    [
        ("S", WeightProfile.sobolev(1.0), {"sigma": 0.25, "rho": 0.25}, False),
        ("G", WeightProfile.gevrey(1.0, 0.5, 0.0, 0.5), {"sigma": 0.25}, False),
        ("M", WeightProfile.modified_sobolev(1.0), {}, True),
    ],
)
def test_enumerated_K_within_case_bound(case, profile, kwargs, momentum_only):
    ledger = ledger_eval()
    omega = sample_frequency(q=0.0, window=3, seed=3)
    params = NormParams(1.0, 0.5 if case != "M" else 0.0, profile)
    terms = {(a, b): 1.0 + 0.0j for a, b in iter_pairs(4, 3, momentum_only=momentum_only)}
    R = MajorantHamiltonian(3, terms)
    rep = solve_homological(R, omega, case, params, ledger, **kwargs)
    assert rep.log_enumerated_K <= rep.bound_K.log_value
    assert rep.within_bound


def test_enumerate_K_trivial_and_monotone():
    ledger = ledger_eval()
    gamma = ledger.inputs.gamma
    omega = sample_frequency(q=0.0, window=6, seed=9)
    params = NormParams(1.0, 0.5, WeightProfile.sobolev(1.0))
    # identical geometry and a fast divisor: K <= gamma
    fast = [(MultiIndex({6: 2}), MultiIndex({0: 2}))]
    value, _, witness = enumerate_K(params, params, omega, fast, gamma)
    assert value <= gamma
    assert witness is not None
    # growing the pair budget can only raise the supremum
    out = NormParams(0.75, 0.25, WeightProfile.sobolev(16.0))
    small, small_log, _ = enumerate_K(params, out, omega, iter_pairs(2, 2), gamma)
    large, large_log, _ = enumerate_K(params, out, omega, iter_pairs(4, 3), gamma)
    assert small_log <= large_log
    assert small <= large


def test_transport_validation():
    ledger = ledger_eval()
    from bnflab.smalldiv import lieder_transport

    sob = NormParams(1.0, 0.5, WeightProfile.sobolev(1.0))
    with pytest.raises(ValueError, match="sigma"):
        lieder_transport("S", sob, ledger, sigma=0.75, rho=0.25)
    with pytest.raises(ValueError, match="rho"):
        lieder_transport("S", sob, ledger, sigma=0.25, rho=2.0)
    with pytest.raises(ValueError, match="Gevrey"):
        lieder_transport("G", sob, ledger, sigma=0.25)
    out = lieder_transport("S", sob, ledger, sigma=0.25, rho=0.25)
    assert out.params_out.profile.p == pytest.approx(1.0 + ledger.value("tau"))
    assert out.params_out.r == pytest.approx(0.75)
    mom = NormParams(1.0, 0.0, WeightProfile.modified_sobolev(1.0))
    rep = lieder_transport("M", mom, ledger)
    assert rep.params_out.profile.p == pytest.approx(1.0 + ledger.value("tau1"))
    assert rep.params_out.eta == 0.0


def test_case_m_requires_momentum_preservation():
    ledger = ledger_eval()
    params = NormParams(1.0, 0.0, WeightProfile.modified_sobolev(1.0))
    R = MajorantHamiltonian(1, {(E(1), E(-1)): 1.0 + 0.0j})
    with pytest.raises(ValueError, match="momentum"):
        solve_homological(R, _omega_two_modes(), "M", params, ledger)


def test_enumerate_c_includes_kernel_pairs():
    prof = WeightProfile.sobolev(1.0)
    same = NormParams(1.0, 0.5, prof)
    alpha = MultiIndex({0: 2})
    value, log_c, witness = enumerate_C(same, same, [(alpha, alpha)])
    assert value == pytest.approx(1.0)
    assert log_c == pytest.approx(0.0)
    assert witness is not None
    # shrinking r by half at degree 4 scales c by (1/2)^(4-2)
    shrunk = NormParams(0.5, 0.5, prof)
    value, _, _ = enumerate_C(same, shrunk, [(alpha, alpha)])
    assert value == pytest.approx(0.25)
    assert enumerate_C(same, same, []) == (0.0, -math.inf, None)


def test_coefficient_monotonicity_small_budget():
    report = sweep_coefficient_monotonicity(4, 3, tau1=2.0)
    assert report.ok
    assert report.worst_margin >= 0.0
    all_pairs = sum(1 for _ in iter_pairs(4, 3, include_kernel=True))
    mz_pairs = sum(1 for _ in iter_pairs(4, 3, momentum_only=True, include_kernel=True))
    assert report.cases_checked == 3 * all_pairs + mz_pairs


def test_coefficient_monotonicity_validation():
    with pytest.raises(ValueError, match="sigma"):
        sweep_coefficient_monotonicity(4, 3, tau1=2.0, sigma=0.5, eta=0.5)
    with pytest.raises(ValueError, match="rho"):
        sweep_coefficient_monotonicity(4, 3, tau1=2.0, rho=1.0)
    with pytest.raises(ValueError, match="tau1"):
        sweep_coefficient_monotonicity(4, 3, tau1=0.0)


def test_coefficient_monotonicity_matches_direct_coefficients():
    """The sweep margins against literal coefficient evaluations.

    The vectorized sweep never touches log_coefficient_c; every margin is a
    closed-form reduction.  Here the same budget is walked pair by pair and
    j by j through the actual coefficient function, at a base (p, s, a) the
    reductions claim is irrelevant.
    """
    from bnflab.constants import log_c_mon
    from bnflab.hamiltonians import log_coefficient_c, momentum

    r, rho, sigma, p1, tau1, theta, eta = 1.0, 0.25, 0.25, 1.0, 2.0, 0.5, 0.5
    base = NormParams(r, eta, WeightProfile.gevrey(1.0, 0.5, 0.25, theta))
    out_a = NormParams(r, eta - sigma, WeightProfile.gevrey(1.0, 0.5 + sigma, 0.25, theta))
    out_b = NormParams(r * math.exp(-sigma), eta - sigma, WeightProfile.gevrey(1.0, 0.5, 0.25 + sigma, theta))
    out_c = NormParams(r - rho, eta - sigma, WeightProfile.gevrey(1.0 + p1, 0.5, 0.25, theta))
    base_m = NormParams(r, 0.0, WeightProfile.modified_sobolev(1.0))
    out_m = NormParams(r, 0.0, WeightProfile.modified_sobolev(1.0 + tau1))
    cmon = log_c_mon(r / rho, sigma, p1)
    worst = math.inf
    for alpha, beta in iter_pairs(4, 3, include_kernel=True):
        for j, _ in (alpha + beta).entries:
            lc = log_coefficient_c(base, j, alpha, beta)
            margins = [
                lc - log_coefficient_c(out_a, j, alpha, beta),
                2.0 * sigma + lc - log_coefficient_c(out_b, j, alpha, beta),
                cmon + lc - log_coefficient_c(out_c, j, alpha, beta),
            ]
            if momentum(alpha, beta) == 0:
                margins.append(
                    log_coefficient_c(base_m, j, alpha, beta)
                    - log_coefficient_c(out_m, j, alpha, beta)
                )
            assert min(margins) >= -1e-12
            worst = min(worst, min(margins))
    report = sweep_coefficient_monotonicity(
        4, 3, r=r, rho=rho, sigma=sigma, p1=p1, tau1=tau1, theta=theta, eta=eta
    )
    assert report.worst_margin == pytest.approx(worst, abs=1e-9)
