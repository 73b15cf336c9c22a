import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bnflab.frequencies import FrequencyVector
from bnflab.hamiltonians import momentum
from bnflab.simulator import (
    BlowupError,
    NonlinearitySpec,
    SplitStepper,
    drift_toy_H,
    drift_toy_K,
    fit_loglog_slope,
    hamiltonian_from_nonlinearity,
    measure_stability_time,
    nemitskii_field,
    split_step_evolve,
)
from bnflab.spaces import FourierState, WeightProfile

CUBIC = NonlinearitySpec.cubic()


def smooth_state(window: int, seed: int, amp: float = 0.1, decay: float = 3.0) -> FourierState:
    rng = np.random.default_rng(seed)
    modes = np.arange(-window, window + 1)
    amps = rng.normal(size=2 * window + 1) + 1j * rng.normal(size=2 * window + 1)
    amps *= amp / (1.0 + np.abs(modes)) ** decay
    return FourierState(window, amps)


def conj_state(s: FourierState) -> FourierState:
    # x-space conjugation: u(x) -> conj(u(x)), i.e. u_k -> conj(u_{-k})
    return FourierState(s.window, np.conj(s.amps[::-1]).copy())


class TestNonlinearitySpec:
    def test_cubic_shorthand(self):
        spec = NonlinearitySpec.cubic(-2.0, radius=0.5)
        assert spec.terms == ((1, -2.0),)
        assert spec.max_power == 1
        assert spec.f_norm() == 2.0 * 0.5

    def test_f_norm_sums_majorants(self):
        spec = NonlinearitySpec.from_coefficients({1: 1.0, 3: -0.5}, radius=2.0)
        assert spec.f_norm() == pytest.approx(1.0 * 2.0 + 0.5 * 2.0**3)
        assert spec.f_norm(1.0) == pytest.approx(1.5)

    def test_potential_is_antiderivative(self):
        spec = NonlinearitySpec.from_coefficients({1: 0.3, 2: -1.1})
        y = np.linspace(0.0, 2.0, 7)
        h = 1e-6
        dF = (spec.potential(y + h) - spec.potential(y - h)) / (2 * h)
        assert np.max(np.abs(dF - spec.evaluate(y))) < 1e-7

    @pytest.mark.parametrize(
        "coeffs, msg",
        [
            ({}, "at least one term"),
            ({0: 1.0}, "d >= 1"),
            ({1: 0.0}, "finite and nonzero"),
            ({1: math.inf}, "finite and nonzero"),
        ],
    )
    def test_rejects_bad_terms(self, coeffs, msg):
        with pytest.raises(ValueError, match=msg):
            NonlinearitySpec.from_coefficients(coeffs)

    def test_rejects_duplicate_power(self):
        with pytest.raises(ValueError, match="duplicate"):
            NonlinearitySpec(((1, 1.0), (1, 2.0)))

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError, match="radius"):
            NonlinearitySpec.cubic(radius=0.0)


class TestHamiltonianExpansion:
    def test_terms_conserve_mass_and_momentum(self):
        H = hamiltonian_from_nonlinearity(NonlinearitySpec.from_coefficients({1: 1.0, 2: 0.5}), 2)
        assert not H.is_zero()
        for alpha, beta, _ in H.terms():
            assert alpha.total == beta.total
            assert momentum(alpha, beta) == 0

    def test_value_matches_grid_quadrature(self):
        # independent oracle: (2pi)^-1 int F(|u|^2) dx on a fine grid
        spec = NonlinearitySpec.from_coefficients({1: 0.7, 2: -0.3})
        H = hamiltonian_from_nonlinearity(spec, 3)
        u = smooth_state(3, seed=1, amp=0.4, decay=1.0)
        grid = 64
        idx = np.mod(np.arange(-3, 4), grid)
        a = np.zeros(grid, dtype=np.complex128)
        a[idx] = u.amps
        vals = grid * np.fft.ifft(a)
        quad = float(np.mean(spec.potential(np.abs(vals) ** 2)))
        assert H.value_at(u) == pytest.approx(quad, rel=1e-12)

    def test_single_mode_value(self):
        # u = c e_0: int F(|u|^2) collapses to sum c_d |c|^{2(d+1)} / (d+1)
        spec = NonlinearitySpec.from_coefficients({1: 2.0, 2: -0.25})
        H = hamiltonian_from_nonlinearity(spec, 2)
        u = FourierState.zeros(2)
        u.amps[2] = 0.6
        y = 0.36
        assert H.value_at(u) == pytest.approx(2.0 * y**2 / 2 - 0.25 * y**3 / 3, rel=1e-13)

    def test_gradient_matches_fft_route(self):
        spec = NonlinearitySpec.from_coefficients({1: 0.7, 2: -0.3})
        H = hamiltonian_from_nonlinearity(spec, 4)
        for seed in range(5):
            u = smooth_state(4, seed=seed, amp=0.5, decay=0.5)
            g_direct = H.dbar_gradient(u)
            g_fft = nemitskii_field(spec, u)
            scale = np.max(np.abs(g_direct))
            assert np.max(np.abs(g_direct - g_fft)) < 1e-13 * scale

    def test_degree_cap_too_small(self):
        with pytest.raises(ValueError, match="beyond cap"):
            hamiltonian_from_nonlinearity(CUBIC, 2, degree_cap=2)


class TestNemitskiiField:
    def test_zero_state(self):
        u = FourierState.zeros(4)
        assert np.all(nemitskii_field(CUBIC, u) == 0)

    def test_grid_size_is_dealiased(self):
        # doubling the grid beyond the minimum must not change anything
        u = smooth_state(6, seed=3, amp=0.7, decay=0.0)
        f1 = nemitskii_field(CUBIC, u)
        f2 = nemitskii_field(CUBIC, u, grid_size=512)
        assert np.max(np.abs(f1 - f2)) < 1e-14 * np.max(np.abs(f1))

    def test_undersized_grid_rejected(self):
        u = smooth_state(6, seed=3)
        with pytest.raises(ValueError, match="dealiasing minimum"):
            nemitskii_field(CUBIC, u, grid_size=16)


class TestSplitStep:
    def test_single_mode_phase_oracle(self):
        # only j=0 excited: exact solution is a pure phase at rate omega_0 + c1 |u|^2
        u0 = FourierState.zeros(2)
        u0.amps[2] = 0.5
        traj = split_step_evolve(u0, None, CUBIC, dt=1e-3, n_steps=1000)
        expected = 0.5 * np.exp(1j * 0.25 * 1.0)
        assert abs(traj.final.amp(0) - expected) < 1e-10

    def test_mass_and_momentum_conserved(self):
        u0 = smooth_state(8, seed=2, amp=0.3, decay=1.0)
        fv = FrequencyVector.unperturbed(8)
        traj = split_step_evolve(u0, fv, CUBIC, dt=1e-3, n_steps=2000, record_every=50)
        assert traj.mass_drift() < 1e-12
        assert traj.momentum_drift() < 1e-12

    def test_energy_drift_second_order(self):
        u0 = smooth_state(8, seed=4, amp=0.3, decay=2.0)
        fv = FrequencyVector.unperturbed(8)
        drifts = []
        for n in (250, 500):
            traj = split_step_evolve(u0, fv, CUBIC, dt=1.0 / n, n_steps=n, record_every=n)
            drifts.append(traj.energy_drift())
        assert drifts[0] > 0
        assert drifts[0] / drifts[1] == pytest.approx(4.0, abs=1.5)

    def test_richardson_ratio(self):
        u0 = smooth_state(8, seed=5, amp=0.3, decay=1.0)
        fv = FrequencyVector.unperturbed(8)

        def final(n):
            return split_step_evolve(u0, fv, CUBIC, dt=1.0 / n, n_steps=n, record_every=n).final.amps

        ref = final(8000)
        e_coarse = np.linalg.norm(final(500) - ref)
        e_fine = np.linalg.norm(final(1000) - ref)
        assert e_coarse / e_fine == pytest.approx(4.0, abs=0.5)

    def test_time_reversal(self):
        # conjugation in x flips the flow direction; smooth data keeps the
        # windowed tail at roundoff so the round trip comes back exactly
        u0 = smooth_state(8, seed=6, amp=0.1, decay=4.0)
        fv = FrequencyVector.unperturbed(8)
        fwd = split_step_evolve(u0, fv, CUBIC, dt=1e-3, n_steps=400, record_every=400)
        bwd = split_step_evolve(conj_state(fwd.final), fv, CUBIC, dt=1e-3, n_steps=400, record_every=400)
        back = conj_state(bwd.final)
        assert np.max(np.abs(back.amps - u0.amps)) < 1e-9

    def test_trajectory_matches_manual_stepping(self):
        u0 = smooth_state(4, seed=7)
        traj = split_step_evolve(u0, None, CUBIC, dt=0.01, n_steps=25, record_every=10)
        stepper = SplitStepper(u0, None, CUBIC, dt=0.01)
        stepper.step(25)
        assert np.allclose(traj.final.amps, stepper.windowed().amps, rtol=0, atol=0)
        assert list(traj.times) == pytest.approx([0.0, 0.1, 0.2, 0.25])

    def test_blowup_raises_with_state(self):
        u0 = smooth_state(4, seed=8, amp=1.0, decay=0.0)
        with pytest.raises(BlowupError) as info:
            split_step_evolve(u0, None, CUBIC, dt=0.01, n_steps=10, blowup_threshold=1e-3)
        assert info.value.state.window == 4
        assert info.value.t == 0.0

    def test_csv_deterministic(self, tmp_path):
        u0 = smooth_state(4, seed=9)
        paths = []
        for k in (0, 1):
            traj = split_step_evolve(u0, None, CUBIC, dt=0.01, n_steps=20, record_every=5)
            p = tmp_path / f"run{k}.csv"
            traj.to_csv(p)
            paths.append(p.read_bytes())
        assert paths[0] == paths[1]
        assert paths[0].startswith(b"t,mass,momentum,energy,tail_mass")

    @pytest.mark.parametrize(
        "kwargs, msg",
        [
            ({"dt": 0.0, "n_steps": 1}, "dt must be positive"),
            ({"dt": 0.1, "n_steps": 0}, "n_steps"),
            ({"dt": 0.1, "n_steps": 1, "record_every": 0}, "record_every"),
        ],
    )
    def test_validation(self, kwargs, msg):
        with pytest.raises(ValueError, match=msg):
            split_step_evolve(smooth_state(2, seed=0), None, CUBIC, **kwargs)


class TestStabilityMeasurement:
    def test_weak_coupling_all_capped(self):
        fv = FrequencyVector.unperturbed(4)
        weak = NonlinearitySpec.from_coefficients({1: 1e-10})
        m = measure_stability_time(
            weak, fv, 4, delta=0.1, dt=0.01, t_max=0.5, n_members=3, seed=1
        )
        assert m.all_capped
        assert m.fraction_capped == 1.0
        assert m.exit_times == (0.5, 0.5, 0.5)
        assert m.min_exit_time == 0.5

    def test_focusing_exits_tube(self):
        # strongly focusing cubic pumps the Sobolev norm past the tube quickly
        fv = FrequencyVector.unperturbed(8)
        focusing = NonlinearitySpec.from_coefficients({1: -12.0})
        m = measure_stability_time(
            focusing, fv, 8, delta=1.5, dt=2e-3, t_max=3.0,
            profile=WeightProfile.sobolev(2.0), n_members=4, seed=5, check_every=5,
        )
        assert not any(m.capped)
        assert max(m.exit_times) < 0.5

    def test_deterministic_under_seed(self):
        fv = FrequencyVector.unperturbed(4)
        runs = [
            measure_stability_time(
                CUBIC, fv, 4, delta=0.3, dt=0.01, t_max=0.2, n_members=2, seed=42
            )
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="positive"):
            measure_stability_time(CUBIC, None, 4, delta=0.0, dt=0.01, t_max=1.0)


class TestDriftToyH:
    def test_conserves_total_action(self):
        for j in (2, 3, 4):
            res = drift_toy_H(j, 0.05)
            assert res.invariant_drifts["J2"] < 1e-12

    def test_drift_matches_rate(self):
        # resonant detuning locks the angle at pi/2; drift tracks the rate law
        for j in (2, 3, 4):
            res = drift_toy_H(j, 0.05)
            assert 1 / 3 < res.drift_ratio < 3

    def test_phase_sign_symmetric(self):
        # growth vs decay of J_1 feeds back on the rate at relative order
        # drift/J_1, so the two signs agree only to ~1e-3 here
        up = drift_toy_H(3, 0.05, phase=math.pi / 2)
        down = drift_toy_H(3, 0.05, phase=-math.pi / 2)
        assert up.drift == pytest.approx(down.drift, rel=1e-2)

    def test_amplitude_scale_enters_rate(self):
        res = drift_toy_H(3, 0.05, amplitude_scale=0.25)
        assert res.predicted_drift == pytest.approx(
            drift_toy_H(3, 0.05).predicted_drift * 0.25**4, rel=1e-12
        )
        assert 1 / 3 < res.drift_ratio < 3

    def test_detuning_off_kills_drift(self):
        # with v_shift = 0 the coupling angle rotates at 1 - j^2 and averages out
        res = drift_toy_H(3, 0.05, v_shift=0.0)
        assert res.drift_ratio < 0.5

    def test_rejects_low_mode(self):
        with pytest.raises(ValueError, match="j >= 2"):
            drift_toy_H(1, 0.05)


class TestDriftToyK:
    def test_conserves_linear_invariants(self):
        for j in (2, 3):
            res = drift_toy_K(j, 0.2)
            assert res.invariant_drifts["L"] < 1e-12
            assert res.invariant_drifts["M"] < 1e-12

    @pytest.mark.parametrize("j", [2, 3])
    def test_drift_slope_is_2j(self, j):
        deltas = [0.1, 0.15, 0.2, 0.3]
        drifts = [drift_toy_K(j, d).drift for d in deltas]
        slope = fit_loglog_slope(deltas, drifts)
        assert slope == pytest.approx(2 * j, rel=0.1)

    def test_rejects_low_mode(self):
        with pytest.raises(ValueError, match="j >= 2"):
            drift_toy_K(1, 0.2)


@settings(max_examples=40, deadline=None)
@given(
    exponent=st.floats(min_value=-4.0, max_value=4.0),
    scale=st.floats(min_value=1e-3, max_value=1e3),
)
def test_loglog_slope_recovers_power_law(exponent, scale):
    xs = [0.1, 0.2, 0.5, 1.0, 2.0]
    ys = [scale * x**exponent for x in xs]
    assert fit_loglog_slope(xs, ys) == pytest.approx(exponent, abs=1e-9)
