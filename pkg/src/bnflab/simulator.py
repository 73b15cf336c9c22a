"""Spectral NLS simulator and drift toys.

Time integration of the windowed gauge-invariant NLS system

    i du/dt = -omega_j u_j - (f(|u|^2) u)_j ,      |j| <= J,

equivalently u' = i dH/dubar for H = sum_j omega_j |u_j|^2 + (2pi)^-1 int
F(|u|^2) dx with F' = f.  The nonlinearity is a polynomial f(y) = sum_d c_d y^d
with real coefficients and f(0) = 0, described by `NonlinearitySpec`.

The propagator is Strang splitting on a zero-padded Fourier grid.  Both
substeps are exact flows: the linear half-step is a pure phase per mode, and
the gauge invariance of f(|u|^2) makes the nonlinear step a pointwise phase
e^{i f(|u(x)|^2) dt} that leaves |u(x)| untouched.  Mass is therefore conserved
to roundoff, and momentum up to the (tiny) spectral tail that wraps around the
padded grid; the splitting error shows up only in the energy and in the state
itself, at second order in dt.

`hamiltonian_from_nonlinearity` expands the same Hamiltonian into an explicit
`MajorantHamiltonian` (multinomial coefficients over momentum-matched index
pairs), which is what the normal-form engine consumes.  `nemitskii_field`
evaluates the nonlinear field through the padded FFT; the two routes agree to
machine precision and the test suite pins that.

The module also ships two tiny drift toys (`drift_toy_H`, `drift_toy_K`):
few-mode Hamiltonians with an exactly conserved quantity and a second action
that drifts at a known rate.  They are integrated with the adaptive `flow_map`
integrator rather than splitting, since accuracy there matters more than
speed.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .frequencies import FrequencyVector
from .hamiltonians import HamiltonianBuilder, MajorantHamiltonian, MultiIndex
from .lie import flow_map
from .spaces import FourierState, WeightProfile

__all__ = [
    "NonlinearitySpec",
    "hamiltonian_from_nonlinearity",
    "nemitskii_field",
    "dispersion_array",
    "BlowupError",
    "SplitStepper",
    "Trajectory",
    "split_step_evolve",
    "StabilityMeasurement",
    "measure_stability_time",
    "DriftToyResult",
    "drift_toy_H",
    "drift_toy_K",
    "fit_loglog_slope",
]


# -- nonlinearity ------------------------------------------------------------


@dataclass(frozen=True)
class NonlinearitySpec:
    """Polynomial nonlinearity f(y) = sum_d c_d y^d, d >= 1, c_d real.

    `terms` is a sorted tuple of (power, coefficient) pairs.  `radius` is the
    reference amplitude R used by `f_norm`, the majorant sum_d |c_d| R^d that
    feeds the admissible-radius bookkeeping of the engine.
    """

    terms: tuple[tuple[int, float], ...]
    radius: float = 1.0

    def __post_init__(self):
        if not self.terms:
            raise ValueError("nonlinearity needs at least one term")
        seen = set()
        for d, c in self.terms:
            if not isinstance(d, int) or d < 1:
                raise ValueError(f"power {d} invalid: f(x, 0) = 0 needs integer d >= 1")
            if d in seen:
                raise ValueError(f"duplicate power {d}")
            if c == 0 or not math.isfinite(c):
                raise ValueError(f"coefficient for y^{d} must be finite and nonzero")
            seen.add(d)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "terms", tuple(sorted(self.terms)))

    @classmethod
    def from_coefficients(cls, coeffs: Mapping[int, float], radius: float = 1.0) -> "NonlinearitySpec":
        return cls(tuple((int(d), float(c)) for d, c in coeffs.items()), radius)

    @classmethod
    def cubic(cls, coefficient: float = 1.0, radius: float = 1.0) -> "NonlinearitySpec":
        """f(y) = c y, the cubic NLS."""
        return cls(((1, float(coefficient)),), radius)

    @property
    def max_power(self) -> int:
        return self.terms[-1][0]

    def f_norm(self, radius: float | None = None) -> float:
        rr = self.radius if radius is None else radius
        return sum(abs(c) * rr**d for d, c in self.terms)

    def evaluate(self, y):
        """f(y), vectorized over numpy arrays."""
        out = np.zeros_like(np.asarray(y, dtype=float))
        for d, c in self.terms:
            out += c * np.asarray(y, dtype=float) ** d
        return out

    def potential(self, y):
        """F(y) = int_0^y f, so that the x-space energy density is F(|u|^2)."""
        out = np.zeros_like(np.asarray(y, dtype=float))
        for d, c in self.terms:
            out += c / (d + 1) * np.asarray(y, dtype=float) ** (d + 1)
        return out

    def to_json_dict(self) -> dict:
        return {"terms": [[d, c] for d, c in self.terms], "radius": self.radius}


def _momentum_buckets(window: int, size: int) -> dict[int, list[MultiIndex]]:
    """Multisets of `size` modes in [-window, window], grouped by total momentum."""
    buckets: dict[int, list[MultiIndex]] = {}
    for combo in itertools.combinations_with_replacement(range(-window, window + 1), size):
        counts: dict[int, int] = {}
        for j in combo:
            counts[j] = counts.get(j, 0) + 1
        buckets.setdefault(sum(combo), []).append(MultiIndex(counts))
    return buckets


def _multinomial(mi: MultiIndex, total: int) -> int:
    out = math.factorial(total)
    for _, e in mi.entries:
        out //= math.factorial(e)
    return out


def hamiltonian_from_nonlinearity(
    spec: NonlinearitySpec,
    window: int,
    degree_cap: int | None = None,
) -> MajorantHamiltonian:
    """Galerkin Hamiltonian of (2pi)^-1 int F(|u|^2) dx on modes |j| <= window.

    Expanding |u|^{2m} = u^m ubar^m in Fourier and integrating kills all pairs
    except sum(alpha) = sum(beta), with multinomial weights m!/alpha!:

        (2pi)^-1 int |u|^{2m} dx = sum_{|a|=|b|=m, momentum-matched}
                                   (m!/a!) (m!/b!) u^a ubar^b.

    Each f-term c_d y^d contributes that sum for m = d + 1, scaled by
    c_d / (d + 1).  Pair counts grow fast: the cubic term at window 32 already
    yields ~4e4 monomials, so keep the window small when a quartic or higher
    term is present.
    """
    cap = 2 * (spec.max_power + 1) if degree_cap is None else degree_cap
    builder = HamiltonianBuilder(window, degree_cap=cap)
    for d, c in spec.terms:
        m = d + 1
        if 2 * m > cap:
            raise ValueError(f"term y^{d} needs degree {2 * m}, beyond cap {cap}")
        scale = c / m
        buckets = _momentum_buckets(window, m)
        for group in buckets.values():
            weights = [_multinomial(mi, m) for mi in group]
            for (alpha, wa), (beta, wb) in itertools.product(zip(group, weights), repeat=2):
                builder.add(alpha, beta, scale * wa * wb)
    return builder.build()


# -- padded-grid field evaluation --------------------------------------------


def _grid_size_for(window: int, max_power: int, requested: int | None) -> int:
    """Power-of-two grid large enough to keep windowed modes alias-clean.

    One application of f(|u|^2)u on window-supported data reaches mode
    (2 max_power + 1) * window; keeping wraparound off |j| <= window needs
    N > (2 max_power + 2) * window.  Time stepping spreads support further, so
    the default also enforces N >= 8 * window, which puts the wrapped tail of
    any reasonably smooth state below roundoff.
    """
    need = max((2 * max_power + 2) * window + 2, 8 * window, 8)
    if requested is not None:
        if requested < need:
            raise ValueError(f"grid size {requested} below dealiasing minimum {need}")
        return requested
    return 1 << (need - 1).bit_length()


def _embed_indices(window: int, grid: int) -> np.ndarray:
    return np.mod(np.arange(-window, window + 1), grid)


def nemitskii_field(
    spec: NonlinearitySpec,
    u: FourierState,
    grid_size: int | None = None,
) -> np.ndarray:
    """Spectral coefficients of f(|u|^2) u over the window of u, via padded FFT.

    Equals dH/dubar of `hamiltonian_from_nonlinearity` evaluated at u; the
    grid is sized so that no aliased copy lands inside the window.
    """
    grid = _grid_size_for(u.window, spec.max_power, grid_size)
    idx = _embed_indices(u.window, grid)
    a = np.zeros(grid, dtype=np.complex128)
    a[idx] = u.amps
    vals = grid * np.fft.ifft(a)
    vals *= spec.evaluate(np.abs(vals) ** 2)
    return (np.fft.fft(vals) / grid)[idx]


def dispersion_array(omega, modes: np.ndarray) -> np.ndarray:
    """Frequencies over an array of (signed) mode numbers.

    Accepts a FrequencyVector (extended by omega_j = j^2 beyond its window),
    a callable j -> omega_j, or None for the unperturbed j^2.
    """
    modes = np.asarray(modes, dtype=int)
    if omega is None:
        return modes.astype(float) ** 2
    if isinstance(omega, FrequencyVector):
        out = modes.astype(float) ** 2
        inside = np.abs(modes) <= omega.window
        out[inside] = [omega.omega_at(int(j)) for j in modes[inside]]
        return out
    if callable(omega):
        return np.array([float(omega(int(j))) for j in modes])
    raise TypeError(f"cannot interpret dispersion {omega!r}")


# -- Strang stepping ----------------------------------------------------------


class BlowupError(RuntimeError):
    """Amplitude passed the blowup threshold; carries the last finite state."""

    def __init__(self, t: float, state: FourierState):
        super().__init__(f"field amplitude exceeded blowup threshold at t = {t:.6g}")
        self.t = t
        self.state = state


class SplitStepper:
    """Strang splitting on the padded grid, one state, many steps.

    The state lives as the full grid spectrum (fft ordering); windowed
    quantities are extracted on demand.  Both substeps preserve |u_k| resp.
    |u(x)| exactly, so `mass()` is constant to roundoff by construction.
    """

    def __init__(
        self,
        u0: FourierState,
        omega,
        spec: NonlinearitySpec,
        dt: float,
        grid_size: int | None = None,
        blowup_threshold: float = 1e8,
    ):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.window = u0.window
        self.spec = spec
        self.dt = dt
        self.grid = _grid_size_for(u0.window, spec.max_power, grid_size)
        self.blowup_threshold = blowup_threshold
        self._idx = _embed_indices(u0.window, self.grid)
        self._modes = np.fft.fftfreq(self.grid, d=1.0 / self.grid).astype(int)
        self._omega = dispersion_array(omega, self._modes)
        self._half_phase = np.exp(0.5j * self._omega * dt)
        self._spectrum = np.zeros(self.grid, dtype=np.complex128)
        self._spectrum[self._idx] = u0.amps
        self.t = 0.0
        self.steps_taken = 0

    def step(self, n: int = 1) -> None:
        a = self._spectrum
        for _ in range(n):
            a *= self._half_phase
            vals = self.grid * np.fft.ifft(a)
            y = np.abs(vals) ** 2
            if not np.all(np.isfinite(y)) or np.max(y) > self.blowup_threshold**2:
                raise BlowupError(self.t, self.windowed())
            vals *= np.exp(1j * self.dt * self.spec.evaluate(y))
            a = np.fft.fft(vals) / self.grid
            a *= self._half_phase
            self.steps_taken += 1
            self.t = self.steps_taken * self.dt
        self._spectrum = a

    def windowed(self) -> FourierState:
        return FourierState(self.window, self._spectrum[self._idx].copy())

    def mass(self) -> float:
        return float(np.sum(np.abs(self._spectrum) ** 2))

    def momentum(self) -> float:
        return float(np.sum(self._modes * np.abs(self._spectrum) ** 2))

    def energy(self) -> float:
        lin = float(np.sum(self._omega * np.abs(self._spectrum) ** 2))
        vals = self.grid * np.fft.ifft(self._spectrum)
        return lin + float(np.mean(self.spec.potential(np.abs(vals) ** 2)))

    def tail_mass(self) -> float:
        """Mass sitting outside the window: honesty metric for the padding."""
        total = self.mass()
        inside = float(np.sum(np.abs(self._spectrum[self._idx]) ** 2))
        return total - inside


@dataclass
class Trajectory:
    """Recorded diagnostics of one split-step run."""

    window: int
    dt: float
    grid_size: int
    times: np.ndarray
    mass: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray
    tail_mass: np.ndarray
    final: FourierState

    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))

    def momentum_drift(self) -> float:
        return float(np.max(np.abs(self.momentum - self.momentum[0])))

    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mass", "momentum", "energy", "tail_mass"])
            for i in range(len(self.times)):
                writer.writerow(
                    [
                        f"{self.times[i]:.17g}",
                        f"{self.mass[i]:.17g}",
                        f"{self.momentum[i]:.17g}",
                        f"{self.energy[i]:.17g}",
                        f"{self.tail_mass[i]:.17g}",
                    ]
                )


def split_step_evolve(
    u0: FourierState,
    omega,
    spec: NonlinearitySpec,
    dt: float,
    n_steps: int,
    record_every: int = 1,
    grid_size: int | None = None,
    blowup_threshold: float = 1e8,
) -> Trajectory:
    """Run n_steps of Strang splitting, recording diagnostics every record_every steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if record_every < 1:
        raise ValueError("record_every must be at least 1")
    stepper = SplitStepper(u0, omega, spec, dt, grid_size, blowup_threshold)
    times = [0.0]
    mass = [stepper.mass()]
    mom = [stepper.momentum()]
    energy = [stepper.energy()]
    tail = [stepper.tail_mass()]
    done = 0
    while done < n_steps:
        chunk = min(record_every, n_steps - done)
        stepper.step(chunk)
        done += chunk
        times.append(stepper.t)
        mass.append(stepper.mass())
        mom.append(stepper.momentum())
        energy.append(stepper.energy())
        tail.append(stepper.tail_mass())
    return Trajectory(
        window=u0.window,
        dt=dt,
        grid_size=stepper.grid,
        times=np.array(times),
        mass=np.array(mass),
        momentum=np.array(mom),
        energy=np.array(energy),
        tail_mass=np.array(tail),
        final=stepper.windowed(),
    )


# -- stability-time measurement ------------------------------------------------


@dataclass(frozen=True)
class StabilityMeasurement:
    """First-exit times of an ensemble from the tube ||u|| <= tube_factor * delta."""

    delta: float
    tube_factor: float
    t_max: float
    exit_times: tuple[float, ...]
    capped: tuple[bool, ...]
    seeds: tuple[int, ...]

    @property
    def min_exit_time(self) -> float:
        return min(self.exit_times)

    @property
    def all_capped(self) -> bool:
        return all(self.capped)

    @property
    def fraction_capped(self) -> float:
        return sum(self.capped) / len(self.capped)

    def to_json_dict(self) -> dict:
        return {
            "delta": self.delta,
            "tube_factor": self.tube_factor,
            "t_max": self.t_max,
            "exit_times": list(self.exit_times),
            "capped": list(self.capped),
            "seeds": list(self.seeds),
            "min_exit_time": self.min_exit_time,
        }


def measure_stability_time(
    spec: NonlinearitySpec,
    omega,
    window: int,
    delta: float,
    dt: float,
    t_max: float,
    profile: WeightProfile | None = None,
    n_members: int = 16,
    seed: int = 2026,
    tube_factor: float = 4.0,
    check_every: int = 1,
    support: int | None = None,
    grid_size: int | None = None,
) -> StabilityMeasurement:
    """Empirical first-exit time from the norm tube, over a random-phase ensemble.

    Each member starts at profile norm exactly delta (l2 if no profile) and is
    stepped until its windowed norm passes tube_factor * delta or t_max is
    reached; a member that never exits is reported capped at t_max.  Blowup
    counts as exit at the blowup time.
    """
    if delta <= 0 or t_max <= 0:
        raise ValueError("delta and t_max must be positive")
    n_steps = max(1, math.ceil(t_max / dt))
    exits: list[float] = []
    capped: list[bool] = []
    seeds = tuple(seed + k for k in range(n_members))
    for member_seed in seeds:
        rng = np.random.default_rng(member_seed)
        u0 = random_state_like(window, rng, profile, delta, support)
        stepper = SplitStepper(u0, omega, spec, dt, grid_size)
        exit_t = t_max
        hit = False
        done = 0
        while done < n_steps:
            chunk = min(check_every, n_steps - done)
            try:
                stepper.step(chunk)
            except BlowupError as err:
                exit_t, hit = err.t, True
                break
            done += chunk
            state = stepper.windowed()
            norm = state.seq_norm(profile) if profile is not None else state.l2_norm()
            if norm > tube_factor * delta:
                exit_t, hit = stepper.t, True
                break
        exits.append(exit_t)
        capped.append(not hit)
    return StabilityMeasurement(
        delta=delta,
        tube_factor=tube_factor,
        t_max=t_max,
        exit_times=tuple(exits),
        capped=tuple(capped),
        seeds=seeds,
    )


def random_state_like(
    window: int,
    rng: np.random.Generator,
    profile: WeightProfile | None,
    norm: float,
    support: int | None,
) -> FourierState:
    # thin wrapper so the ensemble draw sits in one place
    from .spaces import random_state

    return random_state(window, rng, profile=profile, norm=norm, support=support)


# -- drift toys ---------------------------------------------------------------


@dataclass
class DriftToyResult:
    """One integrated drift-toy run with sampled actions and invariants."""

    label: str
    j: int
    delta: float
    decay: float
    t_final: float
    times: tuple[float, ...]
    action: tuple[float, ...]
    predicted_drift: float
    invariant_drifts: dict[str, float]
    initial: FourierState
    final: FourierState

    @property
    def drift(self) -> float:
        base = self.action[0]
        return max(abs(a - base) for a in self.action)

    @property
    def drift_ratio(self) -> float:
        return self.drift / self.predicted_drift


def _sampled_flow(
    H: MajorantHamiltonian,
    u0: FourierState,
    t_final: float,
    n_samples: int,
) -> tuple[tuple[float, ...], list[FourierState]]:
    times = [0.0]
    states = [u0.copy()]
    u = u0
    for k in range(1, n_samples + 1):
        u = flow_map(H, u, t=t_final / n_samples)
        times.append(k * t_final / n_samples)
        states.append(u)
    return tuple(times), states


def drift_toy_H(
    j: int,
    delta: float,
    a_strip: float = 1.0,
    decay: float = 1.0,
    t_final: float = 1.0,
    amplitude_scale: float = 1.0,
    v_shift: float | None = None,
    phase: float = math.pi / 2,
    n_samples: int = 32,
) -> DriftToyResult:
    """Two-mode drift toy: |u_1|^2 + (j^2 + V_j)|u_j|^2 + e^{-a j} Re(|u_1|^2 u_1 ubar_j).

    J_2 = |u_1|^2 + |u_j|^2 is exactly conserved (the coupling preserves total
    action), while J_1 = |u_1|^2 obeys J_1' = e^{-a j} J_1^{3/2} (J_2 -
    J_1)^{1/2} sin(phi_1) in the angle phi_1 = theta_1 - theta_j.  The default
    detuning V_j = 1 - j^2 makes phi_1 stationary at leading order, so
    starting it at pi/2 locks the drift on: over a time T of order one the
    growth is delta^4 j^{-p} e^{-a j} T for the amplitudes used here,

        u_1(0) = s delta e^{i phase},   u_j(0) = s j^{-p} delta,

    with s = amplitude_scale and p = decay.
    """
    if j < 2:
        raise ValueError("the coupled mode must have j >= 2")
    v = (1.0 - j * j) if v_shift is None else v_shift
    coupling = math.exp(-a_strip * j)
    e1 = MultiIndex.single(1)
    ej = MultiIndex.single(j)
    H = (
        HamiltonianBuilder(j, degree_cap=4)
        .add_action(1, 1.0)
        .add_action(j, j * j + v)
        .add_real_pair(e1 + e1, e1 + ej, 0.5 * coupling)
        .build()
    )
    u0 = FourierState.zeros(j)
    u0.amps[1 + j] = amplitude_scale * delta * np.exp(1j * phase)
    u0.amps[j + j] = amplitude_scale * delta * j ** (-decay)
    times, states = _sampled_flow(H, u0, t_final, n_samples)
    j1 = tuple(abs(s.amp(1)) ** 2 for s in states)
    j2 = [abs(s.amp(1)) ** 2 + abs(s.amp(j)) ** 2 for s in states]
    predicted = coupling * (amplitude_scale * delta) ** 3 * (amplitude_scale * delta * j ** (-decay)) * t_final
    return DriftToyResult(
        label="H",
        j=j,
        delta=delta,
        decay=decay,
        t_final=t_final,
        times=times,
        action=j1,
        predicted_drift=predicted,
        invariant_drifts={"J2": max(abs(v - j2[0]) for v in j2)},
        initial=states[0],
        final=states[-1],
    )


def drift_toy_K(
    j: int,
    delta: float,
    decay: float = 1.0,
    t_final: float = 1.0,
    amplitude_scale: float = 1.0,
    phase: float = math.pi / 2,
    n_samples: int = 32,
) -> DriftToyResult:
    """Three-mode drift toy: |u_1|^2 + j^2 |u_j|^2 + Re(ubar_0^{j-1} u_1^j ubar_j).

    Both L = |u_0|^2 + |u_1|^2 + |u_j|^2 and M = |u_1|^2 + j |u_j|^2 are
    conserved (the coupling is mass- and momentum-balanced), while |u_j|^2
    moves at rate |u_0|^{j-1} |u_1|^j |u_j|: of order j^{-p} delta^{2j} for

        u_0(0) = s delta,  u_1(0) = s delta,  u_j(0) = s j^{-p} delta e^{i phase},

    so on a fixed time window the drift scales as delta^{2j} (slope 2j in a
    log-log fit against delta).  The coupling angle rotates at j - j^2, which
    dilutes the constant but not the slope.
    """
    if j < 2:
        raise ValueError("the coupled mode must have j >= 2")
    alpha = MultiIndex({1: j})
    beta = MultiIndex({0: j - 1, j: 1})
    H = (
        HamiltonianBuilder(j, degree_cap=2 * j)
        .add_action(1, 1.0)
        .add_action(j, float(j * j))
        .add_real_pair(alpha, beta, 0.5)
        .build()
    )
    u0 = FourierState.zeros(j)
    s = amplitude_scale
    u0.amps[0 + j] = s * delta
    u0.amps[1 + j] = s * delta
    u0.amps[j + j] = s * delta * j ** (-decay) * np.exp(1j * phase)
    times, states = _sampled_flow(H, u0, t_final, n_samples)
    jj = tuple(abs(st.amp(j)) ** 2 for st in states)
    ell = [sum(abs(st.amp(k)) ** 2 for k in (0, 1, j)) for st in states]
    em = [abs(st.amp(1)) ** 2 + j * abs(st.amp(j)) ** 2 for st in states]
    predicted = (s * delta) ** (2 * j - 1) * (s * delta * j ** (-decay)) * t_final
    return DriftToyResult(
        label="K",
        j=j,
        delta=delta,
        decay=decay,
        t_final=t_final,
        times=times,
        action=jj,
        predicted_drift=predicted,
        invariant_drifts={
            "L": max(abs(v - ell[0]) for v in ell),
            "M": max(abs(v - em[0]) for v in em),
        },
        initial=states[0],
        final=states[-1],
    )


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
