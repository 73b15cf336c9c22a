"""Poisson brackets, Lie series, and generator flows.

The bracket convention is

    {F, G} = i * sum_j (dF/du_j * dG/dubar_j - dF/dubar_j * dG/du_j),

so that {u_j, G} = i dG/dubar_j and the flow of a generator S solves
u'_j = i dS/dubar_j.  Pulling a Hamiltonian back along the time-one flow
of S is then the Lie series

    H o Phi_S = exp(-ad_S) H,     ad_S = {S, .}.

Brackets of two mass-conserving Hamiltonians are mass-conserving, and the
minimum total degree of ad_S^k H grows by deg_min(S) - 2 per step, so under
a degree cap the series terminates after finitely many orders.  Everything
dropped by the cap is tallied per monomial degree so callers can convert
the loss into a concrete error bound on a ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .hamiltonians import MajorantHamiltonian, MultiIndex, TermKey
from .spaces import FourierState, WeightProfile

__all__ = [
    "poisson_bracket",
    "bracket_capped",
    "frequency_action",
    "frequency_divisor",
    "ad_series",
    "conjugate_by_flow",
    "TransformResult",
    "flow_smallness_delta",
    "bracket_norm_bound",
    "lie_tail_bound",
    "FlowEscapeError",
    "flow_map",
    "compose_flows",
]

# Asymmetry beyond which bracket assembly refuses to symmetrize, relative to
# the l1 mass accumulated into the orbit.  Real (conjugation-symmetric) inputs
# produce exactly mirrored contributions, but the two orientations are summed
# in different orders, so a cancellation-heavy key can hold roundoff dust that
# is large relative to the (near-zero) result while still being ~1e-16 of the
# mass that flowed through it.  Gauging against the mass keeps the guard quiet
# on dust and loud on genuinely non-real inputs, whose asymmetry is of the
# same order as the mass itself.
_REALITY_GUARD = 1e-9


def _mirror_symmetrize(
    acc: dict[TermKey, complex], mass: dict[TermKey, float]
) -> dict[TermKey, complex]:
    out: dict[TermKey, complex] = {}
    seen: set[TermKey] = set()
    for key, c in acc.items():
        if key in seen:
            continue
        alpha, beta = key
        mirror = (beta, alpha)
        if mirror == key:
            scale = max(mass.get(key, 0.0), 1.0e-300)
            if abs(c.imag) > _REALITY_GUARD * scale:
                raise ValueError("bracket produced a non-real diagonal term; inputs must be real Hamiltonians")
            c = complex(c.real, 0.0)
            if c != 0.0:
                out[key] = c
            seen.add(key)
            continue
        cm = acc.get(mirror, 0.0 + 0.0j)
        scale = max(mass.get(key, 0.0), mass.get(mirror, 0.0), 1.0e-300)
        if abs(c - cm.conjugate()) > _REALITY_GUARD * scale:
            raise ValueError("bracket produced conjugation-asymmetric terms; inputs must be real Hamiltonians")
        sym = 0.5 * (c + cm.conjugate())
        if sym != 0.0:
            out[key] = sym
            out[mirror] = sym.conjugate()
        seen.add(key)
        seen.add(mirror)
    return out


def bracket_capped(
    F: MajorantHamiltonian,
    G: MajorantHamiltonian,
    degree_cap: int | None,
) -> tuple[MajorantHamiltonian, dict[int, float]]:
    """Poisson bracket with a total-degree cap.

    Returns the bracket restricted to monomials of degree <= degree_cap plus
    the l1 coefficient mass discarded above the cap, keyed by the degree the
    discarded monomials would have had.  The discarded tally is an upper
    estimate: raw contributions are counted before any cancellation, and
    degree blocks that land above the cap wholesale are charged the generic
    interaction strength deg_F * deg_G instead of the per-pair value.
    """
    window = max(F.window, G.window)
    acc: dict[TermKey, complex] = {}
    mass: dict[TermKey, float] = {}
    dropped: dict[int, float] = {}
    # group G by degree so an over-cap block costs one tally, not a pair scan
    by_deg: dict[int, list[tuple[MultiIndex, MultiIndex, complex]]] = {}
    for gamma, delta, g in G.terms():
        by_deg.setdefault(gamma.total + delta.total, []).append((gamma, delta, g))
    block_strength = {d: sum(abs(g) for _, _, g in chunk) for d, chunk in by_deg.items()}
    for alpha, beta, f in F.terms():
        deg_f = alpha.total + beta.total
        for deg_g, chunk in by_deg.items():
            deg_out = deg_f + deg_g - 2
            if degree_cap is not None and deg_out > degree_cap:
                # |alpha||delta| + |beta||gamma| <= deg_f * deg_g for any split
                bound = float(deg_f * deg_g)
                dropped[deg_out] = dropped.get(deg_out, 0.0) + abs(f) * block_strength[deg_g] * bound
                continue
            for gamma, delta, g in chunk:
                # interaction strength: sum_j alpha_j*delta_j + beta_j*gamma_j
                s1 = sum(e * delta.get(j) for j, e in alpha.entries)
                s2 = sum(e * gamma.get(j) for j, e in beta.entries)
                if s1 == 0 and s2 == 0:
                    continue
                fg = 1j * f * g
                for j, e in alpha.entries:
                    dj = delta.get(j)
                    if dj == 0:
                        continue
                    key = (alpha.minus_one(j) + gamma, beta + delta.minus_one(j))
                    acc[key] = acc.get(key, 0.0 + 0.0j) + fg * (e * dj)
                    mass[key] = mass.get(key, 0.0) + abs(fg) * (e * dj)
                for j, e in beta.entries:
                    gj = gamma.get(j)
                    if gj == 0:
                        continue
                    key = (alpha + gamma.minus_one(j), beta.minus_one(j) + delta)
                    acc[key] = acc.get(key, 0.0 + 0.0j) - fg * (e * gj)
                    mass[key] = mass.get(key, 0.0) + abs(fg) * (e * gj)
    out = _mirror_symmetrize(acc, mass)
    return MajorantHamiltonian(window, out, degree_cap), dropped


def poisson_bracket(F: MajorantHamiltonian, G: MajorantHamiltonian) -> MajorantHamiltonian:
    """{F, G} with no truncation."""
    H, _ = bracket_capped(F, G, None)
    return H


def _omega_lookup(omega) -> Callable[[int], float]:
    if callable(omega):
        return omega
    if hasattr(omega, "omega_at"):
        return omega.omega_at
    if isinstance(omega, Mapping):
        return lambda j: omega[j]
    raise TypeError("omega must be callable, a mapping, or expose omega_at()")


def frequency_divisor(omega, alpha: MultiIndex, beta: MultiIndex) -> float:
    """omega . (alpha - beta)."""
    look = _omega_lookup(omega)
    total = 0.0
    for j, e in alpha.entries:
        total += look(j) * e
    for j, e in beta.entries:
        total -= look(j) * e
    return total


def frequency_action(omega, H: MajorantHamiltonian) -> MajorantHamiltonian:
    """The diagonal-frequency derivation: each term picks up i * omega.(alpha-beta).

    Kernel terms (alpha == beta) are annihilated exactly.  For the quadratic
    Hamiltonian D = sum_j omega_j |u_j|^2 this equals {H, D}.
    """
    terms: dict[TermKey, complex] = {}
    for alpha, beta, c in H.terms():
        if alpha == beta:
            continue
        div = frequency_divisor(omega, alpha, beta)
        val = 1j * div * c
        if val != 0.0:
            terms[(alpha, beta)] = val
    return MajorantHamiltonian(H.window, terms, H.degree_cap)


# -- Lie series ---------------------------------------------------------------


@dataclass
class TransformResult:
    """Outcome of a truncated Lie-series transform."""

    hamiltonian: MajorantHamiltonian
    dropped_by_degree: dict[int, float] = field(default_factory=dict)
    orders_used: int = 0

    @property
    def dropped_total(self) -> float:
        return sum(self.dropped_by_degree.values())

    def dropped_ball_value(self, amplitude: float) -> float:
        """Sum of dropped l1 mass with each monomial evaluated at |u_j| = amplitude."""
        return sum(m * amplitude**d for d, m in self.dropped_by_degree.items())


def ad_series(
    S: MajorantHamiltonian,
    X: MajorantHamiltonian,
    coeff_fn: Callable[[int], float],
    degree_cap: int | None,
    max_order: int = 64,
) -> TransformResult:
    """sum_{k>=1} coeff_fn(k) * ad_S^k X under a degree cap.

    The iteration stops once ad_S^k X is empty.  Without a cap that requires
    deg_min(S) >= 4 (each bracket then raises the minimum degree), so a
    RuntimeError after max_order steps signals a generator that cannot
    terminate rather than a tolerance problem.
    """
    total: dict[TermKey, complex] = {}
    dropped: dict[int, float] = {}
    current = X
    orders = 0
    for k in range(1, max_order + 1):
        current, dk = bracket_capped(S, current, degree_cap)
        w = coeff_fn(k)
        for d, m in dk.items():
            dropped[d] = dropped.get(d, 0.0) + abs(w) * m
        if not current.is_zero():
            orders = k
            for alpha, beta, c in current.terms():
                key = (alpha, beta)
                total[key] = total.get(key, 0.0 + 0.0j) + w * c
        if current.is_zero():
            break
    else:
        raise RuntimeError(f"Lie series still active after {max_order} orders; check deg_min(S) and the degree cap")
    window = max(S.window, X.window)
    clean = {k: v for k, v in total.items() if v != 0.0}
    return TransformResult(MajorantHamiltonian(window, clean, degree_cap), dropped, orders)


def conjugate_by_flow(
    S: MajorantHamiltonian,
    H: MajorantHamiltonian,
    degree_cap: int | None,
    max_order: int = 64,
) -> TransformResult:
    """H o Phi_S = exp(-ad_S) H, truncated at the degree cap."""
    series = ad_series(S, H, lambda k: (-1.0) ** k / math.factorial(k), degree_cap, max_order)
    return TransformResult(H + series.hamiltonian, series.dropped_by_degree, series.orders_used)


# -- analytic bounds ----------------------------------------------------------


def flow_smallness_delta(r: float, rho: float) -> float:
    """Generator threshold rho / (8 e (r + rho)) for an analytic time-one flow."""
    if r <= 0 or rho <= 0:
        raise ValueError("r and rho must be positive")
    return rho / (8.0 * math.e * (r + rho))


def bracket_norm_bound(norm_f: float, norm_g: float, r: float, rho: float) -> float:
    """4 (1 + r/rho) |F|_{r+rho} |G|_{r+rho}, an upper bound for |{F,G}|_r."""
    if r <= 0 or rho <= 0:
        raise ValueError("r and rho must be positive")
    return 4.0 * (1.0 + r / rho) * norm_f * norm_g


def lie_tail_bound(h_norm: float, s_norm: float, r: float, rho: float, order: int) -> float:
    """Bound 2 |H|_{r+rho} (|S| / 2 delta)^order for the Lie-series tail from a given order.

    Valid only under the flow smallness condition |S| <= delta; outside it the
    series need not converge and the bound degenerates to +inf.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    delta = flow_smallness_delta(r, rho)
    if s_norm > delta:
        return math.inf
    return 2.0 * h_norm * (s_norm / (2.0 * delta)) ** order


# -- flows --------------------------------------------------------------------


class FlowEscapeError(RuntimeError):
    """The flow left the prescribed ball before the requested time."""

    def __init__(self, time: float, radius: float):
        super().__init__(f"flow escaped the ball of radius {radius:g} at t = {time:.6g}")
        self.time = time
        self.radius = radius


def flow_map(
    S: MajorantHamiltonian,
    u: FourierState,
    t: float = 1.0,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    ball_radius: float | None = None,
    profile: WeightProfile | None = None,
) -> FourierState:
    """Time-t flow of u' = i dS/dubar applied to u.

    The state window is enlarged to cover the modes S touches.  When
    ball_radius is given the integration aborts with FlowEscapeError as soon
    as the (optionally weighted) l2 norm exceeds it.
    """
    window = max(u.window, S.window)
    n = 2 * window + 1
    amps = np.zeros(n, dtype=np.complex128)
    lo = window - u.window
    amps[lo : lo + 2 * u.window + 1] = u.amps
    prog = S._gradient_program(window)
    if prog is None:
        return FourierState(window, amps)
    coeffs, a_exp, b_exp, targets = prog

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        z = y[:n] + 1j * y[n:]
        vals = coeffs * np.prod(z[None, :] ** a_exp, axis=1)
        vals *= np.prod(np.conj(z)[None, :] ** b_exp, axis=1)
        grad = np.zeros(n, dtype=np.complex128)
        np.add.at(grad, targets, vals)
        dz = 1j * grad
        return np.concatenate([dz.real, dz.imag])

    events = []
    if ball_radius is not None:
        weights = profile.weights(window) if profile is not None else np.ones(n)

        def escape(_t: float, y: np.ndarray) -> float:
            z = y[:n] + 1j * y[n:]
            return ball_radius - float(np.sqrt(np.sum((weights * np.abs(z)) ** 2)))

        escape.terminal = True  # type: ignore[attr-defined]
        escape.direction = -1.0  # type: ignore[attr-defined]
        events.append(escape)

    y0 = np.concatenate([amps.real, amps.imag])
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol, events=events or None)
    if events and sol.t_events[0].size:
        raise FlowEscapeError(float(sol.t_events[0][0]), ball_radius)
    if not sol.success:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    y = sol.y[:, -1]
    return FourierState(window, y[:n] + 1j * y[n:])


def compose_flows(
    generators: Sequence[MajorantHamiltonian],
    u: FourierState,
    t: float = 1.0,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    ball_radius: float | None = None,
    profile: WeightProfile | None = None,
) -> FourierState:
    """Apply the time-t flows of a generator list, last generator first.

    With generators [S_0, ..., S_{N-1}] this computes
    Phi_{S_0}(Phi_{S_1}(... Phi_{S_{N-1}}(u) ...)), matching the convention
    that later-constructed generators act on the state before earlier ones.
    """
    state = u
    for S in reversed(list(generators)):
        state = flow_map(S, state, t=t, rtol=rtol, atol=atol, ball_radius=ball_radius, profile=profile)
    return state
