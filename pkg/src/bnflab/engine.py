"""The truncated normalization engine: schedules, steps, stability times.

A run carries H = D_omega + Z + R through N steps of the scheme

    exp(-ad_S)(D + Z + R) = D + Z
        + sum_{k>=1} (-1)^k [ ad_S^k Z / k! + k/(k+1)! ad_S^k R ],

where S solves L_omega S = R termwise.  The bare remainder cancels against
{S, D_omega}, so every surviving range term carries at least one extra
bracket with S and the minimum scaling degree of R ratchets up by at least
one per step.  Geometry shrinks along the schedule

    r_n = (2 - n/N) r,    eta_n = (1 - n/N) eta,    w_0 <= ... <= w_N,

trading a slice of radius and penalty per step for one more degree of
smallness; after N steps the remainder norm is bounded by C3 r^(2(N+1)).

Constants consumed by the smallness conditions are taken as
min(enumerated supremum over an explicit pair budget, closed-form bound);
each recorded value carries which side won.  Enumerated values are exact
suprema for the run whenever the budget covers every reachable pair of the
truncation (flagged), and the closed forms are unconditional.  Strict mode
aborts on a violated condition quoting the inequality; permissive mode
records it and proceeds, so the engine doubles as a formal normal-form
calculator at truncations the smallness theory does not reach.

Stability-time formulas at the bottom work in log space throughout: at
realistic inputs the admissibility thresholds underflow float64 by
thousands of orders of magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .constants import ConstantsLedger, c_alg
from .hamiltonians import (
    MajorantHamiltonian,
    MultiIndex,
    NormParams,
    radius_rescale_factor,
    upper_norm,
)
from .lie import ad_series, compose_flows, frequency_divisor
from .smalldiv import RESONANCE_FLOOR, ResonanceError, enumerate_C, enumerate_K, iter_pairs
from .spaces import FourierState, WeightProfile

__all__ = [
    "BnfSchedule",
    "CaseGeometry",
    "case_geometry",
    "UsedConstant",
    "SmallnessViolation",
    "BnfStepReport",
    "bnf_step",
    "BnfResult",
    "RadiusReport",
    "admissible_radius",
    "bnf_normalize",
    "stability_window",
    "OutOfRegimeError",
    "StabilityBound",
    "stability_bound",
]

_MAX_LOG = 700.0


class SmallnessViolation(RuntimeError):
    """A smallness condition failed in strict mode; the message quotes it."""


@dataclass(frozen=True)
class UsedConstant:
    """A constant actually consumed by an inequality, with its provenance.

    source is "enumerated" when the budget supremum beat the closed form,
    "closed-form" otherwise.
    """

    name: str
    log_value: float
    source: str

    @property
    def value(self) -> float | None:
        return math.exp(self.log_value) if self.log_value < _MAX_LOG else None

    def to_json_dict(self) -> dict:
        return {"log_value": self.log_value, "source": self.source, "value": self.value}


def _pick(name: str, enum_log: float, closed_log: float, floor_at_one: bool = False) -> UsedConstant:
    if floor_at_one:
        enum_log = max(enum_log, 0.0)
    if enum_log == -math.inf or closed_log < enum_log:
        return UsedConstant(name, closed_log, "closed-form")
    return UsedConstant(name, enum_log, "enumerated")


# -- schedule -------------------------------------------------------------------


@dataclass(frozen=True)
class BnfSchedule:
    """Radius, penalty, and weight ladder for an N-step normalization.

    profile anchors the weight ladder: for cases S and M it is the rung-0
    weight and rung n adds tau*n to the exponent; for case G it is the
    rung-N target and rung n runs at sub-exponential rate s + (n/N - 1) eta,
    so the run starts eta short of the target rate and earns it back.
    """

    case: str
    steps: int
    r: float
    eta: float
    profile: WeightProfile
    tau: float = 0.0

    def __post_init__(self) -> None:
        if self.case not in ("S", "M", "G"):
            raise ValueError(f"unknown case {self.case!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.profile.case != self.case:
            raise ValueError(f"case {self.case} schedule needs a matching weight profile")
        if self.case == "M":
            if self.eta != 0.0:
                raise ValueError("case M runs at eta = 0")
            if self.tau <= 0:
                raise ValueError("case M ladder needs tau > 0")
        else:
            if self.eta <= 0.0:
                raise ValueError(f"case {self.case} needs eta > 0")
            if self.case == "S" and self.tau <= 0:
                raise ValueError("case S ladder needs tau > 0")
            if self.case == "G" and self.profile.s < self.eta - 1e-15:
                raise ValueError("case G ladder needs target rate s >= eta")

    def _check(self, n: int, top: int) -> None:
        if not 0 <= n <= top:
            raise ValueError(f"rung {n} outside 0..{top}")

    def radius(self, n: int) -> float:
        self._check(n, self.steps)
        return (2.0 - n / self.steps) * self.r

    def eta_at(self, n: int) -> float:
        self._check(n, self.steps)
        return (1.0 - n / self.steps) * self.eta

    def mid_radius(self, n: int) -> float:
        self._check(n, self.steps - 1)
        return 0.5 * (self.radius(n) + self.radius(n + 1))

    def rung(self, n: int) -> WeightProfile:
        self._check(n, self.steps)
        p = self.profile
        if self.case == "S":
            return WeightProfile.sobolev(p.p + self.tau * n)
        if self.case == "M":
            return WeightProfile.modified_sobolev(p.p + self.tau * n)
        s_n = p.s + (n / self.steps - 1.0) * self.eta
        return WeightProfile.gevrey(p.p, max(s_n, 0.0), p.a, p.theta)

    def params(self, n: int) -> NormParams:
        """The space the step-n input lives in."""
        return NormParams(self.radius(n), self.eta_at(n), self.rung(n))

    def mid_params(self, n: int) -> NormParams:
        """Where the step-n generator (and output norms) are measured."""
        return NormParams(self.mid_radius(n), self.eta_at(n + 1), self.rung(n + 1))

    def sharp_params(self, n: int) -> NormParams:
        """Displacement geometry of step n: final penalty and weight."""
        return NormParams(self.mid_radius(n), self.eta_at(self.steps), self.rung(self.steps))

    def delta(self, n: int) -> float:
        """(r_n - r_{n+1}) / (16 e r_n), the step-n smallness budget."""
        self._check(n, self.steps - 1)
        return (self.radius(n) - self.radius(n + 1)) / (16.0 * math.e * self.radius(n))

    @property
    def delta_hat(self) -> float:
        """min_n delta(n) = 1/(32 e N), attained at the widest rung."""
        return min(self.delta(n) for n in range(self.steps))


@dataclass(frozen=True)
class CaseGeometry:
    r_bar: float
    eta: float
    profile: WeightProfile
    tau: float


def case_geometry(ledger: ConstantsLedger, case: str) -> CaseGeometry:
    """Default base radius, penalty, anchor profile, and ladder increment.

    S starts from the plain Sobolev space at p = 1 with half the analyticity
    strip as penalty; M runs penalty-free on the modified family; G anchors
    the target Gevrey profile from the ledger inputs.
    """
    inp = ledger.inputs
    if case == "S":
        return CaseGeometry(
            math.sqrt(inp.radius) / c_alg(1.0),
            inp.a_strip / 2.0,
            WeightProfile.sobolev(1.0),
            ledger.value("tau"),
        )
    if case == "M":
        return CaseGeometry(
            math.sqrt(inp.radius / 10.0),
            0.0,
            WeightProfile.modified_sobolev(1.0),
            ledger.value("tau1"),
        )
    if case == "G":
        return CaseGeometry(
            math.sqrt(inp.radius) / c_alg(inp.p),
            ledger.value("eta_G"),
            WeightProfile.gevrey(inp.p, inp.s, inp.a_lower, inp.theta),
            0.0,
        )
    raise ValueError(f"unknown case {case!r}")


def _closed_hip0_logs(ledger: ConstantsLedger, case: str, steps: int, eta: float) -> dict[str, float]:
    """Closed-form schedule-wide bounds on the three transfer constants.

    Case S pays the weight gain through C_mon and the homological family;
    cases M and G have C = 1 exactly (weights only grow along the ladder and
    the gain is free on momentum pairs / absorbed in the rate)."""
    if case == "S":
        sig = eta / steps
        tau = ledger.value("tau")
        return {
            "C": ledger.c_mon(4.0 * steps, sig, tau).log_value,
            "K": ledger.script_c2(4.0 * steps, sig, tau).log_value,
            "K_sharp": ledger.script_c2(4.0 * steps, sig, steps * tau).log_value,
        }
    if case == "M":
        kb = ledger.homological_bound("M").log_value
        return {"C": 0.0, "K": kb, "K_sharp": kb}
    kb = ledger.homological_bound("G", sigma=eta / steps).log_value
    return {"C": 0.0, "K": kb, "K_sharp": kb}


# -- one step -------------------------------------------------------------------


@dataclass
class BnfStepReport:
    n: int
    S: MajorantHamiltonian
    Z: MajorantHamiltonian
    R: MajorantHamiltonian
    delta: float
    constants: dict[str, UsedConstant]
    r_norm_in: float
    z_norm_in: float
    smallness_ok: bool
    log_smallness_threshold: float
    s_norm_bound: float
    displacement_bound: float
    bound_Z: float
    bound_R: float
    degree_in: float
    degree_out: float
    dropped_by_degree: dict[int, float] = field(default_factory=dict)
    flags: dict = field(default_factory=dict)


def _solve_generator(R: MajorantHamiltonian, omega) -> MajorantHamiltonian:
    # each mirror pair shares one divisor evaluation, so S comes out exactly
    # conjugation-symmetric and downstream bracket cancellations stay exact
    terms: dict = {}
    for alpha, beta, c in R.terms():
        if alpha == beta:
            raise ValueError(f"kernel term alpha = beta = {alpha.to_dict()} has no preimage")
        if (alpha, beta) in terms:
            continue
        div = frequency_divisor(omega, alpha, beta)
        if abs(div) < RESONANCE_FLOOR:
            raise ResonanceError(alpha, beta, abs(div))
        terms[(alpha, beta)] = c / (1j * div)
        c_mirror = R.coeff(beta, alpha)
        if c_mirror != 0:
            terms[(beta, alpha)] = c_mirror / (-1j * div)
    return MajorantHamiltonian(R.window, terms, R.degree_cap)


def bnf_step(
    Z: MajorantHamiltonian,
    R: MajorantHamiltonian,
    omega,
    schedule: BnfSchedule,
    n: int,
    ledger: ConstantsLedger,
    *,
    strict: bool = False,
    enum_budget: tuple[int, int] | None = None,
    budget_pairs: Sequence[tuple[MultiIndex, MultiIndex]] | None = None,
    budget_enum_logs: Mapping[str, float] | None = None,
    bound_Z: float | None = None,
    bound_R: float | None = None,
) -> BnfStepReport:
    """One normalization step: 51 percent bookkeeping, 49 percent algebra.

    Solves L_omega S = R, pulls D + Z + R back along the time-one flow of
    S via the cancellation identity, and reprojects.  The consumed K, C,
    K_sharp are min(enumerated, closed form), where the enumeration runs
    over budget_pairs (or a freshly built budget) extended by the pairs of
    R and Z themselves, so the bounds are literal for this input.  The
    propagated norm ledger

        |R'| <= (gamma delta)^-1 K |R| (C |R| + |Z|),   |Z'| <= |Z| + same,

    uses the incoming ledger bounds when given, else the recomputed upper
    norms.  Strict mode raises SmallnessViolation when |R| > gamma delta/K.
    """
    case = schedule.case
    if not Z.range_part().is_zero():
        raise ValueError("Z must be kernel-pure (alpha = beta termwise)")
    if not R.kernel_part().is_zero():
        raise ValueError("R must be range-pure (kernel terms have no preimage)")
    if Z.scaling_degree() < 1 or R.scaling_degree() < 1:
        raise ValueError("need scaling degree >= 1 for both Z and R")
    if case == "M" and not (Z.preserves_momentum() and R.preserves_momentum()):
        raise ValueError("case M input must preserve momentum")
    params_in = schedule.params(n)
    delta = schedule.delta(n)
    z_norm_in = upper_norm(Z, params_in)
    r_norm_in = upper_norm(R, params_in)
    b_z_in = bound_Z if bound_Z is not None else z_norm_in
    if r_norm_in == 0.0:
        return BnfStepReport(
            n=n,
            S=MajorantHamiltonian(R.window, {}, R.degree_cap),
            Z=Z,
            R=R,
            delta=delta,
            constants={},
            r_norm_in=0.0,
            z_norm_in=z_norm_in,
            smallness_ok=True,
            log_smallness_threshold=math.inf,
            s_norm_bound=0.0,
            displacement_bound=0.0,
            bound_Z=b_z_in,
            bound_R=0.0,
            degree_in=math.inf,
            degree_out=math.inf,
            flags={"smallness": True, "momentum": True if case == "M" else None},
        )
    cap = R.degree_cap if R.degree_cap is not None else Z.degree_cap
    if cap is None:
        raise ValueError("bnf_step needs a degree cap to keep the Lie series finite")
    params_mid = schedule.mid_params(n)
    params_sharp = schedule.sharp_params(n)
    gamma = ledger.inputs.gamma

    if budget_enum_logs is None:
        if budget_pairs is None:
            window = max(Z.window, R.window)
            bd, bm = enum_budget if enum_budget is not None else (min(cap, 6), min(window, 4))
            budget_pairs = list(
                iter_pairs(bd, bm, momentum_only=(case == "M"), include_kernel=True)
            )
        _, log_k_bud, _ = enumerate_K(params_in, params_mid, omega, budget_pairs, gamma)
        _, log_ks_bud, _ = enumerate_K(params_in, params_sharp, omega, budget_pairs, gamma)
        _, log_c_bud, _ = enumerate_C(params_in, params_mid, budget_pairs)
        budget_enum_logs = {"C": log_c_bud, "K": log_k_bud, "K_sharp": log_ks_bud}

    own_pairs = [(a, b) for a, b, _ in R.terms()]
    _, log_k_own, _ = enumerate_K(params_in, params_mid, omega, own_pairs, gamma)
    _, log_ks_own, _ = enumerate_K(params_in, params_sharp, omega, own_pairs, gamma)
    c_pairs = own_pairs + [(a, b) for a, b, _ in Z.terms()]
    _, log_c_own, _ = enumerate_C(params_in, params_mid, c_pairs)

    closed = _closed_hip0_logs(ledger, case, schedule.steps, schedule.eta)
    constants = {
        "C": _pick("C", max(budget_enum_logs["C"], log_c_own), closed["C"], floor_at_one=True),
        "K": _pick("K", max(budget_enum_logs["K"], log_k_own), closed["K"]),
        "K_sharp": _pick("K_sharp", max(budget_enum_logs["K_sharp"], log_ks_own), closed["K_sharp"]),
    }

    log_k = constants["K"].log_value
    threshold = math.log(gamma) + math.log(delta) - log_k
    smallness_ok = math.log(r_norm_in) <= threshold
    if strict and not smallness_ok:
        raise SmallnessViolation(
            f"step {n}: |R| = {r_norm_in:.6e} exceeds gamma*delta/K: "
            f"log|R| = {math.log(r_norm_in):.3f} > log(gamma) + log(delta_n) - log(K) "
            f"= {threshold:.3f} with gamma = {gamma:g}, delta_{n} = {delta:.6e}, "
            f"K from {constants['K'].source} (log K = {log_k:.3f})"
        )

    S = _solve_generator(R, omega)
    tr_r = ad_series(S, R, lambda k: (-1.0) ** k * k / math.factorial(k + 1), cap)
    new = tr_r.hamiltonian
    dropped = dict(tr_r.dropped_by_degree)
    if not Z.is_zero():
        tr_z = ad_series(S, Z, lambda k: (-1.0) ** k / math.factorial(k), cap)
        new = new + tr_z.hamiltonian
        for d, m in tr_z.dropped_by_degree.items():
            dropped[d] = dropped.get(d, 0.0) + m
    Z_new = (Z + new.kernel_part()).with_cap(cap)
    R_new = new.range_part().with_cap(cap)

    d_in = R.scaling_degree()
    d_out = R_new.scaling_degree()
    if d_out < d_in + 1:
        raise RuntimeError(
            f"degree ratchet broken at step {n}: d(R') = {d_out} < d(R) + 1 = {d_in + 1}"
        )
    if case == "M" and not (
        Z_new.preserves_momentum() and R_new.preserves_momentum() and S.preserves_momentum()
    ):
        raise RuntimeError(f"momentum conservation broken at step {n}")

    b_r_in = bound_R if bound_R is not None else r_norm_in
    k_val = math.exp(log_k) if log_k < _MAX_LOG else math.inf
    c_log = constants["C"].log_value
    c_val = math.exp(c_log) if c_log < _MAX_LOG else math.inf
    increment = k_val * b_r_in * (c_val * b_r_in + b_z_in) / (gamma * delta)
    ks_log = constants["K_sharp"].log_value
    ks_val = math.exp(ks_log) if ks_log < _MAX_LOG else math.inf

    return BnfStepReport(
        n=n,
        S=S,
        Z=Z_new,
        R=R_new,
        delta=delta,
        constants=constants,
        r_norm_in=r_norm_in,
        z_norm_in=z_norm_in,
        smallness_ok=smallness_ok,
        log_smallness_threshold=threshold,
        s_norm_bound=k_val * r_norm_in / gamma,
        displacement_bound=schedule.radius(n) * ks_val * r_norm_in / gamma,
        bound_Z=b_z_in + increment,
        bound_R=increment,
        degree_in=d_in,
        degree_out=d_out,
        dropped_by_degree=dropped,
        flags={
            "smallness": smallness_ok,
            "momentum": (
                Z_new.preserves_momentum() and R_new.preserves_momentum()
                if case == "M"
                else None
            ),
        },
    )


# -- the N-step run -------------------------------------------------------------


@dataclass
class BnfResult:
    """Everything an N-step normalization produced, plus its paper trail."""

    case: str
    schedule: BnfSchedule
    Z: MajorantHamiltonian
    R: MajorantHamiltonian
    generators: list[MajorantHamiltonian]
    step_reports: list[BnfStepReport]
    g_norm: float
    r_bar: float
    eps: float
    log_r_star: float
    log_r_hat: float
    hip0: dict[str, UsedConstant]
    log_c1: float
    log_c2: float
    log_c3: float
    bound_Z: float
    bound_R: float
    theory_log_z: list[float]
    theory_log_r: list[float]
    dropped_by_degree: dict[int, float]
    flags: dict
    ledger: ConstantsLedger

    @property
    def r(self) -> float:
        return self.schedule.r

    @property
    def r_star(self) -> float:
        return math.exp(self.log_r_star)

    @property
    def r_hat(self) -> float:
        return math.exp(self.log_r_hat) if self.log_r_hat < _MAX_LOG else math.inf

    @property
    def displacement_total(self) -> float:
        return sum(rep.displacement_bound for rep in self.step_reports)

    def transform(self, u: FourierState, **flow_kwargs) -> FourierState:
        """Psi(u): the composed time-one flows, last generator acting first."""
        return compose_flows(self.generators, u, **flow_kwargs)

    def truncation_tail(self, amplitude: float) -> float:
        """l1 mass dropped by the degree cap, each monomial at |u_j| = amplitude."""
        return sum(m * amplitude**d for d, m in self.dropped_by_degree.items())

    def manifest(self) -> dict:
        """Deterministic structured summary; the golden artifact for regressions."""
        theory = self.ledger.case_constants(self.case, self.schedule.steps)
        return {
            "case": self.case,
            "steps": self.schedule.steps,
            "r": self.schedule.r,
            "r_bar": self.r_bar,
            "eta": self.schedule.eta,
            "gamma": self.ledger.inputs.gamma,
            "g_norm": self.g_norm,
            "eps": self.eps,
            "log_r_star": self.log_r_star,
            "log_r_hat": self.log_r_hat,
            "log_r_hat_theory": theory["r_hat"].log_value,
            "hip0": {k: v.to_json_dict() for k, v in self.hip0.items()},
            "achieved": {"log_C1": self.log_c1, "log_C2": self.log_c2, "log_C3": self.log_c3},
            "theory": {k: e.to_json_dict() for k, e in theory.items()},
            "flags": dict(self.flags),
            "bound_Z": self.bound_Z,
            "bound_R": self.bound_R,
            "displacement_total": self.displacement_total,
            "dropped_by_degree": {str(d): m for d, m in sorted(self.dropped_by_degree.items())},
            "per_step": [
                {
                    "n": rep.n,
                    "delta": rep.delta,
                    "r_norm_in": rep.r_norm_in,
                    "z_norm_in": rep.z_norm_in,
                    "smallness_ok": rep.smallness_ok,
                    "constants": {k: v.to_json_dict() for k, v in rep.constants.items()},
                    "bound_Z": rep.bound_Z,
                    "bound_R": rep.bound_R,
                    "s_norm_bound": rep.s_norm_bound,
                    "displacement_bound": rep.displacement_bound,
                    "theory_log_z": self.theory_log_z[rep.n],
                    "theory_log_r": self.theory_log_r[rep.n],
                }
                for rep in self.step_reports
            ],
            "inputs": {
                "gamma": self.ledger.inputs.gamma,
                "q": self.ledger.inputs.q,
                "a_strip": self.ledger.inputs.a_strip,
                "radius": self.ledger.inputs.radius,
                "f_norm": self.ledger.inputs.f_norm,
                "p": self.ledger.inputs.p,
                "s": self.ledger.inputs.s,
                "a_lower": self.ledger.inputs.a_lower,
                "theta": self.ledger.inputs.theta,
            },
        }


@dataclass(frozen=True)
class RadiusReport:
    """Admissibility radius of a run, computed without taking any steps.

    The enumerated transfer constants see the run radius only through rung
    ratios, which cancel it, so a report computed at a probe radius applies
    verbatim to any run radius under the same geometry.  bnf_normalize
    accepts one to skip re-enumerating the budget; the geometry is checked
    on reuse, the Hamiltonian is trusted to be the same.
    """

    case: str
    steps: int
    r_bar: float
    eta: float
    profile: WeightProfile
    tau: float
    budget: tuple[int, int]
    budget_covers: bool
    g_norm: float
    rung_logs: tuple[Mapping[str, float], ...]
    hip0: Mapping[str, UsedConstant]
    log_r_star: float
    log_r_hat: float

    @property
    def r_star(self) -> float:
        return math.exp(self.log_r_star) if self.log_r_star < _MAX_LOG else math.inf

    @property
    def r_hat(self) -> float:
        return math.exp(self.log_r_hat) if self.log_r_hat < _MAX_LOG else math.inf


def _validate_run_input(G: MajorantHamiltonian, case: str, r_bar: float) -> None:
    if G.degree_cap is None:
        raise ValueError("bnf_normalize needs a degree-capped Hamiltonian")
    if any(a.total != b.total for a, b, _ in G.terms()):
        raise ValueError("G must conserve mass (|alpha| = |beta| termwise)")
    d0 = G.scaling_degree()
    if d0 < 1:
        raise ValueError(f"scaling degree of G is {d0}; need >= 1")
    if case == "M" and not G.preserves_momentum():
        raise ValueError("case M needs a momentum-preserving G")


def admissible_radius(
    G: MajorantHamiltonian,
    omega,
    case: str,
    n_steps: int,
    ledger: ConstantsLedger,
    *,
    r_bar: float | None = None,
    eta: float | None = None,
    profile: WeightProfile | None = None,
    tau: float | None = None,
    enum_budget: tuple[int, int] | None = None,
) -> RadiusReport:
    """Compute r_hat = min(r_star / sqrt(N max(C K, K#)), r_bar / 2) for a run.

    This is the upfront block of bnf_normalize on its own: the run norm of G
    at the base radius, the budget enumeration of the transfer constants per
    rung, the min-rule against the closed forms, and the two radius
    thresholds.  Use it to pick a run radius before paying for the steps.
    """
    geo = case_geometry(ledger, case)
    r_bar = geo.r_bar if r_bar is None else r_bar
    eta = geo.eta if eta is None else eta
    profile = geo.profile if profile is None else profile
    tau = geo.tau if tau is None else tau
    _validate_run_input(G, case, r_bar)
    # Probe radius: any value with 2r <= r_bar works, the ratios cancel it.
    schedule = BnfSchedule(case, n_steps, r_bar / 4.0, eta, profile, tau)

    cap = G.degree_cap
    if enum_budget is None:
        enum_budget = (min(cap, 8), min(G.window, 6))
    bd, bm = enum_budget
    budget_covers = bd >= cap and bm >= G.window

    gamma = ledger.inputs.gamma
    g_norm = upper_norm(G, NormParams(r_bar, schedule.eta, schedule.rung(0)))
    if g_norm == 0.0:
        return RadiusReport(
            case, n_steps, r_bar, eta, profile, tau, enum_budget, budget_covers,
            0.0, (), {}, math.inf, math.inf,
        )

    budget_pairs = list(iter_pairs(bd, bm, momentum_only=(case == "M"), include_kernel=True))
    closed = _closed_hip0_logs(ledger, case, n_steps, schedule.eta)
    rung_logs: list[dict[str, float]] = []
    running = {"C": -math.inf, "K": -math.inf, "K_sharp": -math.inf}
    for n in range(n_steps):
        p_in, p_mid, p_sharp = schedule.params(n), schedule.mid_params(n), schedule.sharp_params(n)
        _, lk, _ = enumerate_K(p_in, p_mid, omega, budget_pairs, gamma)
        _, lks, _ = enumerate_K(p_in, p_sharp, omega, budget_pairs, gamma)
        _, lc, _ = enumerate_C(p_in, p_mid, budget_pairs)
        rung_logs.append({"C": lc, "K": lk, "K_sharp": lks})
        for key, val in (("C", lc), ("K", lk), ("K_sharp", lks)):
            running[key] = max(running[key], val)
    hip0 = {
        "C": _pick("C", running["C"], closed["C"], floor_at_one=True),
        "K": _pick("K", running["K"], closed["K"]),
        "K_sharp": _pick("K_sharp", running["K_sharp"], closed["K_sharp"]),
    }

    log_r_star = math.log(r_bar) + 0.5 * (
        math.log(gamma) - (11.0 * math.log(2.0) + 1.0 + math.log(g_norm))
    )
    log_worst = max(
        hip0["C"].log_value + hip0["K"].log_value, hip0["K_sharp"].log_value
    )
    log_r_hat = min(
        log_r_star - 0.5 * (math.log(n_steps) + log_worst),
        math.log(r_bar / 2.0),
    )
    return RadiusReport(
        case, n_steps, r_bar, eta, profile, tau, enum_budget, budget_covers,
        g_norm, tuple(rung_logs), hip0, log_r_star, log_r_hat,
    )


def bnf_normalize(
    G: MajorantHamiltonian,
    omega,
    case: str,
    n_steps: int,
    r: float,
    ledger: ConstantsLedger,
    *,
    r_bar: float | None = None,
    eta: float | None = None,
    profile: WeightProfile | None = None,
    tau: float | None = None,
    strict: bool = False,
    enum_budget: tuple[int, int] | None = None,
    allow_radius_override: bool = False,
    radius_report: RadiusReport | None = None,
) -> BnfResult:
    """Run the N-step normalization of D_omega + G.

    The schedule geometry defaults to the case instantiation (base radius,
    penalty, anchor profile, ladder increment from the ledger inputs); any
    piece can be overridden for desk-scale systems.  Preconditions: G has a
    degree cap, conserves mass termwise, has scaling degree >= 1, and fits
    under the base radius (2r <= r_bar is needed by the initial rescale).
    The admissibility radius r_hat is computed from the run's own norm and
    its min-rule transfer constants; exceeding it raises unless
    allow_radius_override is set, in which case the flag records it.  Pass
    the radius_report from admissible_radius on the same G and geometry to
    skip recomputing the budget enumeration.
    """
    geo = case_geometry(ledger, case)
    r_bar = geo.r_bar if r_bar is None else r_bar
    eta = geo.eta if eta is None else eta
    profile = geo.profile if profile is None else profile
    tau = geo.tau if tau is None else tau
    schedule = BnfSchedule(case, n_steps, r, eta, profile, tau)

    _validate_run_input(G, case, r_bar)
    if 2.0 * r > r_bar * (1.0 + 1e-12):
        raise ValueError(f"2r = {2 * r:g} exceeds the base radius r_bar = {r_bar:g}")

    if radius_report is None:
        radius_report = admissible_radius(
            G, omega, case, n_steps, ledger,
            r_bar=r_bar, eta=eta, profile=profile, tau=tau, enum_budget=enum_budget,
        )
    else:
        stated = (case, n_steps, r_bar, eta, profile, tau)
        held = (
            radius_report.case, radius_report.steps, radius_report.r_bar,
            radius_report.eta, radius_report.profile, radius_report.tau,
        )
        if stated != held or (enum_budget is not None and enum_budget != radius_report.budget):
            raise ValueError(
                "radius report does not match this run's geometry; recompute it "
                "with admissible_radius on the same case, steps, and overrides"
            )

    gamma = ledger.inputs.gamma
    g_norm = radius_report.g_norm
    if g_norm == 0.0:
        zero = MajorantHamiltonian(G.window, {}, G.degree_cap)
        return BnfResult(
            case, schedule, zero, zero, [], [], 0.0, r_bar, 0.0, math.inf, math.inf,
            {}, -math.inf, -math.inf, -math.inf, 0.0, 0.0,
            [-math.inf] * (n_steps + 1), [-math.inf] * (n_steps + 1), {},
            {"radius": True, "minni": True, "smallness_all": True,
             "degree_ratchet": True, "budget_covers_run": True}, ledger,
        )

    budget_covers = radius_report.budget_covers
    rung_logs = radius_report.rung_logs
    hip0 = dict(radius_report.hip0)
    log_r_star = radius_report.log_r_star
    log_ck = hip0["C"].log_value + hip0["K"].log_value
    log_worst = max(log_ck, hip0["K_sharp"].log_value)
    log_r_hat = radius_report.log_r_hat
    radius_ok = math.log(r) <= log_r_hat + 1e-12
    if not radius_ok and not allow_radius_override:
        raise ValueError(
            f"r = {r:g} exceeds the admissible radius: log r = {math.log(r):.3f} > "
            f"log r_hat = {log_r_hat:.3f} (r_hat = min(r_star/sqrt(N max(CK, K_sharp)), r_bar/2)); "
            f"pass allow_radius_override=True to proceed with the flag recorded"
        )

    eps = (2.0 * r / r_bar) ** 2 * g_norm / gamma
    log_eps = math.log(eps)
    log_dhat_inv = math.log(32.0 * math.e * n_steps)
    log_minni = math.log(8.0) + log_eps + log_worst + log_dhat_inv
    minni_ok = log_minni <= 0.0
    if strict and not minni_ok:
        raise SmallnessViolation(
            f"N-step smallness fails: 8 eps max(C K, K_sharp) / delta_hat has "
            f"log {log_minni:.3f} > 0 (eps = {eps:.6e})"
        )

    # theory ladder: |Z^(n)| <= gamma eps sum_{h<=n} 2^-h, |R^(n)| <= gamma eps^(n+1) (4CK/delta_hat)^n
    log_gamma = math.log(gamma)
    theory_log_z = [
        log_gamma + log_eps + math.log(2.0 * (1.0 - 0.5 ** (n + 1))) for n in range(n_steps + 1)
    ]
    theory_log_r = [
        log_gamma + (n + 1) * log_eps + n * (math.log(4.0) + log_ck + log_dhat_inv)
        for n in range(n_steps + 1)
    ]

    start_bound = radius_rescale_factor(G, r_bar, 2.0 * r) * g_norm
    Z = G.kernel_part()
    R = G.range_part()
    bound_Z = bound_R = start_bound
    generators: list[MajorantHamiltonian] = []
    reports: list[BnfStepReport] = []
    dropped: dict[int, float] = {}
    for n in range(n_steps):
        rep = bnf_step(
            Z, R, omega, schedule, n, ledger,
            strict=strict,
            budget_enum_logs=rung_logs[n],
            bound_Z=bound_Z,
            bound_R=bound_R,
        )
        Z, R = rep.Z, rep.R
        bound_Z, bound_R = rep.bound_Z, rep.bound_R
        generators.append(rep.S)
        reports.append(rep)
        for d, m in rep.dropped_by_degree.items():
            dropped[d] = dropped.get(d, 0.0) + m
        for key in hip0:
            used = rep.constants.get(key)
            if used is not None and used.log_value > hip0[key].log_value:
                hip0[key] = used

    log_r_star2 = 2.0 * log_r_star
    log_c1 = hip0["K_sharp"].log_value - (7.0 * math.log(2.0) + 1.0 + log_r_star2)
    log_c2 = log_gamma - (8.0 * math.log(2.0) + 1.0 + log_r_star2)
    log_c3 = (
        log_gamma
        - (9.0 * math.log(2.0) + 1.0 + log_r_star2)
        + n_steps
        * (hip0["C"].log_value + hip0["K"].log_value + math.log(n_steps)
           - (2.0 * math.log(2.0) + log_r_star2))
    )

    ratchet_ok = R.scaling_degree() >= n_steps + 1
    flags = {
        "radius": radius_ok,
        "minni": minni_ok,
        "smallness_all": all(rep.smallness_ok for rep in reports),
        "degree_ratchet": ratchet_ok,
        "budget_covers_run": budget_covers,
    }
    if case == "M":
        flags["momentum"] = all(rep.flags.get("momentum", True) for rep in reports)
    assert Z.range_part().is_zero(), "kernel purity broken"

    return BnfResult(
        case=case,
        schedule=schedule,
        Z=Z,
        R=R,
        generators=generators,
        step_reports=reports,
        g_norm=g_norm,
        r_bar=r_bar,
        eps=eps,
        log_r_star=log_r_star,
        log_r_hat=log_r_hat,
        hip0=hip0,
        log_c1=log_c1,
        log_c2=log_c2,
        log_c3=log_c3,
        bound_Z=bound_Z,
        bound_R=bound_R,
        theory_log_z=theory_log_z,
        theory_log_r=theory_log_r,
        dropped_by_degree=dropped,
        flags=flags,
        ledger=ledger,
    )


# -- stability times ------------------------------------------------------------


def stability_window(r_norm: float) -> float:
    """Time window 1/(8 |R|) on which the remainder flow is controlled."""
    if r_norm < 0:
        raise ValueError("norm must be nonnegative")
    if r_norm == 0.0:
        return math.inf
    return 1.0 / (8.0 * r_norm)


class OutOfRegimeError(ValueError):
    """delta sits above the admissibility threshold of the requested bound."""


@dataclass(frozen=True)
class StabilityBound:
    case: str
    variant: str
    p: float | None
    log_delta: float
    log_time: float
    formula: str

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)

    @property
    def time(self) -> float | None:
        return math.exp(self.log_time) if self.log_time < _MAX_LOG else None


def _resolve_log_delta(delta: float | None, log_delta: float | None) -> float:
    if (delta is None) == (log_delta is None):
        raise ValueError("pass exactly one of delta and log_delta")
    if delta is not None:
        if delta <= 0:
            raise ValueError("delta must be positive")
        return math.log(delta)
    return log_delta


def _check_regime(ledger: ConstantsLedger, name: str, log_delta: float) -> None:
    bar = ledger.entry(name)
    if log_delta > bar.log_value:
        raise OutOfRegimeError(
            f"delta out of regime: log delta = {log_delta:.3f} > "
            f"log {name} = {bar.log_value:.3f} ({name} = {bar.formula})"
        )


def _integer_steps(p: float, tau: float) -> int:
    m = (p - 1.0) / tau
    k = round(m)
    if k < 1 or abs(m - k) > 1e-9 * max(1.0, abs(m)):
        raise ValueError(f"p must satisfy (p-1)/tau in N, got (p-1)/tau = {m:.6g}")
    return int(k)


def stability_bound(
    case: str,
    ledger: ConstantsLedger,
    delta: float | None = None,
    *,
    log_delta: float | None = None,
    p: float | None = None,
) -> StabilityBound:
    """Theoretical stability time for one case, in log space.

    With p unset, returns the optimized bound and its optimal exponent
    p(delta) (cases S and M; case G has no free exponent).  With p given,
    evaluates the fixed-exponent bound of cases S and M, requiring
    (p-1)/tau to be a positive integer and delta inside the corresponding
    admissibility window; violations raise OutOfRegimeError quoting the
    bound.  Accepts log_delta directly because realistic thresholds
    underflow float64.
    """
    ld = _resolve_log_delta(delta, log_delta)
    inp = ledger.inputs
    if case == "S":
        tau = ledger.value("tau")
        log_ds, log_ts = ledger.log("delta_S"), ledger.log("T_S")
        if p is None:
            _check_regime(ledger, "delta_bar_S", ld)
            big_l = log_ds - ld
            bracket = math.floor(big_l / (6.0 * tau * math.log(big_l))) if big_l > 1.0 else 0
            if bracket < 1:
                raise ValueError(
                    "optimal exponent does not exceed 1 at this delta: the integer "
                    "bracket in p(delta) is 0; use a smaller delta or a fixed p"
                )
            log_t = log_ts - 2.0 * ld + big_l * big_l / (4.0 * tau * math.log(big_l))
            return StabilityBound(
                "S", "optimized", 1.0 + tau * bracket, ld, log_t,
                "(T_S/delta^2) exp(ln^2(delta_S/delta) / (4 tau ln ln(delta_S/delta)))",
            )
        _integer_steps(p, tau)
        k_s, log_kap = ledger.value("k_S"), ledger.log("K_S")
        lim = min(log_ds - 3.0 * p * math.log(k_s * p),
                  0.5 * math.log(inp.radius) - math.log(20.0))
        if ld > lim:
            raise OutOfRegimeError(
                f"delta out of regime for fixed p = {p:g}: log delta = {ld:.3f} > "
                f"{lim:.3f} = log min(delta_S (k_S p)^(-3p), sqrt(R)/20)"
            )
        log_t = (log_ts - 2.0 * ld - 5.0 * p * (log_kap + math.log(p))
                 + 2.0 * (p - 1.0) / tau * (log_ds - ld))
        return StabilityBound(
            "S", "fixed-p", p, ld, log_t,
            "(T_S/delta^2) (K_S p)^(-5p) (delta_S/delta)^(2(p-1)/tau)",
        )
    if case == "M":
        tau1 = ledger.value("tau1")
        log_dm, log_tm = ledger.log("delta_M"), ledger.log("T_M")
        if p is None:
            _check_regime(ledger, "delta_bar_M", ld)
            log_x = 2.0 * (log_dm - ld)
            x = math.exp(log_x) if log_x < _MAX_LOG else math.inf
            p_opt = 1.0 + tau1 * math.floor(x) if math.isfinite(x) else math.inf
            log_t = log_tm - 2.0 * ld + x
            return StabilityBound(
                "M", "optimized", p_opt, ld, log_t,
                "(T_M/delta^2) exp((delta_M/delta)^2)",
            )
        _integer_steps(p, tau1)
        lim = min(math.log(2.0) + 0.5 * math.log(tau1) + log_dm - 0.5 * math.log(p),
                  0.5 * math.log(inp.radius) - math.log(4.0) - 0.5 * math.log(10.0))
        if ld > lim:
            raise OutOfRegimeError(
                f"delta out of regime for fixed p = {p:g}: log delta = {ld:.3f} > "
                f"{lim:.3f} = log min(2 sqrt(tau1) delta_M / sqrt(p), sqrt(R)/(4 sqrt(10)))"
            )
        log_t = log_tm - 2.0 * ld + (p - 1.0) / tau1 * (
            math.log(4.0 * tau1) + 2.0 * log_dm - math.log(p - 1.0) - 2.0 * ld
        )
        return StabilityBound(
            "M", "fixed-p", p, ld, log_t,
            "(T_M/delta^2) (4 tau1 delta_M^2 / ((p-1) delta^2))^((p-1)/tau1)",
        )
    if case == "G":
        if p is not None:
            raise ValueError("case G has no free Sobolev exponent; leave p unset")
        _check_regime(ledger, "delta_bar_G", ld)
        big_l = ledger.log("delta_G") - ld
        log_t = ledger.log("T_G") - 2.0 * ld + big_l ** (1.0 + inp.theta / 4.0)
        return StabilityBound(
            "G", "optimized", None, ld, log_t,
            "(T_G/delta^2) exp((ln(delta_G/delta))^(1+theta/4))",
        )
    raise ValueError(f"unknown case {case!r}")
