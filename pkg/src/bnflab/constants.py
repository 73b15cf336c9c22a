"""Closed-form constants for the normalization engine and stability bounds.

Every constant is computed in log space first: several of them (threshold
radii, Gevrey loss factors, N-step remainder prefactors) overflow or
underflow float64 by hundreds of orders of magnitude at perfectly ordinary
inputs.  A ConstantEntry therefore always carries log_value, and value is
None whenever exp(log_value) is not representable.  The formula string spells
out the defining expression so a manifest is self-describing.

Auxiliary families (with the conventions 0 < theta < 1, p > 1/2, q >= 0):

    C_mon(t, sigma, p) = 2^(p+1) p^p max{(2t)^p, sigma^-p, 1}
    C_alg(p)           = 2^p (sum_i <i>^(-2p))^(1/2)
    C_algM(p)          = sqrt(4 + 2(2p+1)/(2p-1))
    C_Nem(p, s, t)     = C_alg(p) (e^s + sup_{x>=1} x^p e^(-tx + s x^theta))
    C_*                = 13/(1-theta)
    script_C1          = 28 theta^-1 (q+3) (8(q+3) C_* / theta)^(2/theta)
                         (ln(8(q+3) C_* / theta))^(2/theta + 1)
    script_C2(t,s,z)   = e^(27(2+q)) C_mon(t, s, 3z)
    tau0 = 15/2, tau = tau0 (2+q), tau1 = 2 (tau0 + 3/(2 ln 2)) (2+q)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Mapping

from scipy.optimize import brentq

from .spaces import WeightProfile, algebra_constant

__all__ = [
    "LedgerInputError",
    "LedgerInputs",
    "ConstantEntry",
    "ConstantsLedger",
    "ledger_eval",
    "TAU0",
    "log_c_mon",
    "c_alg",
    "c_alg_m",
    "c_nem",
    "nemitskii_sup",
]

TAU0 = 15.0 / 2.0

_MAX_LOG = math.log(float.fromhex("0x1.fffffffffffffp+1023"))
_MIN_LOG = math.log(5e-324)


class LedgerInputError(ValueError):
    """An inadmissible ledger input, named."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class LedgerInputs:
    """The scalar data every constant is built from."""

    gamma: float = 0.1
    q: float = 0.0
    a_strip: float = 1.0  # analyticity strip of f in x
    radius: float = 1.0  # R, the radius of the nonlinearity bound
    f_norm: float = 1.0  # |f|_{a,R} (and |f|_R when f is x-independent)
    p: float = 1.0
    s: float = 0.5  # sub-exponential Gevrey rate
    a_lower: float = 0.0  # exponential weight rate a < a_strip
    theta: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise LedgerInputError("gamma", f"must lie in (0, 1], got {self.gamma}")
        if self.q < 0:
            raise LedgerInputError("q", "must be nonnegative")
        if self.a_strip <= 0:
            raise LedgerInputError("a_strip", "must be positive")
        if self.radius <= 0:
            raise LedgerInputError("radius", "must be positive")
        if self.f_norm <= 0:
            raise LedgerInputError("f_norm", "must be positive")
        if self.p <= 0.5:
            raise LedgerInputError("p", "must exceed 1/2")
        if self.s <= 0:
            raise LedgerInputError("s", "must be positive (Gevrey rate)")
        if not (0.0 <= self.a_lower < self.a_strip):
            raise LedgerInputError("a_lower", "must satisfy 0 <= a_lower < a_strip")
        if not (0.0 < self.theta < 1.0):
            raise LedgerInputError("theta", "must lie in (0, 1)")


@dataclass(frozen=True)
class ConstantEntry:
    name: str
    value: float | None
    log_value: float
    formula: str

    def to_json_dict(self) -> dict:
        return {"value": self.value, "log_value": self.log_value, "formula": self.formula}


def _entry(name: str, log_value: float, formula: str) -> ConstantEntry:
    if _MIN_LOG < log_value < _MAX_LOG:
        value = math.exp(log_value)
    else:
        value = None
    return ConstantEntry(name, value, log_value, formula)


def _entry_lin(name: str, value: float, formula: str) -> ConstantEntry:
    return ConstantEntry(name, value, math.log(value), formula)


# -- auxiliary families --------------------------------------------------------


def log_c_mon(t: float, sigma: float, p: float) -> float:
    """ln C_mon(t, sigma, p) = (p+1) ln 2 + p ln p + max{p ln 2t, -p ln sigma, 0}."""
    if t <= 0 or sigma <= 0 or p <= 0:
        raise ValueError("C_mon needs positive t, sigma, p")
    return (p + 1.0) * math.log(2.0) + p * math.log(p) + max(p * math.log(2.0 * t), -p * math.log(sigma), 0.0)


def c_alg(p: float) -> float:
    return algebra_constant(WeightProfile.sobolev(p))


def c_alg_m(p: float) -> float:
    if p <= 0.5:
        raise ValueError("C_algM needs p > 1/2")
    return math.sqrt(4.0 + 2.0 * (2.0 * p + 1.0) / (2.0 * p - 1.0))


def nemitskii_sup(p: float, s: float, t: float, theta: float) -> float:
    """sup_{x >= 1} x^p exp(-t x + s x^theta).

    The log-derivative p/x - t + s theta x^(theta-1) is strictly decreasing on
    [1, inf), so the supremum sits either at x = 1 or at its unique root.
    """
    if t <= 0:
        raise ValueError("need t > 0 for a finite Nemitskii supremum")
    if s < 0 or p <= 0:
        raise ValueError("need s >= 0 and p > 0")

    def slope(x: float) -> float:
        return p / x - t + s * theta * x ** (theta - 1.0)

    def logval(x: float) -> float:
        return p * math.log(x) - t * x + s * x**theta

    if slope(1.0) <= 0.0:
        return math.exp(logval(1.0))
    hi = max(2.0, 4.0 * (p + s) / t)
    for _ in range(200):
        if slope(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise RuntimeError("Nemitskii supremum bracket search failed")
    x_star = brentq(slope, 1.0, hi, xtol=1e-14, rtol=8.9e-16)
    return math.exp(logval(x_star))


def c_nem(p: float, s: float, t: float, theta: float) -> float:
    return c_alg(p) * (math.exp(s) + nemitskii_sup(p, s, t, theta))


# -- the ledger ----------------------------------------------------------------


class ConstantsLedger:
    """All named constants evaluated at one set of inputs.

    Scalar entries are stored once; the N-dependent case constants are
    produced on demand by case_constants().  Parametric families (C_mon,
    script_C2, the homological-equation bounds) are exposed as methods since
    their arguments vary per use.
    """

    def __init__(self, inputs: LedgerInputs):
        self.inputs = inputs
        self._entries: dict[str, ConstantEntry] = {}
        self._build()

    # parametric families ------------------------------------------------

    def c_mon(self, t: float, sigma: float, p: float) -> ConstantEntry:
        return _entry(
            "C_mon",
            log_c_mon(t, sigma, p),
            f"2^(p+1) p^p max((2t)^p, sigma^-p, 1) at t={t:g}, sigma={sigma:g}, p={p:g}",
        )

    def script_c2(self, t: float, sigma: float, zeta: float) -> ConstantEntry:
        q = self.inputs.q
        log = 27.0 * (2.0 + q) + log_c_mon(t, sigma, 3.0 * zeta)
        return _entry(
            "script_C2",
            log,
            f"e^(27(2+q)) C_mon(t, sigma, 3 zeta) at t={t:g}, sigma={sigma:g}, zeta={zeta:g}",
        )

    def homological_bound(self, case: str, t: float | None = None, sigma: float | None = None) -> ConstantEntry:
        """Closed-form bound on the homological constant K for one case.

        G: exp(script_C1 sigma^(-3/theta)); S: script_C2(t, sigma, tau);
        M: 6^tau1 (4^6 e^27)^(2+q), no geometry arguments.
        """
        q = self.inputs.q
        if case == "G":
            if sigma is None:
                raise ValueError("case G bound needs sigma")
            log = self.value("script_C1") * sigma ** (-3.0 / self.inputs.theta)
            return _entry("K_bound_G", log, f"exp(script_C1 sigma^(-3/theta)) at sigma={sigma:g}")
        if case == "S":
            if t is None or sigma is None:
                raise ValueError("case S bound needs t and sigma")
            e = self.script_c2(t, sigma, self.value("tau"))
            return ConstantEntry("K_bound_S", e.value, e.log_value, e.formula)
        if case == "M":
            log = self.value("tau1") * math.log(6.0) + (2.0 + q) * (6.0 * math.log(4.0) + 27.0)
            return _entry("K_bound_M", log, "6^tau1 (4^6 e^27)^(2+q)")
        raise ValueError(f"unknown case {case!r}")

    # scalar entries -------------------------------------------------------

    def _build(self) -> None:
        inp = self.inputs
        theta, q, p, s = inp.theta, inp.q, inp.p, inp.s
        gamma, R, f, astrip, alow = inp.gamma, inp.radius, inp.f_norm, inp.a_strip, inp.a_lower
        ln = math.log

        def put(e: ConstantEntry) -> ConstantEntry:
            self._entries[e.name] = e
            return e

        c_star = put(_entry_lin("C_star", 13.0 / (1.0 - theta), "13/(1-theta)"))
        put(_entry_lin("tau0", TAU0, "15/2"))
        tau = put(_entry_lin("tau", TAU0 * (2.0 + q), "tau0 (2+q)"))
        tau1 = put(_entry_lin("tau1", 2.0 * (TAU0 + 3.0 / (2.0 * ln(2.0))) * (2.0 + q), "2 (tau0 + 3/(2 ln 2)) (2+q)"))
        put(ConstantEntry("tau_S", tau.value, tau.log_value, "tau"))
        put(ConstantEntry("tau_M", tau1.value, tau1.log_value, "tau1"))

        put(_entry_lin("C_alg", c_alg(p), f"2^p (sum <i>^(-2p))^(1/2) at p={p:g}"))
        put(_entry_lin("C_algM", c_alg_m(p), f"sqrt(4 + 2(2p+1)/(2p-1)) at p={p:g}"))

        base = 8.0 * (q + 3.0) * c_star.value / theta
        script_c1 = 28.0 / theta * (q + 3.0) * base ** (2.0 / theta) * ln(base) ** (2.0 / theta + 1.0)
        put(_entry_lin("script_C1", script_c1, "28 theta^-1 (q+3) (8(q+3) C_*/theta)^(2/theta) ln(...)^(2/theta+1)"))

        # case S -----------------------------------------------------------
        cnem_s = put(_entry_lin("C_Nem_S", c_nem(1.0, 0.0, astrip / 2.0, theta), "C_Nem(1, 0, a_strip/2)"))
        log_ds = 0.5 * (ln(gamma) + ln(R)) - 0.5 * (17.0 * ln(2.0) + ln(cnem_s.value) + ln(f))
        put(_entry("d_S", log_ds, "sqrt(gamma R) / sqrt(2^17 C_Nem(1,0,a_strip/2) |f|)"))
        kmax = max(2.0, astrip ** (-0.5))
        log_delta_s = (
            0.5 * (ln(gamma) + ln(R))
            + 3.0 * (0.5 * ln(3.0) + ln(kmax))
            - 7.0 * ln(2.0)
            - ln(tau.value)
            - 27.0 * (2.0 + q) / 2.0
            - 0.5 * (ln(cnem_s.value) + ln(f))
        )
        delta_s = put(
            _entry(
                "delta_S",
                log_delta_s,
                "sqrt(gamma R) (sqrt(3) max(2, a_strip^-1/2))^3 / (2^7 tau e^(27(2+q)/2) sqrt(C_Nem(1,0,a_strip/2) |f|))",
            )
        )
        k_s = put(_entry_lin("k_S", math.sqrt(12.0 / tau.value) * kmax, "sqrt(12/tau) max(2, a_strip^-1/2)"))
        log_t_s = 1.0 + ln(R) + 4.0 * ln(tau.value) + (8.0 + 6.0 / tau.value) * ln(k_s.value) - (ln(3.0) + 16.0 * ln(2.0) + ln(cnem_s.value) + ln(f))
        put(_entry("T_S", log_t_s, "e R tau^4 k_S^(8+6/tau) / (3 2^16 C_Nem(1,0,a_strip/2) |f|)"))
        log_kap_s = (4.0 * tau.value * ln(tau.value) + (8.0 * tau.value + 6.0) * ln(k_s.value) - ln(2.0) - tau.value * ln(3.0)) / (5.0 * tau.value)
        kappa_s = put(_entry("K_S", log_kap_s, "(tau^(4 tau) k_S^(8 tau + 6) / (2 3^tau))^(1/(5 tau))"))

        guard = max(k_s.value, 50.0 * tau.value * (kappa_s.log_value - ln(3.0)), 88.0 * tau.value**2)
        log_dbar_s = min(delta_s.log_value - guard, 0.5 * ln(R) - ln(10.0))
        put(
            _entry(
                "delta_bar_S",
                log_dbar_s,
                "min(delta_S exp(-max(k_S, 50 tau ln(K_S/3), 88 tau^2)), sqrt(R)/10)",
            )
        )

        # case M -----------------------------------------------------------
        log_dm = 0.5 * (ln(gamma) + ln(R)) - 0.5 * (
            ln(5.0) + 17.0 * ln(2.0) + 1.0 + tau1.value * ln(6.0) + (2.0 + q) * (6.0 * ln(4.0) + 27.0) + ln(f)
        )
        delta_m = put(_entry("delta_M", log_dm, "sqrt(gamma R) / sqrt(5 2^17 e 6^tau1 (4^6 e^27)^(2+q) |f|)"))
        put(_entry("T_M", ln(R) - (ln(5.0) + 9.0 * ln(2.0) + ln(f)), "R / (5 2^9 |f|)"))
        put(
            _entry(
                "delta_bar_M",
                min(delta_m.log_value, 0.5 * ln(R) - ln(4.0) - 0.5 * ln(10.0)),
                "min(delta_M, sqrt(R)/(4 sqrt(10)))",
            )
        )

        # case G -----------------------------------------------------------
        eta_g = put(_entry_lin("eta_G", min((astrip - alow) / 2.0, s), "min((a_strip - a_lower)/2, s)"))
        cnem_g = put(
            _entry_lin(
                "C_Nem_G",
                c_nem(p, s - eta_g.value, astrip - alow - eta_g.value, theta),
                "C_Nem(p, s - eta_G, a_strip - a_lower - eta_G)",
            )
        )
        ca = self.value("C_alg")
        log_dg = 0.5 * (ln(gamma) + ln(R)) - ln(ca) - 0.5 * (11.0 * ln(2.0) + 1.0 + ln(cnem_g.value) + ln(f))
        delta_g = put(
            _entry("delta_G", log_dg, "sqrt(gamma R) / (C_alg sqrt(2^11 e C_Nem(p, s-eta_G, a_strip-a_lower-eta_G) |f|))")
        )
        inner = max(
            16.0 * (4.0 * script_c1) ** theta / eta_g.value**3,
            2.0 ** ((2.0 * theta + 4.0) / (4.0 - theta)),
        )
        c_g = put(_entry("c_G", -(inner ** (4.0 / theta)), "exp(-(max(16 (4 script_C1)^theta / eta_G^3, 2^((2 theta+4)/(4-theta))))^(4/theta))"))
        put(_entry("T_G", 4.0 * ln(2.0) + 1.0 + 2.0 * delta_g.log_value - ln(gamma), "2^4 e delta_G^2 / gamma"))
        put(
            _entry(
                "delta_bar_G",
                min(c_g.log_value + delta_g.log_value, 0.5 * ln(R) - ln(4.0) - ln(ca)),
                "min(c_G delta_G, sqrt(R)/(4 C_alg))",
            )
        )

    # case constants -------------------------------------------------------

    def case_constants(self, case: str, n_steps: int) -> dict[str, ConstantEntry]:
        """r_hat, C1, C2, C3 of the N-step normal form theorem for one case."""
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        inp = self.inputs
        ln = math.log
        N = float(n_steps)
        if case == "S":
            log_c2hat = self.script_c2(4.0 * N, inp.a_strip / (2.0 * N), N * self.value("tau")).log_value
            log_ds = self.log("d_S")
            log_r = min(log_ds - 0.5 * (ln(N) + log_c2hat), 0.5 * ln(inp.radius) - ln(5.0))
            r_hat = _entry("r_hat", log_r, "min(d_S / sqrt(N script_C2(4N, a_strip/2N, N tau)), sqrt(R)/5)")
            c1 = _entry("C1", log_c2hat - (7.0 * ln(2.0) + 1.0 + 2.0 * log_ds), "script_C2(4N, a_strip/2N, N tau) / (2^7 e d_S^2)")
            c2 = _entry("C2", ln(inp.gamma) - (8.0 * ln(2.0) + 1.0 + 2.0 * log_ds), "gamma / (2^8 e d_S^2)")
            log_inner = (
                ln(N)
                + log_c_mon(4.0 * N, inp.a_strip / (2.0 * N), self.value("tau"))
                + self.script_c2(4.0 * N, inp.a_strip / (2.0 * N), self.value("tau")).log_value
                - (2.0 * ln(2.0) + 2.0 * log_ds)
            )
            log_c3 = 8.0 * ln(2.0) + ln(self.value("C_Nem_S")) + ln(inp.f_norm) - 1.0 - ln(inp.radius) + N * log_inner
            c3 = _entry(
                "C3",
                log_c3,
                "(2^8 C_Nem(1,0,a_strip/2) |f| / (e R)) (N C_mon(4N, a_strip/2N, tau) script_C2(4N, a_strip/2N, tau) / (4 d_S^2))^N",
            )
        elif case == "M":
            log_dm = self.log("delta_M")
            log_r = min(2.0 * ln(2.0) + log_dm - 0.5 * ln(N), 0.5 * (ln(inp.radius) - ln(40.0)))
            r_hat = _entry("r_hat", log_r, "min(4 delta_M / sqrt(N), sqrt(R/40))")
            c1 = _entry("C1", -(9.0 * ln(2.0) + 1.0 + log_dm), "1 / (2^9 e delta_M)")
            c2 = _entry("C2", ln(5.0) + 5.0 * ln(2.0) + ln(inp.f_norm) - ln(inp.radius), "5 2^5 |f| / R")
            log_c3 = ln(80.0) + ln(inp.f_norm) - ln(inp.radius) + N * (ln(N) - (4.0 * ln(2.0) + 2.0 * log_dm))
            c3 = _entry("C3", log_c3, "80 (|f|/R) (N / (16 delta_M^2))^N")
        elif case == "G":
            log_gain = self.value("script_C1") * (N / self.value("eta_G")) ** (3.0 / inp.theta)
            log_dg = self.log("delta_G")
            log_r = min(log_dg - 0.5 * ln(N) - 0.5 * log_gain, 0.5 * ln(inp.radius) - ln(2.0) - ln(self.value("C_alg")))
            r_hat = _entry("r_hat", log_r, "min(delta_G / (sqrt(N) e^(script_C1 (N/eta_G)^(3/theta) / 2)), sqrt(R)/(2 C_alg))")
            c1 = _entry("C1", log_gain - (7.0 * ln(2.0) + 1.0 + 2.0 * log_dg), "e^(script_C1 (N/eta_G)^(3/theta)) / (2^7 e delta_G^2)")
            c2 = _entry("C2", ln(inp.gamma) - (8.0 * ln(2.0) + 1.0 + 2.0 * log_dg), "gamma / (2^8 e delta_G^2)")
            log_c3 = (
                ln(inp.gamma)
                - (9.0 * ln(2.0) + 1.0 + 2.0 * log_dg)
                + N * (ln(N) + log_gain - (2.0 * ln(2.0) + 2.0 * log_dg))
            )
            c3 = _entry("C3", log_c3, "(gamma/(2^9 e delta_G^2)) (N e^(script_C1 (N/eta_G)^(3/theta)) / (4 delta_G^2))^N")
        else:
            raise ValueError(f"unknown case {case!r}")
        return {"r_hat": r_hat, "C1": c1, "C2": c2, "C3": c3}

    # access and serialization ----------------------------------------------

    def entry(self, name: str) -> ConstantEntry:
        return self._entries[name]

    def value(self, name: str) -> float:
        v = self._entries[name].value
        if v is None:
            raise OverflowError(f"constant {name} is not representable as a float; use log({name!r})")
        return v

    def log(self, name: str) -> float:
        return self._entries[name].log_value

    def names(self) -> list[str]:
        return list(self._entries)

    def manifest(self, n_list: tuple[int, ...] = (1, 2, 3)) -> dict:
        cases = {
            case: {str(n): {k: e.to_json_dict() for k, e in self.case_constants(case, n).items()} for n in n_list}
            for case in ("S", "M", "G")
        }
        return {
            "inputs": asdict(self.inputs),
            "constants": {name: e.to_json_dict() for name, e in self._entries.items()},
            "cases": cases,
        }

    def manifest_json(self, n_list: tuple[int, ...] = (1, 2, 3)) -> str:
        return json.dumps(self.manifest(n_list), indent=2, sort_keys=True)


def ledger_eval(inputs: LedgerInputs | Mapping | None = None, **kwargs) -> ConstantsLedger:
    """Build the ledger from inputs given as a dataclass, mapping, or keywords."""
    if inputs is None:
        inputs = LedgerInputs(**kwargs)
    elif isinstance(inputs, Mapping):
        inputs = LedgerInputs(**{**dict(inputs), **kwargs})
    elif kwargs:
        raise TypeError("pass either a LedgerInputs or keyword fields, not both")
    return ConstantsLedger(inputs)
