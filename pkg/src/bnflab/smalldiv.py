"""Rearrangement combinatorics and the homological equation.

For a monomial pair (alpha, beta) the rearrangement n_hat is the
nonincreasing multiset of brackets <i> counted with multiplicity
alpha_i + beta_i.  Everything here revolves around three inequalities for
mass-conserving pairs (momentum pi = pi(alpha - beta), theta in (0, 1),
N = |alpha| + |beta|):

  shape:      sum_i <i>^theta (a_i+b_i) >= 2 n1^theta
              + (2 - 2^theta) sum_{l>=3} n_l^theta - theta |pi|
  shift:      sum_i <i>^theta (a_i+b_i) - 2 <j>^theta + |pi|
              >= (1-theta) (sum_{l>=3} n_l^theta + |pi|) >= 0
  near-res:   under |sum_i (a_i-b_i) i^2| <= 10 sum_i |a_i-b_i|,
              sum_i |a_i-b_i| <i>^(theta/2)
              <= C_* (sum_i (a_i+b_i) <i>^theta - 2 <j>^theta + |pi|)
              with C_* = 13/(1-theta), and
              prod_i (1 + |a_i-b_i| <i>)
              <= e^27 (1+|pi|)^3 N^6 prod_{l>=3} n_l^(15/2)

The sweeps check these on every pair in a finite budget; they are the
evidence base the homological-equation constants rest on.  Pairs failing the
divisor hypothesis are skipped, not failed: for those |omega . ell| >= 1
holds outright and no small-divisor estimate is needed.

Note the near-resonant right-hand sides are minimized over j at the largest
bracket in the support (theta > 0 makes <j>^theta monotone), so checking
j = argmax <j> covers every admissible j.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

from .constants import ConstantEntry, ConstantsLedger, log_c_mon
from .hamiltonians import (
    MajorantHamiltonian,
    MultiIndex,
    NormParams,
    log_coefficient_c,
    momentum,
)
from .lie import frequency_divisor
from .spaces import WeightProfile, jbracket

__all__ = [
    "n_hat",
    "check_fiorentina",
    "check_eleganza",
    "ConstanceReport",
    "check_constance",
    "ShiftReport",
    "check_shift",
    "SmallDivReport",
    "check_smalldiv",
    "SweepReport",
    "sweep_rearrangement",
    "sweep_constance",
    "sweep_near_resonant",
    "sweep_coefficient_monotonicity",
    "iter_pairs",
    "ResonanceError",
    "LiederTransport",
    "lieder_transport",
    "enumerate_K",
    "enumerate_C",
    "HomologicalSolveReport",
    "solve_homological",
    "homological_residual",
]

TOL = 1e-12


def _as_counts(v) -> dict[int, int]:
    entries = v.entries if isinstance(v, MultiIndex) else tuple(v.items())
    out: dict[int, int] = {}
    for j, e in entries:
        if e < 0:
            raise ValueError("multiplicities must be nonnegative")
        if e:
            out[int(j)] = out.get(int(j), 0) + int(e)
    return out


def n_hat(v) -> tuple[int, ...]:
    """Nonincreasing multiset of <j> with multiplicity v_j."""
    counts = _as_counts(v)
    values: list[int] = []
    for j, e in counts.items():
        values.extend([jbracket(j)] * e)
    return tuple(sorted(values, reverse=True))


def check_fiorentina(alpha: MultiIndex, beta: MultiIndex) -> bool:
    """prod_i <i>^(a_i+b_i) == prod_l n_hat_l, exactly (integer arithmetic)."""
    combined = alpha + beta
    lhs = 1
    for j, e in combined.entries:
        lhs *= jbracket(j) ** e
    rhs = 1
    for v in n_hat(combined):
        rhs *= v
    return lhs == rhs


def check_eleganza(alpha: MultiIndex, beta: MultiIndex) -> tuple[int, int, bool]:
    """n_hat_1 <= |pi| + sum_{l >= 2} n_hat_l for mass-conserving pairs."""
    if alpha.total != beta.total:
        raise ValueError("mass conservation violated")
    hats = n_hat(alpha + beta)
    lhs = hats[0] if hats else 0
    rhs = abs(momentum(alpha, beta)) + sum(hats[1:])
    return lhs, rhs, lhs <= rhs


@dataclass(frozen=True)
class ConstanceReport:
    lhs: float
    rhs: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


def check_constance(alpha: MultiIndex, beta: MultiIndex, theta: float) -> ConstanceReport:
    if alpha.total != beta.total or alpha.total < 1:
        raise ValueError("need 1 <= |alpha| = |beta|")
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    combined = alpha + beta
    lhs = sum(jbracket(j) ** theta * e for j, e in combined.entries)
    hats = n_hat(combined)
    tail = sum(v**theta for v in hats[2:])
    pi = abs(momentum(alpha, beta))
    rhs = 2.0 * hats[0] ** theta + (2.0 - 2.0**theta) * tail - theta * pi
    return ConstanceReport(lhs, rhs, lhs >= rhs - TOL)


@dataclass(frozen=True)
class ShiftReport:
    lhs: float
    rhs: float
    holds: bool


def check_shift(alpha: MultiIndex, beta: MultiIndex, theta: float, j: int) -> ShiftReport:
    """The shifted sum stays nonnegative after removing 2 <j>^theta."""
    combined = alpha + beta
    if combined.get(j) < 1:
        raise ValueError(f"mode {j} not in the support of alpha + beta")
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    pi = abs(momentum(alpha, beta))
    lhs = sum(jbracket(i) ** theta * e for i, e in combined.entries) - 2.0 * jbracket(j) ** theta + pi
    hats = n_hat(combined)
    rhs = (1.0 - theta) * (sum(v**theta for v in hats[2:]) + pi)
    return ShiftReport(lhs, rhs, lhs >= rhs - TOL and rhs >= -TOL)


@dataclass(frozen=True)
class SmallDivReport:
    skipped: bool
    adele_margin: float
    adele_holds: bool
    cosette_log_margin: float
    cosette_holds: bool
    c_star: float


def check_smalldiv(alpha: MultiIndex, beta: MultiIndex, theta: float, q: float = 0.0) -> SmallDivReport:
    """Both near-resonant inequalities for one pair; q enters neither side.

    The q argument is accepted (and ignored) to make sweeps over q explicit
    about the claimed uniformity.
    """
    if alpha.total != beta.total or alpha.total < 1:
        raise ValueError("need 1 <= |alpha| = |beta|")
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    del q
    diff = {}
    for j, e in alpha.entries:
        diff[j] = diff.get(j, 0) + e
    for j, e in beta.entries:
        diff[j] = diff.get(j, 0) - e
    abs_diff = {j: abs(e) for j, e in diff.items() if e}
    quad = abs(sum(e * j * j for j, e in diff.items()))
    if quad > 10 * sum(abs_diff.values()):
        return SmallDivReport(True, math.nan, True, math.nan, True, 13.0 / (1.0 - theta))
    combined = alpha + beta
    hats = n_hat(combined)
    pi = abs(momentum(alpha, beta))
    c_star = 13.0 / (1.0 - theta)
    sum_theta = sum(jbracket(i) ** theta * e for i, e in combined.entries)
    adele_lhs = sum(e * jbracket(i) ** (theta / 2.0) for i, e in abs_diff.items())
    adele_rhs = c_star * (sum_theta - 2.0 * hats[0] ** theta + pi)
    adele_margin = adele_rhs - adele_lhs
    log_lhs = sum(math.log1p(e * jbracket(i)) for i, e in abs_diff.items())
    n_total = alpha.total + beta.total
    log_rhs = 27.0 + 3.0 * math.log1p(pi) + 6.0 * math.log(n_total) + 7.5 * sum(math.log(v) for v in hats[2:])
    cosette_margin = log_rhs - log_lhs
    return SmallDivReport(False, adele_margin, adele_margin >= -TOL, cosette_margin, cosette_margin >= -TOL, c_star)


# -- vectorized sweeps ---------------------------------------------------------


@lru_cache(maxsize=64)
def _multiset_block(max_mode: int, k: int) -> np.ndarray:
    """Count vectors of all multisets of size k over modes |j| <= max_mode."""
    modes = list(range(-max_mode, max_mode + 1))
    width = len(modes)
    rows = []
    for combo in combinations_with_replacement(range(width), k):
        row = np.zeros(width, dtype=np.int64)
        for idx in combo:
            row[idx] += 1
        rows.append(row)
    return np.vstack(rows)


@dataclass
class SweepReport:
    lemma: str
    budget: dict
    cases_checked: int
    failures: int
    worst_margin: float
    skipped: int = 0
    elapsed_seconds: float = 0.0
    failure_examples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def csv_values(self) -> tuple:
        budget = ";".join(f"{k}={v}" for k, v in self.budget.items())
        return (self.lemma, budget, self.cases_checked, self.failures, self.worst_margin)


SWEEP_CSV_HEADER = ("lemma", "budget", "cases_checked", "failures", "worst_margin")


def _pair_geometry(max_mode: int):
    modes = np.arange(-max_mode, max_mode + 1, dtype=np.int64)
    brackets = np.maximum(np.abs(modes), 1)
    n_vals = int(brackets.max())
    indicator = np.zeros((modes.size, n_vals), dtype=np.int64)
    indicator[np.arange(modes.size), brackets - 1] = 1
    return modes, brackets, np.arange(1, n_vals + 1, dtype=np.int64), indicator


def _top_two(counts: np.ndarray, bvals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Largest and second largest bracket (with multiplicity) per row of counts."""
    exist = counts > 0
    n1 = np.max(exist * bvals[None, :], axis=1)
    reduced = counts.copy()
    reduced[np.arange(counts.shape[0]), n1 - 1] -= 1
    n2 = np.max((reduced > 0) * bvals[None, :], axis=1)
    return n1, n2


def sweep_rearrangement(max_degree: int = 6, max_mode: int = 4) -> SweepReport:
    """fiorentina product identity and the eleganza bound over a pair budget.

    The product identity depends only on the combined index alpha + beta, so
    it is checked once per combined multiset, in exact integer arithmetic.
    The eleganza bound involves the momentum and is checked per pair.
    """
    start = time.perf_counter()
    modes, brackets, bvals, indicator = _pair_geometry(max_mode)
    checked = failures = 0
    worst = math.inf
    examples: list = []
    for degree in range(2, max_degree + 1, 2):
        for row in _multiset_block(max_mode, degree):
            combined = MultiIndex({int(j): int(e) for j, e in zip(modes, row) if e})
            checked += 1
            if not check_fiorentina(combined, MultiIndex.empty()):
                failures += 1
                if len(examples) < 5:
                    examples.append(("fiorentina", combined.to_dict()))
    for k in range(1, max_degree // 2 + 1):
        V = _multiset_block(max_mode, k)
        B = V @ indicator
        msum = V @ modes
        for ia in range(V.shape[0]):
            counts = B[ia] + B
            n1, _ = _top_two(counts, bvals)
            pi = np.abs(msum[ia] - msum)
            ele_margin = (pi + counts @ bvals - 2 * n1).astype(float)
            checked += V.shape[0]
            bad = ele_margin < 0
            failures += int(np.count_nonzero(bad))
            worst = min(worst, float(ele_margin.min()))
            if np.any(bad) and len(examples) < 5:
                examples.append(("eleganza", k, ia, int(np.nonzero(bad)[0][0])))
    return SweepReport(
        "rearrangement",
        {"max_degree": max_degree, "max_mode": max_mode},
        checked,
        failures,
        worst,
        elapsed_seconds=time.perf_counter() - start,
        failure_examples=examples,
    )


def sweep_constance(
    max_degree: int = 8,
    max_mode: int = 6,
    thetas: Sequence[float] = (0.25, 0.5, 0.75),
    tol: float = TOL,
) -> SweepReport:
    """The shape inequality over every mass-conserving pair in the budget."""
    start = time.perf_counter()
    modes, brackets, bvals, indicator = _pair_geometry(max_mode)
    checked = failures = 0
    worst = math.inf
    examples: list = []
    for theta in thetas:
        br_theta = brackets.astype(float) ** theta
        bv_theta = bvals.astype(float) ** theta
        for k in range(1, max_degree // 2 + 1):
            V = _multiset_block(max_mode, k)
            B = V @ indicator
            msum = V @ modes
            Lt = V @ br_theta
            for ia in range(V.shape[0]):
                counts = B[ia] + B
                n1, n2 = _top_two(counts, bvals)
                lhs = Lt[ia] + Lt
                pi = np.abs(msum[ia] - msum).astype(float)
                tail = lhs - bv_theta[n1 - 1] - bv_theta[n2 - 1]
                rhs = 2.0 * bv_theta[n1 - 1] + (2.0 - 2.0**theta) * tail - theta * pi
                margin = lhs - rhs
                checked += V.shape[0]
                bad = margin < -tol
                failures += int(np.count_nonzero(bad))
                worst = min(worst, float(margin.min()))
                if np.any(bad) and len(examples) < 5:
                    examples.append((theta, k, ia, int(np.nonzero(bad)[0][0])))
    return SweepReport(
        "shape-inequality",
        {"max_degree": max_degree, "max_mode": max_mode, "thetas": tuple(thetas)},
        checked,
        failures,
        worst,
        elapsed_seconds=time.perf_counter() - start,
        failure_examples=examples,
    )


def sweep_near_resonant(
    max_degree: int = 8,
    max_mode: int = 6,
    thetas: Sequence[float] = (0.25, 0.5, 0.75),
    qs: Sequence[float] = (0.0, 1.0),
    tol: float = TOL,
) -> SweepReport:
    """Both near-resonant inequalities over the budget, per theta and q.

    Neither side depends on q; the loop makes the claimed q-uniformity an
    explicitly tested statement rather than a remark.
    """
    start = time.perf_counter()
    modes, brackets, bvals, indicator = _pair_geometry(max_mode)
    checked = failures = skipped = 0
    worst = math.inf
    examples: list = []
    mode_sq = (modes * modes).astype(np.int64)
    log_br = np.log(brackets.astype(float))
    log_bv = np.log(bvals.astype(float))
    for theta in thetas:
        c_star = 13.0 / (1.0 - theta)
        br_theta = brackets.astype(float) ** theta
        br_half = brackets.astype(float) ** (theta / 2.0)
        bv_theta = bvals.astype(float) ** theta
        for q in qs:
            del q  # uniformity: the inequalities are identical for every q
            for k in range(1, max_degree // 2 + 1):
                V = _multiset_block(max_mode, k)
                B = V @ indicator
                msum = V @ modes
                Lt = V @ br_theta
                LL = V @ log_br
                # lookup table for log(1 + d <i>), d = 0..2k
                dmax = 2 * k
                table = np.log1p(np.outer(np.arange(dmax + 1), brackets.astype(float)))
                n_total = 2 * k
                for ia in range(V.shape[0]):
                    D = V[ia] - V
                    absD = np.abs(D)
                    hyp = np.abs(D @ mode_sq) <= 10 * absD.sum(axis=1)
                    counts = B[ia] + B
                    n1, n2 = _top_two(counts, bvals)
                    pi = np.abs(msum[ia] - msum).astype(float)
                    lhs_t = Lt[ia] + Lt
                    adele_lhs = absD @ br_half
                    adele_rhs = c_star * (lhs_t - 2.0 * bv_theta[n1 - 1] + pi)
                    adele_margin = adele_rhs - adele_lhs
                    cos_lhs = table[absD, np.arange(modes.size)[None, :]].sum(axis=1)
                    cos_tail = LL[ia] + LL - log_bv[n1 - 1] - log_bv[n2 - 1]
                    cos_rhs = 27.0 + 3.0 * np.log1p(pi) + 6.0 * math.log(n_total) + 7.5 * cos_tail
                    cos_margin = cos_rhs - cos_lhs
                    margin = np.minimum(adele_margin, cos_margin)
                    bad = hyp & (margin < -tol)
                    checked += int(np.count_nonzero(hyp))
                    skipped += int(np.count_nonzero(~hyp))
                    failures += int(np.count_nonzero(bad))
                    if np.any(hyp):
                        worst = min(worst, float(margin[hyp].min()))
                    if np.any(bad) and len(examples) < 5:
                        examples.append((theta, k, ia, int(np.nonzero(bad)[0][0])))
    return SweepReport(
        "near-resonant",
        {"max_degree": max_degree, "max_mode": max_mode, "thetas": tuple(thetas), "qs": tuple(qs)},
        checked,
        failures,
        worst,
        skipped=skipped,
        elapsed_seconds=time.perf_counter() - start,
        failure_examples=examples,
    )


def sweep_coefficient_monotonicity(
    max_degree: int = 8,
    max_mode: int = 6,
    *,
    r: float = 1.0,
    rho: float = 0.25,
    sigma: float = 0.25,
    p1: float = 1.0,
    tau1: float,
    theta: float = 0.5,
    eta: float = 0.5,
    tol: float = TOL,
) -> SweepReport:
    """Coefficient-level monotonicity of c^(j) over every budget pair.

    Four log-coefficient ratios, each taken at the worst admissible j
    (every j with alpha_j + beta_j >= 1, kernel pairs included):

      (a) Gevrey s -> s+sigma, eta -> eta-sigma:   ratio <= 1
      (b) r -> e^-sigma r, a -> a+sigma, eta -> eta-sigma:  ratio <= e^(2 sigma)
      (c) r -> r-rho, p -> p+p1, eta -> eta-sigma:  ratio <= C_mon(r/rho, sigma, p1)
      (MS) modified p -> p+tau1, momentum-zero pairs only:  ratio <= 1

    Every ratio is independent of the base (p, s, a), which is why none of
    those appear in the signature: (a) reduces to the shift inequality in
    <i>^theta, (b) and (MS) to mode-size bookkeeping, (c) to C_mon against
    the lost powers of r and <j>.  Margins are reported in log-coefficient
    units.  The worst j maximizes <j> (items a, c, MS) or |j| (item b),
    both attained at the largest bracket in the support.
    """
    if not 0.0 < sigma < eta:
        raise ValueError("need 0 < sigma < eta")
    if not 0.0 < rho < r:
        raise ValueError("need 0 < rho < r")
    if min(p1, tau1) <= 0.0 or not 0.0 < theta < 1.0:
        raise ValueError("need p1 > 0, tau1 > 0, theta in (0, 1)")
    start = time.perf_counter()
    modes, brackets, bvals, indicator = _pair_geometry(max_mode)
    abs_modes = np.abs(modes)
    br_theta = brackets.astype(float) ** theta
    bv_theta = bvals.astype(float) ** theta
    log_br = np.log(brackets.astype(float))
    log_bv = np.log(bvals.astype(float))
    # modified bracket <<i>> = max(|i|, 2) = max(<i>, 2)
    log_mb = np.log(np.maximum(brackets, 2).astype(float))
    log_mbv = np.log(np.maximum(bvals, 2).astype(float))
    log_cmon = log_c_mon(r / rho, sigma, p1)
    log_shrink = math.log(r / (r - rho))
    checked = failures = 0
    worst = math.inf
    examples: list = []
    for k in range(1, max_degree // 2 + 1):
        n_total = 2 * k
        V = _multiset_block(max_mode, k)
        B = V @ indicator
        msum = V @ modes
        Lt = V @ br_theta
        LL = V @ log_br
        LM = V @ log_mb
        Vabs = V @ abs_modes
        for ia in range(V.shape[0]):
            counts = B[ia] + B
            n1, _ = _top_two(counts, bvals)
            pi = np.abs(msum[ia] - msum).astype(float)
            margin_a = sigma * (Lt[ia] + Lt + pi - 2.0 * bv_theta[n1 - 1])
            sumabs = Vabs[ia] + Vabs
            max_abs = np.where(sumabs > 0, n1, 0)
            margin_b = sigma * (n_total + pi + sumabs - 2.0 * max_abs)
            margin_c = (
                log_cmon
                + (n_total - 2) * log_shrink
                + sigma * pi
                + p1 * (LL[ia] + LL - 2.0 * log_bv[n1 - 1])
            )
            mom_zero = msum[ia] == msum
            margin_ms = tau1 * (LM[ia] + LM - 2.0 * log_mbv[n1 - 1])
            checked += 3 * V.shape[0] + int(np.count_nonzero(mom_zero))
            for item, margin, mask in (
                ("a", margin_a, None),
                ("b", margin_b, None),
                ("c", margin_c, None),
                ("ms", margin_ms, mom_zero),
            ):
                bad = margin < -tol
                if mask is not None:
                    bad &= mask
                    if not np.any(mask):
                        continue
                    worst = min(worst, float(margin[mask].min()))
                else:
                    worst = min(worst, float(margin.min()))
                failures += int(np.count_nonzero(bad))
                if np.any(bad) and len(examples) < 5:
                    examples.append((item, k, ia, int(np.nonzero(bad)[0][0])))
    return SweepReport(
        "coefficient-monotonicity",
        {
            "max_degree": max_degree,
            "max_mode": max_mode,
            "r": r,
            "rho": rho,
            "sigma": sigma,
            "p1": p1,
            "tau1": tau1,
            "theta": theta,
            "eta": eta,
        },
        checked,
        failures,
        worst,
        elapsed_seconds=time.perf_counter() - start,
        failure_examples=examples,
    )


def iter_pairs(
    max_degree: int,
    max_mode: int,
    momentum_only: bool = False,
    include_kernel: bool = False,
):
    """Mass-conserving monomial pairs (alpha, beta) within the budget.

    Yields pairs with |alpha| = |beta| = k for 2k <= max_degree and support
    in |i| <= max_mode.  Kernel pairs (alpha == beta) are skipped unless
    asked for; momentum_only keeps pairs with pi(alpha - beta) = 0.
    """
    modes = list(range(-max_mode, max_mode + 1))

    def as_index(combo):
        counts: dict[int, int] = {}
        for j in combo:
            counts[j] = counts.get(j, 0) + 1
        return MultiIndex(counts)

    for k in range(1, max_degree // 2 + 1):
        block = [(as_index(c), sum(c)) for c in combinations_with_replacement(modes, k)]
        for alpha, mom_a in block:
            for beta, mom_b in block:
                if momentum_only and mom_b != mom_a:
                    continue
                if not include_kernel and alpha == beta:
                    continue
                yield alpha, beta


# -- homological equation ------------------------------------------------------


class ResonanceError(ValueError):
    """An exact (or numerically indistinguishable) resonance in the divisor."""

    def __init__(self, alpha: MultiIndex, beta: MultiIndex, value: float):
        super().__init__(f"resonant divisor omega.(alpha-beta) = {value:.3e} for alpha={alpha.to_dict()}, beta={beta.to_dict()}")
        self.alpha = alpha
        self.beta = beta
        self.value = value


RESONANCE_FLOOR = 1e-300


@dataclass(frozen=True)
class LiederTransport:
    case: str
    params_in: NormParams
    params_out: NormParams
    bound: ConstantEntry


def lieder_transport(
    case: str,
    params_in: NormParams,
    ledger: ConstantsLedger,
    sigma: float | None = None,
    rho: float | None = None,
) -> LiederTransport:
    """Output geometry and closed-form K bound for the homological solve.

    G: keep r, pay sigma of eta, gain sigma of sub-exponential weight.
    S: pay rho of r and sigma of eta, gain tau powers of <j>.
    M: keep everything, gain tau1 powers of <<j>>; needs momentum input.
    """
    prof = params_in.profile
    if case == "G":
        if prof.case != "G":
            raise ValueError("case G transport needs a Gevrey profile")
        if sigma is None or not (0.0 < sigma <= params_in.eta):
            raise ValueError("need 0 < sigma <= eta")
        out_prof = WeightProfile.gevrey(prof.p, prof.s + sigma, prof.a, prof.theta)
        params_out = NormParams(params_in.r, params_in.eta - sigma, out_prof)
        return LiederTransport("G", params_in, params_out, ledger.homological_bound("G", sigma=sigma))
    if case == "S":
        if prof.case != "S":
            raise ValueError("case S transport needs a Sobolev profile")
        if rho is None or not (0.0 < rho < params_in.r):
            raise ValueError("need 0 < rho < r")
        if sigma is None or not (0.0 < sigma <= params_in.eta):
            raise ValueError("need 0 < sigma <= eta")
        out_prof = WeightProfile.sobolev(prof.p + ledger.value("tau"))
        params_out = NormParams(params_in.r - rho, params_in.eta - sigma, out_prof)
        return LiederTransport("S", params_in, params_out, ledger.homological_bound("S", t=params_in.r / rho, sigma=sigma))
    if case == "M":
        if prof.case != "M":
            raise ValueError("case M transport needs a modified-Sobolev profile")
        out_prof = WeightProfile.modified_sobolev(prof.p + ledger.value("tau1"))
        params_out = NormParams(params_in.r, 0.0, out_prof)
        return LiederTransport("M", params_in, params_out, ledger.homological_bound("M"))
    raise ValueError(f"unknown case {case!r}")


def enumerate_K(
    params_in: NormParams,
    params_out: NormParams,
    omega,
    pairs: Iterable[tuple[MultiIndex, MultiIndex]],
    gamma: float,
) -> tuple[float, float, tuple | None]:
    """gamma * sup over (j, alpha, beta) of c_out / (c_in |omega.(alpha-beta)|).

    Returns (K, log K, worst witness).  The supremum is taken over the given
    pairs and every j in the support of alpha + beta; resonant pairs raise.
    """
    best_log = -math.inf
    witness: tuple | None = None
    count = 0
    for alpha, beta in pairs:
        if alpha == beta:
            continue
        count += 1
        div = abs(frequency_divisor(omega, alpha, beta))
        if div < RESONANCE_FLOOR:
            raise ResonanceError(alpha, beta, div)
        for j, _ in (alpha + beta).entries:
            log_ratio = (
                log_coefficient_c(params_out, j, alpha, beta)
                - log_coefficient_c(params_in, j, alpha, beta)
                - math.log(div)
            )
            if log_ratio > best_log:
                best_log = log_ratio
                witness = (alpha, beta, j, div)
    if count == 0:
        return 0.0, -math.inf, None
    log_k = math.log(gamma) + best_log
    value = math.exp(log_k) if log_k < 700.0 else math.inf
    return value, log_k, witness


def enumerate_C(
    params_in: NormParams,
    params_out: NormParams,
    pairs: Iterable[tuple[MultiIndex, MultiIndex]],
) -> tuple[float, float, tuple | None]:
    """sup over (j, alpha, beta) of c_out / c_in -- the divisor-free ratio.

    Kernel pairs participate: this is the norm-comparison constant between
    two parameter sets, and kernel terms carry norm like any others.
    Returns (C, log C, worst witness); empty input gives (0, -inf, None).
    """
    best_log = -math.inf
    witness: tuple | None = None
    for alpha, beta in pairs:
        for j, _ in (alpha + beta).entries:
            log_ratio = log_coefficient_c(params_out, j, alpha, beta) - log_coefficient_c(
                params_in, j, alpha, beta
            )
            if log_ratio > best_log:
                best_log = log_ratio
                witness = (alpha, beta, j)
    if witness is None:
        return 0.0, -math.inf, None
    value = math.exp(best_log) if best_log < 700.0 else math.inf
    return value, best_log, witness


@dataclass
class HomologicalSolveReport:
    S: MajorantHamiltonian
    case: str
    enumerated_K: float
    log_enumerated_K: float
    bound_K: ConstantEntry
    worst_divisor: tuple[dict[int, int], float] | None
    params_out: NormParams

    @property
    def within_bound(self) -> bool:
        return self.log_enumerated_K <= self.bound_K.log_value + 1e-9


def solve_homological(
    R: MajorantHamiltonian,
    omega,
    case: str,
    params_in: NormParams,
    ledger: ConstantsLedger,
    sigma: float | None = None,
    rho: float | None = None,
) -> HomologicalSolveReport:
    """Solve L_omega S = R termwise: S_{ab} = R_{ab} / (i omega.(a-b)).

    R must be range-only (no kernel terms); in case M it must also preserve
    momentum.  The report carries both the enumerated K over R's own terms
    and the closed-form case bound.
    """
    transport = lieder_transport(case, params_in, ledger, sigma=sigma, rho=rho)
    if case == "M" and not R.preserves_momentum():
        raise ValueError("case M requires a momentum-preserving right-hand side")
    terms: dict = {}
    worst: tuple[dict[int, int], float] | None = None
    pairs = []
    for alpha, beta, c in R.terms():
        if alpha == beta:
            raise ValueError(f"kernel term alpha = beta = {alpha.to_dict()} has no preimage")
        div = frequency_divisor(omega, alpha, beta)
        if abs(div) < RESONANCE_FLOOR:
            raise ResonanceError(alpha, beta, abs(div))
        terms[(alpha, beta)] = c / (1j * div)
        pairs.append((alpha, beta))
        if worst is None or abs(div) < worst[1]:
            ell = dict(alpha.to_dict())
            for j, e in beta.entries:
                ell[j] = ell.get(j, 0) - e
            worst = ({j: e for j, e in ell.items() if e}, abs(div))
    S = MajorantHamiltonian(R.window, terms, R.degree_cap)
    if pairs:
        k_val, k_log, _ = enumerate_K(params_in, transport.params_out, omega, pairs, ledger.inputs.gamma)
    else:
        k_val, k_log = 0.0, -math.inf
    return HomologicalSolveReport(S, case, k_val, k_log, transport.bound, worst, transport.params_out)


def homological_residual(S: MajorantHamiltonian, omega, R: MajorantHamiltonian) -> float:
    """max relative coefficient error of L_omega S - R (0 when both empty)."""
    from .lie import frequency_action

    ls = frequency_action(omega, S)
    keys = {(a, b) for a, b, _ in ls.terms()} | {(a, b) for a, b, _ in R.terms()}
    worst = 0.0
    for key in keys:
        lv = ls.coeff(*key)
        rv = R.coeff(*key)
        scale = max(abs(rv), abs(lv), 1e-300)
        worst = max(worst, abs(lv - rv) / scale)
    return worst
