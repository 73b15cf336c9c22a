"""Perturbed NLS frequencies and the small-divisor condition.

Frequencies are omega_j = j^2 + xi_j <j>^{-q} with xi_j drawn i.i.d. uniform
from [-1/2, 1/2].  A vector omega is (gamma, q)-nonresonant when

    |omega . ell| > gamma * prod_n 1 / (1 + |ell_n|^mu1 <n>^{mu2+q})

for every finite nonzero integer vector ell.  Only a finite budget of ell's
can ever be checked, so verdicts carry their budget.  Vectors with
|sum_n ell_n n^2| >= 10 sum_n |ell_n| satisfy |omega . ell| >= 1 for every
omega in the admissible family, which beats the right-hand side whenever
gamma <= 1; the enumeration drops them up front.

The Monte-Carlo measure study works with per-sample margins

    m(omega) = min_ell |omega . ell| / prod_ell (gamma = 1 right-hand side),

so the violation set {m <= gamma} is nested across gamma by construction and
the reported fractions are exactly monotone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .spaces import jbracket

__all__ = [
    "FrequencyVector",
    "sample_frequency",
    "divisor",
    "dioph_rhs",
    "LatticeBudget",
    "enumerate_lattice",
    "DiophantineVerdict",
    "is_diophantine",
    "MeasureRow",
    "measure_estimate_mc",
    "sample_margins",
    "wilson_interval",
]


def _validate_gamma(gamma: float) -> None:
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")


@dataclass(frozen=True)
class FrequencyVector:
    """omega_j = j^2 + xi_j <j>^{-q} for |j| <= window."""

    q: float
    window: int
    xi: tuple[float, ...]

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("q must be nonnegative")
        if len(self.xi) != 2 * self.window + 1:
            raise ValueError(f"need {2 * self.window + 1} xi values for window {self.window}")
        if any(abs(x) > 0.5 for x in self.xi):
            raise ValueError("each xi_j must lie in [-1/2, 1/2]")

    @classmethod
    def unperturbed(cls, window: int, q: float = 0.0) -> "FrequencyVector":
        return cls(q, window, (0.0,) * (2 * window + 1))

    def xi_at(self, j: int) -> float:
        if abs(j) > self.window:
            raise IndexError(f"mode {j} outside window {self.window}")
        return self.xi[j + self.window]

    def omega_at(self, j: int) -> float:
        return float(j * j) + self.xi_at(j) * jbracket(j) ** (-self.q)

    def omega_array(self) -> np.ndarray:
        j = np.arange(-self.window, self.window + 1, dtype=float)
        bra = np.maximum(np.abs(j), 1.0)
        return j * j + np.asarray(self.xi) * bra ** (-self.q)

    def to_json_dict(self) -> dict:
        return {"q": self.q, "window": self.window, "xi": list(self.xi)}

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "FrequencyVector":
        return cls(float(data["q"]), int(data["window"]), tuple(float(x) for x in data["xi"]))


def sample_frequency(q: float, window: int, seed) -> FrequencyVector:
    """Draw xi_j i.i.d. uniform on [-1/2, 1/2]; reproducible from the seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xi = rng.uniform(-0.5, 0.5, size=2 * window + 1)
    return FrequencyVector(q, window, tuple(float(x) for x in xi))


def _validate_ell(ell: Mapping[int, int]) -> dict[int, int]:
    clean = {int(j): int(e) for j, e in ell.items() if int(e) != 0}
    if not clean:
        raise ValueError("ell must be a nonzero lattice vector")
    return clean


def divisor(omega: FrequencyVector, ell: Mapping[int, int]) -> float:
    """omega . ell over the (finite, nonzero) support of ell."""
    clean = _validate_ell(ell)
    return sum(omega.omega_at(j) * e for j, e in clean.items())


def dioph_rhs(gamma: float, q: float, ell: Mapping[int, int], mu1: float = 2.0, mu2: float = 2.0) -> float:
    """gamma * prod_n 1 / (1 + |ell_n|^mu1 <n>^{mu2+q}) over the support of ell."""
    _validate_gamma(gamma)
    if mu1 <= 1 or mu2 <= 1:
        raise ValueError("mu1 and mu2 must exceed 1")
    clean = _validate_ell(ell)
    prod = 1.0
    for n, e in clean.items():
        prod /= 1.0 + abs(e) ** mu1 * jbracket(n) ** (mu2 + q)
    return gamma * prod


@dataclass(frozen=True)
class LatticeBudget:
    """Finite enumeration family: support size, entry magnitude, mode range."""

    max_support: int = 3
    max_entry: int = 2
    max_mode: int = 8

    def __post_init__(self):
        if self.max_support < 1 or self.max_entry < 1 or self.max_mode < 0:
            raise ValueError("budget components must be positive (max_mode >= 0)")


def _automatically_safe(modes: Sequence[int], entries: Sequence[int]) -> bool:
    quad = abs(sum(e * j * j for j, e in zip(modes, entries)))
    return quad >= 10 * sum(abs(e) for e in entries)


@lru_cache(maxsize=16)
def _enumerate_rows(budget: LatticeBudget) -> np.ndarray:
    """All budget lattice vectors, sign-canonicalized, minus the automatically safe ones.

    Canonical form: the entry at the lowest supported mode is positive
    (|omega . ell| and the right-hand side are even in ell).
    """
    modes_all = range(-budget.max_mode, budget.max_mode + 1)
    entries_nz = [e for e in range(-budget.max_entry, budget.max_entry + 1) if e != 0]
    rows: list[np.ndarray] = []
    width = 2 * budget.max_mode + 1
    for k in range(1, budget.max_support + 1):
        for modes in itertools.combinations(modes_all, k):
            for entries in itertools.product(entries_nz, repeat=k):
                if entries[0] < 0:
                    continue  # sign representative
                if _automatically_safe(modes, entries):
                    continue
                row = np.zeros(width, dtype=np.int64)
                for j, e in zip(modes, entries):
                    row[j + budget.max_mode] = e
                rows.append(row)
    if not rows:
        return np.zeros((0, width), dtype=np.int64)
    return np.vstack(rows)


def enumerate_lattice(budget: LatticeBudget) -> np.ndarray:
    """Matrix of lattice vectors (one per row, column j at index j + max_mode)."""
    return _enumerate_rows(budget).copy()


@lru_cache(maxsize=32)
def _rhs_products(budget: LatticeBudget, q: float, mu1: float, mu2: float) -> np.ndarray:
    """gamma = 1 right-hand sides for every enumerated row."""
    rows = _enumerate_rows(budget)
    modes = np.arange(-budget.max_mode, budget.max_mode + 1, dtype=float)
    bra = np.maximum(np.abs(modes), 1.0)
    factors = np.where(rows != 0, 1.0 + np.abs(rows) ** mu1 * bra ** (mu2 + q), 1.0)
    return 1.0 / np.prod(factors, axis=1)


def _row_to_ell(row: np.ndarray, max_mode: int) -> dict[int, int]:
    return {int(j - max_mode): int(e) for j, e in enumerate(row) if e != 0}


def _min_margin_rows(omegas: np.ndarray, budget: LatticeBudget, q: float, mu1: float, mu2: float) -> tuple[np.ndarray, np.ndarray]:
    """(min margins, argmin row indices) for a batch of omega arrays."""
    rows = _enumerate_rows(budget)
    rhs1 = _rhs_products(budget, q, mu1, mu2)
    if rows.shape[0] == 0:
        n = omegas.shape[0]
        return np.full(n, math.inf), np.full(n, -1, dtype=np.intp)
    mins = np.empty(omegas.shape[0])
    args = np.empty(omegas.shape[0], dtype=np.intp)
    block = 256
    ratios_rows = rows.T.astype(float)
    for lo in range(0, omegas.shape[0], block):
        chunk = omegas[lo : lo + block]
        ratios = np.abs(chunk @ ratios_rows) / rhs1[None, :]
        args[lo : lo + chunk.shape[0]] = np.argmin(ratios, axis=1)
        mins[lo : lo + chunk.shape[0]] = ratios[np.arange(chunk.shape[0]), args[lo : lo + chunk.shape[0]]]
    return mins, args


@dataclass(frozen=True)
class DiophantineVerdict:
    ok: bool
    gamma: float
    margin: float
    witness: dict[int, int] | None
    lhs: float | None
    rhs: float | None
    budget: LatticeBudget

    def __bool__(self) -> bool:
        return self.ok


def is_diophantine(
    omega: FrequencyVector,
    gamma: float,
    budget: LatticeBudget | None = None,
    mu1: float = 2.0,
    mu2: float = 2.0,
) -> DiophantineVerdict:
    """Check |omega . ell| > rhs over the budget; on failure report the worst ell.

    The witness is the margin-minimizing row, so the verdict and witness do
    not depend on enumeration order.
    """
    _validate_gamma(gamma)
    budget = budget or LatticeBudget(max_mode=omega.window)
    if budget.max_mode > omega.window:
        raise ValueError("budget modes exceed the frequency window")
    om = omega.omega_array()
    lo = omega.window - budget.max_mode
    om = om[lo : lo + 2 * budget.max_mode + 1]
    mins, args = _min_margin_rows(om[None, :], budget, omega.q, mu1, mu2)
    margin = float(mins[0])
    ok = margin > gamma
    if ok:
        return DiophantineVerdict(True, gamma, margin, None, None, None, budget)
    row = _enumerate_rows(budget)[args[0]]
    ell = _row_to_ell(row, budget.max_mode)
    lhs = abs(float(np.dot(row.astype(float), om)))
    rhs = dioph_rhs(gamma, omega.q, ell, mu1, mu2)
    return DiophantineVerdict(False, gamma, margin, ell, lhs, rhs, budget)


def sample_margins(
    q: float,
    window: int,
    trials: int,
    budget: LatticeBudget,
    seed,
    mu1: float = 2.0,
    mu2: float = 2.0,
) -> np.ndarray:
    """Per-sample nonresonance margins min_ell |omega . ell| / rhs_1(ell).

    A sample violates the gamma condition exactly when its margin is <= gamma,
    so one margin array serves a whole gamma grid with perfectly nested
    violation sets.  Each trial draws from its own spawned seed; results do
    not depend on evaluation order.
    """
    if budget.max_mode > window:
        raise ValueError("budget modes exceed the frequency window")
    if trials < 1:
        raise ValueError("trials must be positive")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = seq.spawn(trials)
    n = 2 * window + 1
    xi = np.empty((trials, n))
    for i, child in enumerate(children):
        xi[i] = np.random.default_rng(child).uniform(-0.5, 0.5, size=n)
    j = np.arange(-window, window + 1, dtype=float)
    bra = np.maximum(np.abs(j), 1.0)
    omegas = j * j + xi * bra ** (-q)
    lo = window - budget.max_mode
    omegas = omegas[:, lo : lo + 2 * budget.max_mode + 1]
    mins, _ = _min_margin_rows(omegas, budget, q, mu1, mu2)
    return mins


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial fraction (default 95%)."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z * z / (4.0 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class MeasureRow:
    gamma: float
    trials: int
    violations: int
    fraction: float
    ci_low: float
    ci_high: float

    def csv_values(self) -> tuple:
        return (self.gamma, self.trials, self.violations, self.fraction, self.ci_low, self.ci_high)


MEASURE_CSV_HEADER = ("gamma", "trials", "violations", "fraction", "ci_low", "ci_high")


def measure_estimate_mc(
    gamma_list: Iterable[float],
    q: float,
    trials: int,
    budget: LatticeBudget,
    seed,
    window: int | None = None,
    mu1: float = 2.0,
    mu2: float = 2.0,
) -> list[MeasureRow]:
    """Violation fractions over a gamma grid from one shared sample of omegas."""
    gammas = sorted(float(g) for g in gamma_list)
    for g in gammas:
        _validate_gamma(g)
    if trials < 100:
        raise ValueError("need at least 100 trials for a meaningful fraction")
    window = window if window is not None else budget.max_mode
    margins = sample_margins(q, window, trials, budget, seed, mu1, mu2)
    rows = []
    for g in gammas:
        viol = int(np.count_nonzero(margins <= g))
        lo, hi = wilson_interval(viol, trials)
        rows.append(MeasureRow(g, trials, viol, viol / trials, lo, hi))
    return rows
