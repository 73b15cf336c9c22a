"""Sparse polynomial Hamiltonians on Fourier modes, with majorant norms.

A Hamiltonian is a finite sum

    H(u) = sum_{alpha,beta} H_{alpha,beta} u^alpha ubar^beta

over pairs of multi-indices with |alpha| = |beta| (mass conservation holds
termwise) and real-valuedness H_{beta,alpha} = conj(H_{alpha,beta}) enforced at
build time.  Terms are kept in a dict keyed by the index pair; iteration order
is canonical (lexicographic on the dense exponent vectors).

The majorant norm at parameters (r, eta, w) is the sup over nonnegative y with
|y|_{l2} <= 1 of |Y_H(y)|_{l2}, where

    Y_H(y)_j = sum_terms |H_{ab}| ((alpha_j+beta_j)/2) c_j(alpha,beta) y^{alpha+beta-e_j},
    c_j(alpha,beta) = r^{|alpha|+|beta|-2} e^{eta|pi(alpha-beta)|} w_j^2 / w^{alpha+beta},

and pi(l) = sum_i i l_i is the monomial's momentum.  The exact sup is not
needed anywhere; two computable surrogates bracket it:

    upper_norm   the l1 relaxation sum_{terms,j} |H| (a_j+b_j)/2 c_j  (>= true)
    lower_norm   projected gradient ascent on the nonnegative unit sphere (<= true)

All coefficient arithmetic that can overflow (Gevrey weights at large modes) is
available in log space via `log_coefficient_c`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .spaces import FourierState, WeightProfile

__all__ = [
    "MultiIndex",
    "momentum",
    "lattice_diff",
    "MajorantHamiltonian",
    "HamiltonianBuilder",
    "NormParams",
    "log_coefficient_c",
    "coefficient_c",
    "upper_norm",
    "lower_norm",
    "ymap",
    "radius_rescale_factor",
    "domination_ratio",
]

REALITY_TOL = 1e-12


class MultiIndex:
    """Immutable sparse multi-index: mode -> positive exponent."""

    __slots__ = ("entries", "total", "_hash")

    def __init__(self, data: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        items = data.items() if isinstance(data, Mapping) else data
        acc: dict[int, int] = {}
        for j, e in items:
            j, e = int(j), int(e)
            if e < 0:
                raise ValueError("exponents must be nonnegative")
            if e:
                acc[j] = acc.get(j, 0) + e
        self.entries: tuple[tuple[int, int], ...] = tuple(sorted(acc.items()))
        self.total: int = sum(e for _, e in self.entries)
        self._hash = hash(self.entries)

    @classmethod
    def single(cls, j: int, e: int = 1) -> "MultiIndex":
        return cls({j: e})

    @classmethod
    def empty(cls) -> "MultiIndex":
        return cls()

    def get(self, j: int) -> int:
        for mode, e in self.entries:
            if mode == j:
                return e
        return 0

    def support(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.entries)

    def to_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        acc = dict(self.entries)
        for j, e in other.entries:
            acc[j] = acc.get(j, 0) + e
        return MultiIndex(acc)

    def minus_one(self, j: int) -> "MultiIndex":
        """Decrement mode j by one (the index must contain it)."""
        e = self.get(j)
        if e == 0:
            raise ValueError(f"mode {j} not present")
        acc = dict(self.entries)
        if e == 1:
            del acc[j]
        else:
            acc[j] = e - 1
        return MultiIndex(acc)

    def max_abs_mode(self) -> int:
        return max((abs(j) for j, _ in self.entries), default=0)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MultiIndex) and self.entries == other.entries

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"MultiIndex({dict(self.entries)})"


def momentum(alpha: MultiIndex, beta: MultiIndex) -> int:
    """pi(alpha - beta) = sum_j j (alpha_j - beta_j)."""
    return sum(j * e for j, e in alpha.entries) - sum(j * e for j, e in beta.entries)


def lattice_diff(alpha: MultiIndex, beta: MultiIndex) -> dict[int, int]:
    """alpha - beta as a sparse integer vector (may have negative entries)."""
    diff = dict(alpha.entries)
    for j, e in beta.entries:
        diff[j] = diff.get(j, 0) - e
    return {j: v for j, v in diff.items() if v}


def _dense_key(mi: MultiIndex, window: int) -> tuple[int, ...]:
    row = [0] * (2 * window + 1)
    for j, e in mi.entries:
        row[j + window] = e
    return tuple(row)


TermKey = tuple[MultiIndex, MultiIndex]


class MajorantHamiltonian:
    """Finite real polynomial Hamiltonian; immutable after construction."""

    __slots__ = ("window", "degree_cap", "_terms", "_order", "_gradcache")

    def __init__(self, window: int, terms: Mapping[TermKey, complex], degree_cap: int | None = None):
        # internal constructor; use HamiltonianBuilder for validated assembly
        self.window = window
        self.degree_cap = degree_cap
        self._terms = dict(terms)
        self._order: list[TermKey] | None = None
        self._gradcache: dict[int, tuple] = {}

    # -- iteration ----------------------------------------------------------

    def _canonical_order(self) -> list[TermKey]:
        if self._order is None:
            self._order = sorted(
                self._terms,
                key=lambda ab: _dense_key(ab[0], self.window) + _dense_key(ab[1], self.window),
            )
        return self._order

    def terms(self) -> Iterator[tuple[MultiIndex, MultiIndex, complex]]:
        for alpha, beta in self._canonical_order():
            yield alpha, beta, self._terms[(alpha, beta)]

    def coeff(self, alpha: MultiIndex, beta: MultiIndex) -> complex:
        return self._terms.get((alpha, beta), 0.0 + 0.0j)

    @property
    def n_terms(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    # -- structure ----------------------------------------------------------

    def max_degree(self) -> int:
        return max((a.total + b.total for a, b in self._terms), default=0)

    def min_degree(self) -> int:
        return min((a.total + b.total for a, b in self._terms), default=0)

    def scaling_degree(self) -> float:
        """Largest d with all terms |alpha| = |beta| > d; +inf for the zero Hamiltonian."""
        if not self._terms:
            return math.inf
        return min(a.total for a, _ in self._terms) - 1

    def kernel_part(self) -> "MajorantHamiltonian":
        kept = {k: c for k, c in self._terms.items() if k[0] == k[1]}
        return MajorantHamiltonian(self.window, kept, self.degree_cap)

    def range_part(self) -> "MajorantHamiltonian":
        kept = {k: c for k, c in self._terms.items() if k[0] != k[1]}
        return MajorantHamiltonian(self.window, kept, self.degree_cap)

    def preserves_momentum(self) -> bool:
        return all(momentum(a, b) == 0 for a, b in self._terms)

    def support_modes(self) -> tuple[int, ...]:
        modes: set[int] = set()
        for a, b in self._terms:
            modes.update(a.support())
            modes.update(b.support())
        return tuple(sorted(modes))

    # -- arithmetic ----------------------------------------------------------

    def with_cap(self, degree_cap: int | None) -> "MajorantHamiltonian":
        """Same terms, re-tagged cap (sums drop it; see __add__)."""
        if degree_cap is not None and not self.is_zero() and self.max_degree() > degree_cap:
            raise ValueError(f"existing degree {self.max_degree()} exceeds cap {degree_cap}")
        return MajorantHamiltonian(self.window, self._terms, degree_cap)

    def scaled(self, factor: float) -> "MajorantHamiltonian":
        if isinstance(factor, complex) and factor.imag != 0:
            raise ValueError("complex rescaling would break reality")
        f = float(factor)
        kept = {k: f * c for k, c in self._terms.items()}
        return MajorantHamiltonian(
            self.window, {k: c for k, c in kept.items() if c != 0}, self.degree_cap
        )

    def __add__(self, other: "MajorantHamiltonian") -> "MajorantHamiltonian":
        acc = dict(self._terms)
        for k, c in other._terms.items():
            s = acc.get(k, 0.0) + c
            if s == 0:
                acc.pop(k, None)
            else:
                acc[k] = s
        return MajorantHamiltonian(max(self.window, other.window), acc, None)

    def __sub__(self, other: "MajorantHamiltonian") -> "MajorantHamiltonian":
        return self + other.scaled(-1.0)

    def l1_coefficient_norm(self) -> float:
        return sum(abs(c) for c in self._terms.values())

    # -- evaluation ----------------------------------------------------------

    def value_at(self, u: FourierState) -> float:
        total = 0.0 + 0.0j
        for (alpha, beta), c in self._terms.items():
            m = c
            for j, e in alpha.entries:
                m *= u.amp(j) ** e
            for j, e in beta.entries:
                m *= np.conj(u.amp(j)) ** e
            total += m
        if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
            raise ArithmeticError(f"real Hamiltonian evaluated to {total}")
        return float(total.real)

    def _gradient_program(self, window: int) -> tuple | None:
        """Vectorized recipe for dbar_gradient at a given window.

        One row per (term, mode in beta-support) pair: coefficient c*beta_j,
        exponent row for u, exponent row for ubar, and the flat target slot.
        Cached because flow integrators evaluate the gradient thousands of
        times on states of a fixed size.
        """
        cached = self._gradcache.get(window)
        if cached is not None:
            return cached
        n = 2 * window + 1
        coeffs: list[complex] = []
        a_rows: list[np.ndarray] = []
        b_rows: list[np.ndarray] = []
        targets: list[int] = []
        for (alpha, beta), c in self._terms.items():
            if any(abs(j) > window for j, _ in alpha.entries):
                raise ValueError("state window smaller than Hamiltonian support")
            if any(abs(j) > window for j, _ in beta.entries):
                raise ValueError("state window smaller than Hamiltonian support")
            a_row = np.zeros(n, dtype=np.int64)
            for j, e in alpha.entries:
                a_row[j + window] = e
            b_full = np.zeros(n, dtype=np.int64)
            for j, e in beta.entries:
                b_full[j + window] = e
            for j, e in beta.entries:
                b_row = b_full.copy()
                b_row[j + window] -= 1
                coeffs.append(c * e)
                a_rows.append(a_row)
                b_rows.append(b_row)
                targets.append(j + window)
        if not coeffs:
            prog = None
        else:
            prog = (
                np.array(coeffs, dtype=np.complex128),
                np.vstack(a_rows),
                np.vstack(b_rows),
                np.array(targets, dtype=np.intp),
            )
        self._gradcache[window] = prog
        return prog

    def dbar_gradient(self, u: FourierState) -> np.ndarray:
        """(d H / d ubar_j)_j over the window of u."""
        out = np.zeros(2 * u.window + 1, dtype=np.complex128)
        prog = self._gradient_program(u.window)
        if prog is None:
            return out
        coeffs, a_exp, b_exp, targets = prog
        ub = np.conj(u.amps)
        vals = coeffs * np.prod(u.amps[None, :] ** a_exp, axis=1)
        vals *= np.prod(ub[None, :] ** b_exp, axis=1)
        np.add.at(out, targets, vals)
        return out

    # -- serialization -------------------------------------------------------

    @staticmethod
    def _fmt_index(mi: MultiIndex) -> str:
        inner = ",".join(f"{j}:{e}" for j, e in mi.entries)
        return "{" + inner + "}"

    def to_text(self) -> str:
        lines = []
        for alpha, beta, c in self.terms():
            lines.append(
                f"a:{self._fmt_index(alpha)} b:{self._fmt_index(beta)} {c.real!r} {c.imag!r}"
            )
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, window: int | None = None) -> "MajorantHamiltonian":
        builder_terms: list[tuple[MultiIndex, MultiIndex, complex]] = []
        max_mode = 0
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a_part, b_part, re_part, im_part = line.split()
            alpha = _parse_index(a_part, "a:")
            beta = _parse_index(b_part, "b:")
            c = float(re_part) + 1j * float(im_part)
            builder_terms.append((alpha, beta, c))
            max_mode = max(max_mode, alpha.max_abs_mode(), beta.max_abs_mode())
        if window is None:
            window = max_mode
        builder = HamiltonianBuilder(window)
        for alpha, beta, c in builder_terms:
            builder.add(alpha, beta, c)
        return builder.build()

    def __repr__(self) -> str:
        return (
            f"MajorantHamiltonian(window={self.window}, terms={self.n_terms}, "
            f"degrees {self.min_degree()}..{self.max_degree()})"
        )


def _parse_index(token: str, prefix: str) -> MultiIndex:
    if not token.startswith(prefix + "{") or not token.endswith("}"):
        raise ValueError(f"malformed index token {token!r}")
    inner = token[len(prefix) + 1 : -1]
    if not inner:
        return MultiIndex()
    pairs = {}
    for item in inner.split(","):
        j, e = item.split(":")
        pairs[int(j)] = int(e)
    return MultiIndex(pairs)


class HamiltonianBuilder:
    """Accumulates terms, then validates and symmetrizes into a Hamiltonian.

    Mass conservation |alpha| = |beta| is demanded per term; reality is imposed
    at build time by averaging H_{ab} with conj(H_{ba}), erroring if the
    asymmetry exceeds REALITY_TOL relative to the coefficient size.
    """

    def __init__(self, window: int, degree_cap: int | None = None):
        self.window = window
        self.degree_cap = degree_cap
        self._acc: dict[TermKey, complex] = {}

    def add(self, alpha: MultiIndex, beta: MultiIndex, coeff: complex) -> "HamiltonianBuilder":
        if alpha.total != beta.total:
            raise ValueError(
                f"mass conservation violated: |alpha|={alpha.total} != |beta|={beta.total}"
            )
        if alpha.total == 0:
            raise ValueError("constant terms are not allowed (H(0) = 0)")
        if alpha.max_abs_mode() > self.window or beta.max_abs_mode() > self.window:
            raise ValueError(f"modes outside window {self.window}")
        deg = alpha.total + beta.total
        if self.degree_cap is not None and deg > self.degree_cap:
            raise ValueError(f"degree {deg} beyond cap {self.degree_cap}")
        key = (alpha, beta)
        s = self._acc.get(key, 0.0) + complex(coeff)
        if s == 0:
            self._acc.pop(key, None)
        else:
            self._acc[key] = s
        return self

    def add_action(self, j: int, coeff: float) -> "HamiltonianBuilder":
        """Convenience: coeff * |u_j|^2."""
        e = MultiIndex.single(j)
        return self.add(e, e, coeff)

    def add_real_pair(self, alpha: MultiIndex, beta: MultiIndex, coeff: complex) -> "HamiltonianBuilder":
        """Add coeff*u^a ubar^b + conj(coeff)*u^b ubar^a (i.e. 2 Re(coeff u^a ubar^b))."""
        self.add(alpha, beta, coeff)
        if alpha != beta:
            self.add(beta, alpha, complex(coeff).conjugate())
        return self

    def build(self, reality_tol: float = REALITY_TOL) -> MajorantHamiltonian:
        out: dict[TermKey, complex] = {}
        seen: set[TermKey] = set()
        for key, c in self._acc.items():
            if key in seen:
                continue
            alpha, beta = key
            mirror = (beta, alpha)
            c_mirror = self._acc.get(mirror)
            if alpha == beta:
                if abs(c.imag) > reality_tol * max(1.0, abs(c)):
                    raise ValueError(f"diagonal coefficient not real: {key} -> {c}")
                out[key] = complex(c.real)
                seen.add(key)
                continue
            if c_mirror is None:
                raise ValueError(f"missing conjugate partner for {key}")
            sym = 0.5 * (c + c_mirror.conjugate())
            asym = abs(c - c_mirror.conjugate())
            if asym > reality_tol * max(1.0, abs(sym)):
                raise ValueError(f"reality violated at {key}: asymmetry {asym:.3e}")
            if sym != 0:
                out[key] = sym
                out[mirror] = sym.conjugate()
            seen.add(key)
            seen.add(mirror)
        return MajorantHamiltonian(self.window, out, self.degree_cap)


# -- majorant norm machinery -------------------------------------------------


@dataclass(frozen=True)
class NormParams:
    r: float
    eta: float
    profile: WeightProfile

    def __post_init__(self) -> None:
        if self.r <= 0:
            raise ValueError("radius must be positive")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")


def log_coefficient_c(params: NormParams, j: int, alpha: MultiIndex, beta: MultiIndex) -> float:
    """log of c_j(alpha,beta); requires alpha_j + beta_j >= 1."""
    vj = alpha.get(j) + beta.get(j)
    if vj < 1:
        raise ValueError(f"mode {j} does not appear in alpha+beta")
    deg = alpha.total + beta.total
    lw = params.profile.log_weight
    out = (deg - 2) * math.log(params.r)
    out += params.eta * abs(momentum(alpha, beta))
    out += 2.0 * lw(j)
    for i, e in alpha.entries:
        out -= e * lw(i)
    for i, e in beta.entries:
        out -= e * lw(i)
    return out


def coefficient_c(params: NormParams, j: int, alpha: MultiIndex, beta: MultiIndex) -> float:
    return math.exp(log_coefficient_c(params, j, alpha, beta))


def upper_norm(H: MajorantHamiltonian, params: NormParams) -> float:
    """l1 relaxation of the majorant norm (an upper bound for it)."""
    total = 0.0
    for alpha, beta, c in H.terms():
        v = alpha + beta
        for j, vj in v.entries:
            total += abs(c) * 0.5 * vj * coefficient_c(params, j, alpha, beta)
    return total


def _ymap_data(H: MajorantHamiltonian, params: NormParams):
    """Per-term data for Y_H: (exponent dict of alpha+beta, {j: weight_j})."""
    data = []
    for alpha, beta, c in H.terms():
        v = alpha + beta
        factors = {
            j: abs(c) * 0.5 * vj * coefficient_c(params, j, alpha, beta)
            for j, vj in v.entries
        }
        data.append((v.to_dict(), factors))
    return data


def ymap(H: MajorantHamiltonian, params: NormParams, y: Mapping[int, float]) -> dict[int, float]:
    """The nonnegative majorant field Y_H(y) as a sparse dict over modes."""
    out: dict[int, float] = {}
    for v, factors in _ymap_data(H, params):
        for j, f in factors.items():
            prod = f
            for i, e in v.items():
                prod *= y.get(i, 0.0) ** (e - (1 if i == j else 0))
            if prod:
                out[j] = out.get(j, 0.0) + prod
    return out


def lower_norm(
    H: MajorantHamiltonian,
    params: NormParams,
    rng: np.random.Generator | None = None,
    restarts: int = 8,
    iters: int = 200,
) -> float:
    """Projected gradient ascent for sup_{y >= 0, |y| <= 1} |Y_H(y)|; a lower bound.

    Deterministic for a fixed rng seed; a few restarts from basis directions and
    random interior points are enough for the small systems used in tests.
    """
    if H.is_zero():
        return 0.0
    rng = rng or np.random.default_rng(0)
    data = _ymap_data(H, params)
    modes = sorted({i for v, _ in data for i in v} | {j for _, f in data for j in f})
    idx = {m: k for k, m in enumerate(modes)}
    n = len(modes)

    def field_and_value(y: np.ndarray) -> tuple[np.ndarray, float]:
        Y = np.zeros(n)
        for v, factors in data:
            for j, f in factors.items():
                prod = f
                for i, e in v.items():
                    ex = e - (1 if i == j else 0)
                    if ex:
                        prod *= y[idx[i]] ** ex
                Y[idx[j]] += prod
        return Y, float(np.linalg.norm(Y))

    def gradient(y: np.ndarray, Y: np.ndarray, val: float) -> np.ndarray:
        g = np.zeros(n)
        if val == 0.0:
            return g
        for v, factors in data:
            for j, f in factors.items():
                w = v.copy()
                w[j] = w[j] - 1
                for k, ek in w.items():
                    if ek == 0:
                        continue
                    prod = f * ek
                    for i, e in w.items():
                        ex = e - (1 if i == k else 0)
                        if ex:
                            prod *= y[idx[i]] ** ex
                    g[idx[k]] += Y[idx[j]] * prod
        return g / val

    starts = [np.full(n, 1.0 / math.sqrt(n))]
    for k in range(min(n, max(0, restarts - 2))):
        e = np.zeros(n)
        e[k] = 1.0
        starts.append(e)
    while len(starts) < restarts + n:
        y = rng.uniform(0.1, 1.0, size=n)
        starts.append(y / np.linalg.norm(y))

    best = 0.0
    for y in starts:
        y = y.copy()
        step = 0.5
        _, val = field_and_value(y)
        for _ in range(iters):
            Y, val = field_and_value(y)
            g = gradient(y, Y, val)
            if not np.any(g):
                break
            y_new = np.clip(y + step * g / max(np.linalg.norm(g), 1e-300), 0.0, None)
            nrm = np.linalg.norm(y_new)
            if nrm > 1.0:
                y_new /= nrm
            _, val_new = field_and_value(y_new)
            if val_new > val:
                y, val = y_new, val_new
            else:
                step *= 0.5
                if step < 1e-6:
                    break
        best = max(best, val)
    return best


def radius_rescale_factor(H: MajorantHamiltonian, r: float, r_star: float, degree: float | None = None) -> float:
    """(r_star/r)^{2 d(H)}: norm contraction when shrinking the radius."""
    if r_star > r:
        raise ValueError("rescaling only shrinks the radius")
    d = H.scaling_degree() if degree is None else degree
    if d is math.inf:
        return 0.0
    return (r_star / r) ** (2.0 * d)


def domination_ratio(
    H1: MajorantHamiltonian,
    params1: NormParams,
    H2: MajorantHamiltonian,
    params2: NormParams,
) -> float:
    """Smallest c with |H1_{ab}| c1_j <= c |H2_{ab}| c2_j for all (j, a, b).

    By the coefficientwise comparison principle, the majorant norms then
    satisfy |H1|_1 <= c |H2|_2.  Returns inf when H2 misses a term of H1.
    """
    worst = 0.0
    for alpha, beta, c1 in H1.terms():
        c2 = H2.coeff(alpha, beta)
        if abs(c1) == 0.0:
            continue
        if abs(c2) == 0.0:
            return math.inf
        v = alpha + beta
        for j, _ in v.entries:
            log_ratio = (
                math.log(abs(c1))
                - math.log(abs(c2))
                + log_coefficient_c(params1, j, alpha, beta)
                - log_coefficient_c(params2, j, alpha, beta)
            )
            worst = max(worst, math.exp(log_ratio))
    return worst
