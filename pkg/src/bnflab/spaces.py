"""Weighted sequence spaces of Fourier coefficients on the circle.

A state is a finite window of complex Fourier coefficients u = (u_j)_{|j| <= J},
representing u(x) = sum_j u_j e^{ijx}.  A weight profile assigns every mode a
weight w_j >= 1 and induces the norm

    |u|_w = ( sum_j w_j^2 |u_j|^2 )^{1/2}.

Supported families, writing <j> = max(|j|, 1) and <<j>> = max(|j|, 2):

    sobolev      w_j = <j>^p
    modified     w_j = <<j>>^p          (used for translation-invariant work)
    gevrey       w_j = <j>^p e^{a|j| + s <j>^theta},  0 < theta < 1
    tabulated    an explicit finite table (weight ladders built elsewhere)

The modified family differs from sobolev only on modes 0, +-1; the two norms are
equivalent with constants 1 and 2^p.  On the PDE side the sobolev norm is
sandwiched by |u|_{L2} + |d^p u|_{L2} within a factor 2, and the modified norm by
2^p |u|_{L2} + |d^p u|_{L2} likewise (both checked in the test suite).

Convolution is the Fourier-side product of functions.  On a shared window J the
exact product lives on window 2J; `convolve` truncates back to J and reports the
discarded l2 mass rather than dropping it silently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "jbracket",
    "jbracket2",
    "WeightProfile",
    "FourierState",
    "ConvolutionResult",
    "convolve",
    "algebra_constant",
    "l2_norm",
    "derivative_seminorm",
    "sobolev_pde_norm",
    "modified_pde_norm",
    "random_state",
]


def jbracket(j: int) -> int:
    """Japanese bracket <j> = max(|j|, 1)."""
    return max(abs(j), 1)


def jbracket2(j: int) -> int:
    """The variant <<j>> = max(|j|, 2) used by the modified family."""
    return max(abs(j), 2)


@dataclass(frozen=True)
class WeightProfile:
    """A weight family w_j together with its parameters.

    Use the classmethod constructors; the raw constructor does no dispatch.
    `window` is only meaningful for tabulated profiles (the table covers
    |j| <= window); analytic families evaluate at any mode.
    """

    family: str
    p: float = 0.0
    s: float = 0.0
    a: float = 0.0
    theta: float = 0.5
    table: tuple[float, ...] | None = None
    window: int | None = None

    def __post_init__(self) -> None:
        if self.family not in ("sobolev", "modified", "gevrey", "tabulated"):
            raise ValueError(f"unknown weight family {self.family!r}")
        if self.family == "gevrey":
            if not (0.0 < self.theta < 1.0):
                raise ValueError("gevrey requires 0 < theta < 1")
            if self.p <= 0.5:
                raise ValueError("gevrey requires p > 1/2")
            # s = 0 is admitted: weight ladders bottom out there.
            if self.s < 0.0 or self.a < 0.0:
                raise ValueError("gevrey requires s >= 0 and a >= 0")
        elif self.family in ("sobolev", "modified"):
            if self.p < 0.0:
                raise ValueError("weight exponent p must be >= 0")
        else:  # tabulated
            if self.table is None or self.window is None:
                raise ValueError("tabulated profile needs table and window")
            if len(self.table) != 2 * self.window + 1:
                raise ValueError("table length must be 2*window+1")
            if any(w < 1.0 for w in self.table):
                raise ValueError("weights must be >= 1")

    # -- constructors ------------------------------------------------------

    @classmethod
    def sobolev(cls, p: float) -> "WeightProfile":
        return cls(family="sobolev", p=p)

    @classmethod
    def modified_sobolev(cls, p: float) -> "WeightProfile":
        return cls(family="modified", p=p)

    @classmethod
    def gevrey(cls, p: float, s: float, a: float = 0.0, theta: float = 0.5) -> "WeightProfile":
        return cls(family="gevrey", p=p, s=s, a=a, theta=theta)

    @classmethod
    def tabulated(cls, values: Mapping[int, float]) -> "WeightProfile":
        window = max(abs(j) for j in values)
        table = tuple(float(values.get(j, 1.0)) for j in range(-window, window + 1))
        return cls(family="tabulated", table=table, window=window)

    # -- evaluation --------------------------------------------------------

    @property
    def case(self) -> str | None:
        """Ladder case tag: S (sobolev), M (modified), G (gevrey)."""
        return {"sobolev": "S", "modified": "M", "gevrey": "G"}.get(self.family)

    def log_weight(self, j: int) -> float:
        if self.family == "sobolev":
            return self.p * math.log(jbracket(j))
        if self.family == "modified":
            return self.p * math.log(jbracket2(j))
        if self.family == "gevrey":
            b = jbracket(j)
            return self.p * math.log(b) + self.a * abs(j) + self.s * b**self.theta
        assert self.table is not None and self.window is not None
        if abs(j) > self.window:
            raise IndexError(f"mode {j} outside tabulated window {self.window}")
        return math.log(self.table[j + self.window])

    def weight(self, j: int) -> float:
        # direct formulas (exact powers); log_weight serves the log-space paths
        if self.family == "sobolev":
            return float(jbracket(j)) ** self.p
        if self.family == "modified":
            return float(jbracket2(j)) ** self.p
        if self.family == "gevrey":
            b = float(jbracket(j))
            return b**self.p * math.exp(self.a * abs(j) + self.s * b**self.theta)
        assert self.table is not None and self.window is not None
        if abs(j) > self.window:
            raise IndexError(f"mode {j} outside tabulated window {self.window}")
        return self.table[j + self.window]

    def log_weights(self, window: int) -> np.ndarray:
        return np.array([self.log_weight(j) for j in range(-window, window + 1)])

    def weights(self, window: int) -> np.ndarray:
        return np.array([self.weight(j) for j in range(-window, window + 1)])


class FourierState:
    """A finite window of Fourier coefficients, index j stored at j + window."""

    __slots__ = ("window", "amps")

    def __init__(self, window: int, amps: np.ndarray | Iterable[complex]):
        amps = np.asarray(amps, dtype=np.complex128)
        if amps.shape != (2 * window + 1,):
            raise ValueError(f"need {2 * window + 1} amplitudes for window {window}")
        self.window = window
        self.amps = amps

    @classmethod
    def zeros(cls, window: int) -> "FourierState":
        return cls(window, np.zeros(2 * window + 1, dtype=np.complex128))

    @classmethod
    def from_modes(cls, window: int, modes: Mapping[int, complex]) -> "FourierState":
        state = cls.zeros(window)
        for j, c in modes.items():
            if abs(j) > window:
                raise ValueError(f"mode {j} outside window {window}")
            state.amps[j + window] = c
        return state

    @classmethod
    def basis(cls, window: int, j: int, c: complex = 1.0) -> "FourierState":
        return cls.from_modes(window, {j: c})

    def amp(self, j: int) -> complex:
        if abs(j) > self.window:
            return 0.0 + 0.0j
        return complex(self.amps[j + self.window])

    def copy(self) -> "FourierState":
        return FourierState(self.window, self.amps.copy())

    def modes(self) -> np.ndarray:
        return np.arange(-self.window, self.window + 1)

    # -- invariants and norms ---------------------------------------------

    def mass(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2))

    def momentum(self) -> float:
        return float(np.sum(self.modes() * np.abs(self.amps) ** 2))

    def l2_norm(self) -> float:
        return math.sqrt(self.mass())

    def seq_norm(self, profile: WeightProfile) -> float:
        w = profile.weights(self.window)
        return float(np.sqrt(np.sum((w * np.abs(self.amps)) ** 2)))

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "J": self.window,
            "re": [float(x) for x in self.amps.real],
            "im": [float(x) for x in self.amps.imag],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "FourierState":
        window = int(data["J"])
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data["im"], dtype=float)
        return cls(window, re + 1j * im)

    @classmethod
    def loads(cls, text: str) -> "FourierState":
        return cls.from_json_dict(json.loads(text))

    def __repr__(self) -> str:
        nz = {int(j): complex(self.amps[j + self.window])
              for j in self.modes() if self.amps[j + self.window] != 0}
        return f"FourierState(window={self.window}, modes={nz})"


@dataclass(frozen=True)
class ConvolutionResult:
    state: "FourierState"
    discarded_mass: float  # l2 mass of the modes beyond the retained window
    truncated: bool


def convolve(f: FourierState, g: FourierState) -> ConvolutionResult:
    """Fourier coefficients of the pointwise product, truncated to the shared window.

    The exact product of two window-J states lives on window 2J; the part beyond
    J is dropped and its l2 mass reported.
    """
    if f.window != g.window:
        raise ValueError("convolve requires a shared window")
    full = np.convolve(f.amps, g.amps)  # window 2J
    J = f.window
    kept = full[J : 3 * J + 1].copy()
    outside = np.concatenate([full[: J], full[3 * J + 1 :]])
    discarded = float(np.sqrt(np.sum(np.abs(outside) ** 2)))
    return ConvolutionResult(FourierState(J, kept), discarded, discarded > 0.0)


# -- PDE-side norms --------------------------------------------------------


def l2_norm(u: FourierState) -> float:
    return u.l2_norm()


def derivative_seminorm(u: FourierState, p: float) -> float:
    """|d^p u|_{L2} = (sum |j|^{2p} |u_j|^2)^{1/2} (mode 0 contributes nothing)."""
    j = np.abs(u.modes()).astype(float)
    weights = np.where(j > 0, j**p, 0.0)
    return float(np.sqrt(np.sum((weights * np.abs(u.amps)) ** 2)))


def sobolev_pde_norm(u: FourierState, p: float) -> float:
    return l2_norm(u) + derivative_seminorm(u, p)


def modified_pde_norm(u: FourierState, p: float) -> float:
    return 2.0**p * l2_norm(u) + derivative_seminorm(u, p)


# -- algebra constants -----------------------------------------------------


def _bracket_power_sum(p: float, tol: float = 1e-12) -> float:
    """sum over all integers of <i>^{-2p}, certified to absolute accuracy tol.

    Partial sum to M plus the midpoint-rule tail 2 int_{M+1/2} x^{-2p} dx; the
    midpoint correction error is O(p M^{-2p-1}) and M is chosen accordingly.
    The zeta-function route is kept in the tests as an independent oracle.
    """
    if p <= 0.5:
        raise ValueError("power sum diverges for p <= 1/2")
    M = max(64, int(math.ceil((p / tol) ** (1.0 / (2.0 * p + 1.0)))))
    i = np.arange(2, M + 1, dtype=float)
    partial = float(np.sum(i ** (-2.0 * p)))
    tail = (M + 0.5) ** (1.0 - 2.0 * p) / (2.0 * p - 1.0)
    return 3.0 + 2.0 * (partial + tail)


def algebra_constant(profile: WeightProfile) -> float:
    """Multiplicative constant of the weighted space under convolution.

    sobolev/gevrey: 2^p (sum <i>^{-2p})^{1/2};  modified: (4 + 2(2p+1)/(2p-1))^{1/2}.
    Requires p > 1/2.
    """
    p = profile.p
    if profile.family in ("sobolev", "gevrey"):
        if p <= 0.5:
            raise ValueError("algebra constant needs p > 1/2")
        return 2.0**p * math.sqrt(_bracket_power_sum(p))
    if profile.family == "modified":
        if p <= 0.5:
            raise ValueError("algebra constant needs p > 1/2")
        return math.sqrt(4.0 + 2.0 * (2.0 * p + 1.0) / (2.0 * p - 1.0))
    raise ValueError("no algebra constant for tabulated profiles")


def random_state(
    window: int,
    rng: np.random.Generator,
    profile: WeightProfile | None = None,
    norm: float | None = None,
    support: int | None = None,
) -> FourierState:
    """Random-phase state with profile-weighted spectrum.

    Magnitudes are drawn in [1/2, 1] / w_j (flat profile if none given), phases
    uniform; if `norm` is given the state is rescaled so its profile norm (l2
    norm if no profile) is exactly `norm`.  `support` restricts to |j| <= support.
    """
    sup = window if support is None else min(support, window)
    state = FourierState.zeros(window)
    for j in range(-sup, sup + 1):
        w = profile.weight(j) if profile is not None else 1.0
        mag = rng.uniform(0.5, 1.0) / w
        phase = rng.uniform(0.0, 2.0 * math.pi)
        state.amps[j + window] = mag * np.exp(1j * phase)
    if norm is not None:
        current = state.seq_norm(profile) if profile is not None else state.l2_norm()
        state.amps *= norm / current
    return state
