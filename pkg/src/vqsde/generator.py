"""Trinomial-tree generator of the lattice master equation ``dP/dt = L(t) P``.

``L`` is built two ways: as a dense tridiagonal matrix straight from the
transition rates, and as a weighted sum of circuits assembled from cyclic
shifts, a boundary phase flip and Pauli-Z expansions of the position operator.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .qsim import CNZ, MCX, Circuit, UnitarySum, Z, gate_counts, toffoli_cost


class NegativeProbabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class InitialDistribution:
    """Initial law of X(0): ``delta``, ``gaussian`` or ``explicit``."""

    kind: str
    x0: float | None = None
    mean: float | None = None
    std: float | None = None
    p: tuple[float, ...] | None = None

    @classmethod
    def delta(cls, x0: float) -> "InitialDistribution":
        return cls("delta", x0=float(x0))

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "InitialDistribution":
        if std <= 0:
            raise ValueError("gaussian std must be positive")
        return cls("gaussian", mean=float(mean), std=float(std))

    @classmethod
    def explicit(cls, p: Sequence[float]) -> "InitialDistribution":
        return cls("explicit", p=tuple(float(v) for v in p))

    def lattice(self, n_qubits: int, dx: float) -> np.ndarray:
        size = 2**n_qubits
        grid = dx * np.arange(size)
        if self.kind == "delta":
            i0 = nearest_index(self.x0, dx, size)
            p = np.zeros(size)
            p[i0] = 1.0
        elif self.kind == "gaussian":
            p = np.exp(-0.5 * ((grid - self.mean) / self.std) ** 2)
            p /= p.sum()
        elif self.kind == "explicit":
            p = np.asarray(self.p, dtype=float)
            if p.size != size:
                raise ValueError(f"explicit distribution has {p.size} entries, grid has {size}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("explicit distribution must be nonnegative and sum to 1")
        else:
            raise ValueError(f"unknown initial distribution kind {self.kind!r}")
        return p


def nearest_index(x: float, dx: float, size: int) -> int:
    """Grid index closest to ``x``; an exact tie goes to the lower index."""
    if x < -0.5 * dx or x > (size - 0.5) * dx:
        raise ValueError(f"x0={x} lies outside the grid [0, {(size - 1) * dx}]")
    return int(min(max(math.ceil(x / dx - 0.5), 0), size - 1))


@dataclass(frozen=True)
class ProcessSpec:
    """Drift ``mu(x)`` and squared diffusion ``sigma2(x)`` as ascending polynomial coefficients.

    ``schedule``, if given, maps a time to ``(mu_coeffs, sigma2_coeffs)`` and
    overrides the constant coefficients.
    """

    mu_coeffs: tuple[float, ...]
    sigma2_coeffs: tuple[float, ...]
    n_qubits: int
    x_max: float | None = None
    initial: InitialDistribution = field(default_factory=lambda: InitialDistribution("delta", x0=0.0))
    schedule: Callable[[float], tuple[Sequence[float], Sequence[float]]] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mu_coeffs", tuple(float(a) for a in self.mu_coeffs))
        object.__setattr__(self, "sigma2_coeffs", tuple(float(a) for a in self.sigma2_coeffs))
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.x_max is None:
            object.__setattr__(self, "x_max", float(2**self.n_qubits - 1))
        if self.x_max <= 0:
            raise ValueError("x_max must be positive")
        if not self.mu_coeffs or not self.sigma2_coeffs:
            raise ValueError("coefficient vectors must be nonempty")
        _, s2 = self.coefficients(0.0)
        if np.any(P.polyval(self.grid, s2) < -1e-12):
            raise ValueError("sigma^2 is negative on the grid")

    @property
    def size(self) -> int:
        return 2**self.n_qubits

    @property
    def dx(self) -> float:
        return self.x_max / (self.size - 1)

    @property
    def grid(self) -> np.ndarray:
        return self.dx * np.arange(self.size)

    def coefficients(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.schedule is None:
            return np.array(self.mu_coeffs), np.array(self.sigma2_coeffs)
        mu, s2 = self.schedule(t)
        return np.asarray(mu, dtype=float), np.asarray(s2, dtype=float)

    def mu(self, x, t: float = 0.0):
        return P.polyval(x, self.coefficients(t)[0])

    def sigma2(self, x, t: float = 0.0):
        return P.polyval(x, self.coefficients(t)[1])

    def initial_lattice(self) -> np.ndarray:
        return self.initial.lattice(self.n_qubits, self.dx)


def gbm(r: float, sigma: float, n_qubits: int, x_max: float | None = None,
        initial: InitialDistribution | None = None) -> ProcessSpec:
    """Geometric Brownian motion: mu = r x, sigma^2(x) = sigma^2 x^2."""
    spec = ProcessSpec((0.0, r), (0.0, 0.0, sigma**2), n_qubits, x_max)
    return _with_initial(spec, initial)


def ornstein_uhlenbeck(r: float, sigma: float, eta: float, n_qubits: int, x_max: float | None = None,
                       initial: InitialDistribution | None = None) -> ProcessSpec:
    """Mean-reverting process: mu = -eta (x - r), constant sigma."""
    spec = ProcessSpec((eta * r, -eta), (sigma**2,), n_qubits, x_max)
    return _with_initial(spec, initial)


def _with_initial(spec: ProcessSpec, initial: InitialDistribution | None) -> ProcessSpec:
    if initial is None:
        initial = InitialDistribution.delta(default_x0(spec.n_qubits, spec.x_max))
    return ProcessSpec(spec.mu_coeffs, spec.sigma2_coeffs, spec.n_qubits, spec.x_max, initial)


def default_x0(n_qubits: int, x_max: float) -> float:
    """Grid point nearest ``x_max / 2`` (lower one on a tie)."""
    dx = x_max / (2**n_qubits - 1)
    return dx * nearest_index(x_max / 2, dx, 2**n_qubits)


@dataclass(frozen=True)
class LatticeDistribution:
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def mass(self) -> float:
        return float(self.p.sum())


class TrinomialProbs(NamedTuple):
    p_u: float
    p_d: float
    p_m: float

    @property
    def negative(self) -> bool:
        return min(self) < 0


def transition_probs(spec: ProcessSpec, i: int, t: float, dt: float) -> TrinomialProbs:
    """Up/down/stay probabilities at grid index ``i``; negative values are flagged, not rejected."""
    if not 0 <= i < spec.size:
        raise IndexError(f"grid index {i} out of range")
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = spec.grid[i]
    diff = spec.sigma2(x, t) / spec.dx**2
    drift = spec.mu(x, t) / spec.dx
    probs = TrinomialProbs(float(0.5 * (diff + drift) * dt), float(0.5 * (diff - drift) * dt), float(1.0 - diff * dt))
    if probs.negative:
        warnings.warn(f"negative trinomial probability at x={x}: {tuple(probs)}", NegativeProbabilityWarning,
                      stacklevel=2)
    return probs


def build_L_dense(spec: ProcessSpec, t: float = 0.0) -> np.ndarray:
    size = spec.size
    x = spec.grid
    diff = spec.sigma2(x, t) / spec.dx**2
    drift = spec.mu(x, t) / spec.dx
    L = np.zeros((size, size))
    for k in range(size):
        L[k, k] = -diff[k]
        if k + 1 < size:
            L[k + 1, k] = 0.5 * (diff[k] + drift[k])
        if k - 1 >= 0:
            L[k - 1, k] = 0.5 * (diff[k] - drift[k])
    return L


def cyc_inc(n: int) -> Circuit:
    """|j> -> |j+1 mod 2^n| as a carry cascade of multi-controlled X gates."""
    if n < 1:
        raise ValueError("n must be positive")
    return Circuit(n, tuple(MCX(tuple(range(q + 1, n)), q) for q in range(n)))


def cyc_dec(n: int) -> Circuit:
    return cyc_inc(n).inverse()


def _boundary_projector(n: int) -> UnitarySum:
    # (C^nZ + I)/2 projects out |2^n - 1>
    return UnitarySum(n, ((0.5, Circuit(n, (CNZ(tuple(range(n))),))), (0.5, Circuit(n))))


def v_plus(n: int) -> UnitarySum:
    """sum_{i < 2^n - 1} |i+1><i|."""
    return UnitarySum.from_circuit(cyc_inc(n)) @ _boundary_projector(n)


def v_minus(n: int) -> UnitarySum:
    """sum_{i > 0} |i-1><i|."""
    return _boundary_projector(n) @ UnitarySum.from_circuit(cyc_dec(n))


def _z_power_terms(n: int, m: int) -> dict[frozenset, float]:
    weights = {q: 2.0 ** (n - q - 2) for q in range(n)}
    base = {frozenset(): (2**n - 1) / 2}
    for q, w in weights.items():
        base[frozenset((q,))] = -w
    result = {frozenset(): 1.0}
    for _ in range(m):
        nxt: dict[frozenset, float] = {}
        for s1, c1 in result.items():
            for s2, c2 in base.items():
                key = s1 ^ s2
                nxt[key] = nxt.get(key, 0.0) + c1 * c2
        result = {k: v for k, v in nxt.items() if v != 0.0}
    return result


def d_operator(n: int, m: int = 1) -> UnitarySum:
    """Position operator power ``D^m = diag(i^m)`` as Pauli-Z products."""
    if n < 1 or m < 0:
        raise ValueError("need n >= 1 and m >= 0")
    terms = []
    for qubits, c in sorted(_z_power_terms(n, m).items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
        terms.append((c, Circuit(n, tuple(Z(q) for q in sorted(qubits)))))
    return UnitarySum(n, tuple(terms))


def build_L_unitary_sum(spec: ProcessSpec, t: float = 0.0) -> UnitarySum:
    """L(t) = sum_m a_sig,m dx^(m-2) ((V+ + V-)/2 - I) D^m + sum_m a_mu,m dx^(m-1) (V+ - V-)/2 D^m.

    The drift part carries no ``-I``: drift only moves probability between
    neighbours, so it has no diagonal entry.
    """
    n = spec.n_qubits
    dx = spec.dx
    mu, s2 = spec.coefficients(t)
    vp, vm = v_plus(n), v_minus(n)
    diffusion = 0.5 * (vp + vm) - UnitarySum.identity(n)
    transport = 0.5 * (vp - vm)
    op = UnitarySum.zero(n)
    for m, a in enumerate(s2):
        if a != 0.0:
            op = op + (a * dx ** (m - 2)) * (diffusion @ d_operator(n, m))
    for m, a in enumerate(mu):
        if a != 0.0:
            op = op + (a * dx ** (m - 1)) * (transport @ d_operator(n, m))
    return op


def decomposition_report(op: UnitarySum) -> dict:
    """Term count plus gate and Toffoli-equivalent totals over all terms."""
    kinds: dict[str, int] = {}
    toffolis = 0
    for _, circ in op.terms:
        for k, v in gate_counts(circ).items():
            kinds[k] = kinds.get(k, 0) + v
        toffolis += toffoli_cost(circ)
    return {"terms": len(op), "gates": op.gate_count, "gate_kinds": kinds, "toffoli_equivalent": toffolis}
