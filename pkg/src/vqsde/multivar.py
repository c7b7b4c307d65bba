"""Correlated multi-dimensional trinomial lattice.

Each dimension d has its own register; dimension 0 occupies the most
significant qubits, so a multi-index flattens in C order.  Only the
closed-form branch with no down-down, up-down or down-up moves is built:
correlation enters through joint up-up hops.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .expectation import (
    EmptyIntervalWarning,
    OffGridBreakpointWarning,
    PayoffOperator,
    _grid_index,
    _on_grid,
    all_ones,
    indicator_interval,
)
from .generator import (
    NegativeProbabilityWarning,
    ProcessSpec,
    build_L_unitary_sum,
    d_operator,
    nearest_index,
    v_plus,
)
from .qsim import UnitarySum

DENSE_CAP = 10


@dataclass(frozen=True)
class MultiProcessSpec:
    """Per-dimension drift ``mu_d(x_d)`` and volatility ``sigma_d(x_d)`` (not its square).

    The cross terms need sigma_k * sigma_l, hence the volatility itself is the
    expanded polynomial.
    """

    mu_coeffs: tuple[tuple[float, ...], ...]
    sigma_coeffs: tuple[tuple[float, ...], ...]
    rho: np.ndarray
    n_qubits: tuple[int, ...]
    x_max: tuple[float, ...] | None = None
    initial_index: tuple[int, ...] | None = None
    schedule = None

    def __post_init__(self):
        D = len(self.n_qubits)
        mu = tuple(tuple(float(a) for a in row) for row in self.mu_coeffs)
        sig = tuple(tuple(float(a) for a in row) for row in self.sigma_coeffs)
        if D < 1 or len(mu) != D or len(sig) != D:
            raise ValueError("need one drift and one volatility polynomial per dimension")
        rho = np.array(self.rho, dtype=float).reshape(D, D)
        if not np.allclose(rho, rho.T, atol=0.0) or np.any(np.diag(rho) != 1.0) or np.any(np.abs(rho) > 1.0):
            raise ValueError("rho must be symmetric with unit diagonal and entries in [-1, 1]")
        rho.flags.writeable = False
        x_max = tuple(float(2**n - 1) for n in self.n_qubits) if self.x_max is None else tuple(map(float, self.x_max))
        if len(x_max) != D:
            raise ValueError("need one x_max per dimension")
        object.__setattr__(self, "mu_coeffs", mu)
        object.__setattr__(self, "sigma_coeffs", sig)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "n_qubits", tuple(int(n) for n in self.n_qubits))
        object.__setattr__(self, "x_max", x_max)
        if self.initial_index is None:
            index = tuple(nearest_index(xm / 2, self.dx(d), 2**n) for d, (xm, n) in enumerate(zip(x_max, self.n_qubits)))
            object.__setattr__(self, "initial_index", index)
        elif len(self.initial_index) != D or any(not 0 <= i < s for i, s in zip(self.initial_index, self.shape)):
            raise ValueError(f"initial index {self.initial_index} outside grid {self.shape}")

    @property
    def dim(self) -> int:
        return len(self.n_qubits)

    @property
    def total_qubits(self) -> int:
        return sum(self.n_qubits)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(2**n for n in self.n_qubits)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.cumsum((0,) + self.n_qubits[:-1]))

    def marginal(self, d: int) -> ProcessSpec:
        """The one-dimensional process of coordinate d, with sigma^2 expanded."""
        s2 = P.polymul(self.sigma_coeffs[d], self.sigma_coeffs[d])
        return ProcessSpec(self.mu_coeffs[d], tuple(s2), self.n_qubits[d], self.x_max[d])

    def dx(self, d: int) -> float:
        return self.x_max[d] / (2 ** self.n_qubits[d] - 1)

    def sigma(self, d: int, x):
        return P.polyval(x, self.sigma_coeffs[d])

    def initial_lattice(self) -> np.ndarray:
        """Delta at ``initial_index`` on the flattened product grid."""
        p = np.zeros(int(np.prod(self.shape)))
        p[np.ravel_multi_index(self.initial_index, self.shape)] = 1.0
        return p


@dataclass(frozen=True)
class MultiTransitionProbs:
    p_m: float
    p_u: tuple[float, ...]
    p_d: tuple[float, ...]
    p_uu: Mapping[tuple[int, int], float]

    @property
    def total(self) -> float:
        return self.p_m + sum(self.p_u) + sum(self.p_d) + sum(self.p_uu.values())

    @property
    def negative(self) -> bool:
        return min((self.p_m,) + self.p_u + self.p_d + tuple(self.p_uu.values())) < 0


def _rates(spec: MultiProcessSpec, index: Sequence[int]):
    """Per-dimension diffusion and drift rates plus pairwise up-up rates at one multi-index."""
    diff, drift = [], []
    for d, i in enumerate(index):
        m = spec.marginal(d)
        x = m.grid[i]
        diff.append(m.sigma2(x) / m.dx**2)
        drift.append(m.mu(x) / m.dx)
    cross = {}
    for k, l in itertools.combinations(range(spec.dim), 2):
        xk, xl = spec.dx(k) * index[k], spec.dx(l) * index[l]
        cross[(k, l)] = spec.rho[k, l] * spec.sigma(k, xk) * spec.sigma(l, xl) / (spec.dx(k) * spec.dx(l))
    return diff, drift, cross


def _cross_into(cross: Mapping[tuple[int, int], float], d: int) -> float:
    return sum(c for pair, c in cross.items() if d in pair)


def multi_transition_probs(spec: MultiProcessSpec, index: Sequence[int], t: float, dt: float) -> MultiTransitionProbs:
    """Hop probabilities at a multi-index; they sum to 1 and match the conditional mean and covariance."""
    if len(index) != spec.dim or any(not 0 <= i < s for i, s in zip(index, spec.shape)):
        raise IndexError(f"multi-index {tuple(index)} outside grid {spec.shape}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    diff, drift, cross = _rates(spec, index)
    p_u = tuple(float(0.5 * (diff[d] + drift[d]) * dt - _cross_into(cross, d) * dt) for d in range(spec.dim))
    p_d = tuple(float(0.5 * (diff[d] - drift[d]) * dt) for d in range(spec.dim))
    p_uu = {pair: float(c * dt) for pair, c in cross.items()}
    p_m = float(1.0 - sum(diff) * dt + sum(cross.values()) * dt)
    probs = MultiTransitionProbs(p_m, p_u, p_d, p_uu)
    if probs.negative:
        warnings.warn(f"negative transition probability at {tuple(index)}", NegativeProbabilityWarning, stacklevel=2)
    return probs


def build_L_multi_dense(spec: MultiProcessSpec, t: float = 0.0) -> np.ndarray:
    """Generator on the product grid; hops leaving the grid are dropped."""
    if spec.total_qubits > DENSE_CAP:
        raise ValueError(f"dense generator on {spec.total_qubits} qubits exceeds cap {DENSE_CAP}")
    shape = spec.shape
    size = int(np.prod(shape))
    L = np.zeros((size, size))

    def put(target, col, value):
        if all(0 <= j < s for j, s in zip(target, shape)):
            L[np.ravel_multi_index(target, shape), col] += value

    for index in itertools.product(*(range(s) for s in shape)):
        col = np.ravel_multi_index(index, shape)
        diff, drift, cross = _rates(spec, index)
        L[col, col] = -sum(diff) + sum(cross.values())
        for d in range(spec.dim):
            up = list(index)
            up[d] += 1
            put(up, col, 0.5 * (diff[d] + drift[d]) - _cross_into(cross, d))
            down = list(index)
            down[d] -= 1
            put(down, col, 0.5 * (diff[d] - drift[d]))
        for (k, l), c in cross.items():
            both = list(index)
            both[k] += 1
            both[l] += 1
            put(both, col, c)
    return L


def build_L_multi_unitary_sum(spec: MultiProcessSpec, t: float = 0.0) -> UnitarySum:
    """Sum of embedded one-dimensional generators plus correlation terms.

    Each pair contributes rho sigma_k sigma_l / (dx_k dx_l) (V+^(k) - I)(V+^(l) - I),
    with sigma_k sigma_l expanded in powers of D^(k) and D^(l).
    """
    n = spec.total_qubits
    offsets = spec.offsets
    op = UnitarySum.zero(n)
    for d in range(spec.dim):
        op = op + build_L_unitary_sum(spec.marginal(d), t).embed(offsets[d], n)
    for k, l in itertools.combinations(range(spec.dim), 2):
        if spec.rho[k, l] == 0.0:
            continue
        hop_k = (v_plus(spec.n_qubits[k]) - UnitarySum.identity(spec.n_qubits[k])).embed(offsets[k], n)
        hop_l = (v_plus(spec.n_qubits[l]) - UnitarySum.identity(spec.n_qubits[l])).embed(offsets[l], n)
        hops = hop_k @ hop_l
        for mk, ak in enumerate(spec.sigma_coeffs[k]):
            for ml, al in enumerate(spec.sigma_coeffs[l]):
                if ak == 0.0 or al == 0.0:
                    continue
                scale = spec.rho[k, l] * ak * al * spec.dx(k) ** (mk - 1) * spec.dx(l) ** (ml - 1)
                powers = d_operator(spec.n_qubits[k], mk).embed(offsets[k], n) @ d_operator(spec.n_qubits[l], ml).embed(offsets[l], n)
                op = op + scale * (hops @ powers)
    return op


def unitary_sum_term_budget(spec: MultiProcessSpec) -> int:
    """Upper bound on the number of terms before any merging.

    Counts products of V-blocks with Pauli-Z expansions of D^m, which have at
    most sum_{j<=m} C(n, j) terms.
    """
    from math import comb

    def z_terms(nq, m):
        return sum(comb(nq, j) for j in range(min(m, nq) + 1))

    total = 0
    for d in range(spec.dim):
        nq = spec.n_qubits[d]
        s2_deg = 2 * (len(spec.sigma_coeffs[d]) - 1)
        # (V+ + V-)/2 - I: 2*4 + 1 circuits; (V+ - V-)/2: 2*4
        total += 9 * sum(z_terms(nq, m) for m in range(s2_deg + 1))
        total += 8 * sum(z_terms(nq, m) for m in range(len(spec.mu_coeffs[d])))
    for k, l in itertools.combinations(range(spec.dim), 2):
        if spec.rho[k, l] != 0.0:
            zk = sum(z_terms(spec.n_qubits[k], m) for m in range(len(spec.sigma_coeffs[k])))
            zl = sum(z_terms(spec.n_qubits[l], m) for m in range(len(spec.sigma_coeffs[l])))
            total += 9 * zk * zl
    return total


@dataclass(frozen=True)
class MultiPiecewisePoly:
    """Payoff on a product grid of regions.

    ``coeffs[(k_1, ..., k_D)]`` is an array ``c`` with
    ``f = sum c[m_1, ..., m_D] x_1^m_1 ... x_D^m_D`` on that region.  Region
    k in dimension d is ``(a_k, a_{k+1}]`` (closed at 0 for k = 0).
    Regions absent from ``coeffs`` carry f = 0.
    """

    breakpoints: tuple[tuple[float, ...], ...]
    coeffs: Mapping[tuple[int, ...], np.ndarray]

    def __post_init__(self):
        bps = tuple(tuple(float(a) for a in bp) for bp in self.breakpoints)
        for bp in bps:
            if len(bp) < 2 or bp[0] != 0.0 or any(b <= a for a, b in zip(bp, bp[1:])):
                raise ValueError("each dimension needs strictly increasing breakpoints from 0")
        coeffs = {}
        for region, c in self.coeffs.items():
            region = tuple(int(k) for k in region)
            c = np.atleast_1d(np.array(c, dtype=float))
            if len(region) != len(bps) or c.ndim != len(bps):
                raise ValueError("region index and coefficient array must have one axis per dimension")
            if any(not 0 <= k < len(bp) - 1 for k, bp in zip(region, bps)):
                raise ValueError(f"region {region} out of range")
            coeffs[region] = c
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, *xs) -> np.ndarray:
        xs = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in xs))
        regions = [np.searchsorted(np.array(bp[1:-1]), x, side="left") for bp, x in zip(self.breakpoints, xs)]
        out = np.zeros(xs[0].shape)
        for region, c in self.coeffs.items():
            mask = np.logical_and.reduce([r == k for r, k in zip(regions, region)])
            val = np.zeros(int(mask.sum()))
            for m in itertools.product(*(range(s) for s in c.shape)):
                val += c[m] * np.prod([x[mask] ** p for x, p in zip(xs, m)], axis=0)
            out[mask] = val
        return out


def _product(sums: Sequence[UnitarySum], offsets: Sequence[int], n: int) -> UnitarySum:
    op = UnitarySum.identity(n)
    for s, off in zip(sums, offsets):
        op = op @ s.embed(off, n)
    return op


def multi_Sf(f: MultiPiecewisePoly, n_qubits: Sequence[int], dx: Sequence[float]) -> PayoffOperator:
    """S_f on the product grid from tensor products of one-dimensional indicators."""
    n_qubits = tuple(n_qubits)
    if len(n_qubits) != len(f.breakpoints) or len(dx) != len(n_qubits):
        raise ValueError("dimension mismatch between payoff and grid")
    n = sum(n_qubits)
    offsets = tuple(int(v) for v in np.cumsum((0,) + n_qubits[:-1]))
    for bp, nq, h in zip(f.breakpoints, n_qubits, dx):
        if abs(bp[-1] - h * (2**nq - 1)) > 1e-9 * bp[-1]:
            raise ValueError("payoff domain does not match the grid")
        for a in bp[1:-1]:
            if not _on_grid(a, h):
                warnings.warn(f"breakpoint {a} is off the grid; grid points are assigned by x_i <= a",
                              OffGridBreakpointWarning, stacklevel=2)
    grids = np.meshgrid(*(h * np.arange(2**nq) for nq, h in zip(n_qubits, dx)), indexing="ij")
    low = float(np.min(f(*grids)))
    shift = -low if low < 0 else 0.0

    chis = []
    for bp, nq, h in zip(f.breakpoints, n_qubits, dx):
        row = []
        for k in range(len(bp) - 1):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EmptyIntervalWarning)
                empty = k > 0 and _grid_index(bp[k], h) == _grid_index(bp[k + 1], h)
                row.append(UnitarySum.zero(nq) if empty else indicator_interval(bp[k], bp[k + 1], nq, h))
        chis.append(row)

    op = UnitarySum.zero(n)
    for region, c in f.coeffs.items():
        parts = [chis[d][k] for d, k in enumerate(region)]
        if any(not p.terms for p in parts):
            continue
        chi = _product(parts, offsets, n)
        for m in itertools.product(*(range(s) for s in c.shape)):
            if c[m] == 0.0:
                continue
            scale = c[m] * np.prod([h**p for h, p in zip(dx, m)])
            powers = _product([d_operator(nq, p) for nq, p in zip(n_qubits, m)], offsets, n)
            op = op + scale * (powers @ chi)
    if shift:
        op = op + shift * all_ones(n)
    return PayoffOperator(op, shift)
