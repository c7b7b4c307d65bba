"""Expectation values E[f(X)] from a directly embedded distribution.

A payoff f is written as piecewise polynomials and turned into a sum of
circuits ``S_f`` with ``S_f|0> = sum_i f(x_i)|i>``.  Then
``<psi|S_f|0><0|S_f^dagger|psi> = E[f]^2`` for the unnormalised state
``|psi> = sum_i P(x_i)|i>``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .generator import d_operator
from .qsim import (
    CNZ,
    Circuit,
    H,
    StateVector,
    UnitarySum,
    X,
    apply_unitary_sum,
    estimate_overlap_hadamard,
    pm1_stderr,
)

_GRID_TOL = 1e-9


class ExpectationError(ValueError):
    pass


class OffGridBreakpointWarning(UserWarning):
    pass


class EmptyIntervalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PiecewisePoly:
    """f(x) = sum_m coeffs[k][m] x^m on the k-th interval.

    The first interval is ``[a_0, a_1]`` and the rest are ``(a_k, a_{k+1}]``.
    """

    breakpoints: tuple[float, ...]
    coeffs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        cf = tuple(tuple(float(c) for c in row) for row in self.coeffs)
        if len(bp) < 2 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0 and contain at least one interval")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(cf) != len(bp) - 1 or any(len(row) == 0 for row in cf):
            raise ValueError("need one nonempty coefficient list per interval")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "coeffs", cf)

    @property
    def n_intervals(self) -> int:
        return len(self.coeffs)

    @property
    def degree(self) -> int:
        return max(len(row) for row in self.coeffs) - 1

    def interval_of(self, x) -> np.ndarray:
        return np.searchsorted(np.array(self.breakpoints[1:-1]), np.asarray(x, dtype=float), side="left")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self.interval_of(x)
        out = np.empty_like(x)
        for idx, row in enumerate(self.coeffs):
            mask = k == idx
            out[mask] = P.polyval(x[mask], row)
        return out

    def shifted(self, c: float) -> "PiecewisePoly":
        rows = tuple((row[0] + c,) + row[1:] for row in self.coeffs)
        return PiecewisePoly(self.breakpoints, rows)


def call_payoff(strike: float, x_max: float) -> PiecewisePoly:
    """max(x - K, 0) as two linear pieces."""
    if not 0 < strike < x_max:
        raise ValueError("strike must lie strictly inside (0, x_max)")
    return PiecewisePoly((0.0, strike, x_max), ((0.0,), (-strike, 1.0)))


def piecewise_taylor(derivatives: Sequence[Callable], d: int, x_max: float) -> PiecewisePoly:
    """Order-L Taylor expansion of f about the left end of each of ``d`` equal intervals.

    ``derivatives[m]`` evaluates the m-th derivative of f, so L = len - 1.
    """
    h = x_max / d
    rows = []
    for k in range(d):
        a = k * h
        row = np.zeros(len(derivatives))
        for m, fm in enumerate(derivatives):
            row += np.pad(fm(a) / math.factorial(m) * P.polypow([-a, 1.0], m), (0, len(derivatives) - m - 1))
        rows.append(tuple(row))
    return PiecewisePoly(tuple(k * h for k in range(d)) + (x_max,), tuple(rows))


def _grid_index(a: float, dx: float) -> int:
    return int(math.floor(a / dx + _GRID_TOL))


def _on_grid(a: float, dx: float) -> bool:
    r = a / dx
    return abs(r - round(r)) <= _GRID_TOL * max(1.0, abs(r))


def indicator_prefix(a: float, n: int, dx: float) -> UnitarySum:
    """S with ``S|0> = sum_{x_i <= a} |i>`` as dyadic blocks of X/H products.

    Writing ``floor(a/dx) + 1`` in binary, each set bit j contributes one block
    of 2^j consecutive indices: X on the fixed high bits, H on the j free low
    bits, weight 2^(j/2).
    """
    x_max = dx * (2**n - 1)
    if a < -_GRID_TOL * dx or a > x_max * (1 + _GRID_TOL):
        raise ValueError(f"a={a} outside [0, {x_max}]")
    count = min(_grid_index(max(a, 0.0), dx), 2**n - 1) + 1
    terms = []
    start = 0
    for j in range(n, -1, -1):
        if not count >> j & 1:
            continue
        gates = []
        for q in range(n):
            bit = n - 1 - q
            if bit < j:
                gates.append(H(q))
            elif start >> bit & 1:
                gates.append(X(q))
        terms.append((2.0 ** (j / 2), Circuit(n, tuple(gates))))
        start += 2**j
    return UnitarySum(n, tuple(terms))


def indicator_interval(a_lo: float, a_hi: float, n: int, dx: float) -> UnitarySum:
    """Indicator of ``a_lo < x_i <= a_hi``; an interval starting at 0 also includes x_0."""
    if not 0 <= a_lo < a_hi:
        raise ValueError("need 0 <= a_lo < a_hi")
    upper = indicator_prefix(a_hi, n, dx)
    if a_lo <= 0:
        return upper
    if _grid_index(a_lo, dx) == _grid_index(a_hi, dx):
        warnings.warn(f"interval ({a_lo}, {a_hi}] contains no grid point", EmptyIntervalWarning, stacklevel=2)
        return UnitarySum.zero(n)
    return upper - indicator_prefix(a_lo, n, dx)


@dataclass(frozen=True)
class PayoffOperator:
    """``S_f`` for ``f + shift``; the shift keeps every grid value nonnegative."""

    op: UnitarySum
    shift: float = 0.0

    @property
    def n_qubits(self) -> int:
        return self.op.n_qubits

    def vector(self) -> np.ndarray:
        """S_f|0> (values of the shifted payoff)."""
        if not self.op.terms:
            return np.zeros(2**self.n_qubits)
        return apply_unitary_sum(StateVector.zero(self.n_qubits), self.op).amplitudes.real


def build_Sf(f: PiecewisePoly, n: int, dx: float) -> PayoffOperator:
    """S_f = sum_k sum_m a_m^(k) dx^m D^m S_chi_k, shifted so that f >= 0 on the grid.

    D supplies index powers i^m, hence the dx^m factor to obtain x_i^m.
    """
    x_max = dx * (2**n - 1)
    if abs(f.breakpoints[-1] - x_max) > _GRID_TOL * x_max:
        raise ValueError(f"payoff domain ends at {f.breakpoints[-1]}, grid at {x_max}")
    for a in f.breakpoints[1:-1]:
        if not _on_grid(a, dx):
            warnings.warn(f"breakpoint {a} is off the grid; grid points are assigned by x_i <= a",
                          OffGridBreakpointWarning, stacklevel=2)
    low = float(np.min(f(dx * np.arange(2**n))))
    shift = -low if low < 0 else 0.0
    g = f.shifted(shift) if shift else f
    powers = [d_operator(n, m) for m in range(g.degree + 1)]
    op = UnitarySum.zero(n)
    bp = g.breakpoints
    for k, row in enumerate(g.coeffs):
        if k > 0 and _grid_index(bp[k], dx) == _grid_index(bp[k + 1], dx):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyIntervalWarning)
            chi = indicator_interval(bp[k], bp[k + 1], n, dx)
        if not chi.terms:
            continue
        for m, a in enumerate(row):
            if a != 0.0:
                op = op + (a * dx**m) * (powers[m] @ chi)
    return PayoffOperator(op, shift)


def _as_payoff(Sf) -> PayoffOperator:
    return Sf if isinstance(Sf, PayoffOperator) else PayoffOperator(Sf, 0.0)


def _amplitudes(psi) -> np.ndarray:
    return psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi, dtype=complex)


def expectation_exact(psi, Sf) -> float:
    """sqrt(<psi|S_f|0><0|S_f^dagger|psi>) with the payoff shift removed."""
    Sf = _as_payoff(Sf)
    amps = _amplitudes(psi)
    s = apply_unitary_sum(StateVector.zero(Sf.n_qubits), Sf.op).amplitudes if Sf.op.terms else np.zeros_like(amps)
    radicand = float(np.real(np.vdot(amps, s) * np.vdot(s, amps)))
    if radicand < -1e-12:
        raise ExpectationError(f"negative radicand {radicand}")
    overlap = float(np.real(np.vdot(s, amps)))
    if overlap < -1e-12:
        raise ExpectationError(f"shifted payoff has negative expectation {overlap}; state is corrupt")
    value = math.sqrt(max(radicand, 0.0))
    if Sf.shift:
        value -= Sf.shift * float(np.sum(amps.real))
    return value


def zero_projector(n: int) -> UnitarySum:
    """|0><0| = (I - X^n C^nZ X^n) / 2."""
    flips = tuple(X(q) for q in range(n))
    w = Circuit(n, flips + (CNZ(tuple(range(n))),) + flips)
    return UnitarySum(n, ((0.5, Circuit(n)), (-0.5, w)))


def observable_decomposition(Sf) -> UnitarySum:
    """S_f|0><0|S_f^dagger = sum_{i,i'} xi_i xi_i'^* Q_i |0><0| Q_i'^dagger as unitaries (unmerged)."""
    op = _as_payoff(Sf).op
    n = op.n_qubits
    proj = zero_projector(n)
    terms = []
    for ci, qi in op.terms:
        for cj, qj in op.terms:
            for cp, w in proj.terms:
                terms.append((ci * np.conj(cj) * cp, qj.inverse() + w + qi))
    return UnitarySum(n, tuple(terms))


def _sampled_radicand(prep: Circuit, op: UnitarySum, shots: int, rng) -> tuple[float, float]:
    """<psi|S_f|0><0|S_f^dagger|psi> for normalised psi = prep|0>, with its standard error.

    The pair (i, i') and (i', i) give conjugate expectations, so each
    unordered pair is measured once and counted twice.
    """
    n = op.n_qubits
    proj = zero_projector(n)
    total, var = 0.0, 0.0
    for a, (ci, qi) in enumerate(op.terms):
        for b in range(a, len(op.terms)):
            cj, qj = op.terms[b]
            weight = 1.0 if a == b else 2.0
            for cp, w in proj.terms:
                c = weight * ci * np.conj(cj) * cp
                if c == 0:
                    continue
                u = qj.inverse() + w + qi
                est = estimate_overlap_hadamard(prep, u, shots, "real", rng, phase=float(np.angle(c)))
                total += abs(c) * est
                var += (abs(c) * pm1_stderr(est, shots)) ** 2
    return total, math.sqrt(var)


def expectation_sampled(prep: Circuit, alpha: float, Sf, shots_per_term: int, seed=None) -> tuple[float, float]:
    """Hadamard-test estimate of E[f] for the state ``alpha * prep|0>``.

    Returns ``(estimate, stderr)``; the standard error is propagated through
    the square root by the delta method.
    """
    Sf = _as_payoff(Sf)
    if shots_per_term < 1:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng(seed)
    est, se = _sampled_root(prep, alpha, Sf.op, shots_per_term, rng)
    if Sf.shift:
        mass, mass_se = _sampled_root(prep, alpha, all_ones(Sf.n_qubits), shots_per_term, rng)
        est -= Sf.shift * mass
        se = math.hypot(se, Sf.shift * mass_se)
    return est, se


def all_ones(n: int) -> UnitarySum:
    """S with S|0> = sum_i |i>."""
    return UnitarySum(n, ((2.0 ** (n / 2), Circuit(n, tuple(H(q) for q in range(n)))),))


def _sampled_root(prep, alpha, op, shots, rng) -> tuple[float, float]:
    if prep.n_qubits != op.n_qubits:
        raise ValueError("state preparation and payoff act on different widths")
    rad, rad_se = _sampled_radicand(prep, op, shots, rng)
    alpha = float(alpha)
    rad *= alpha**2
    rad_se *= alpha**2
    value = math.sqrt(max(rad, 0.0))
    if value > 0:
        se = rad_se / (2 * value)
    else:
        se = math.sqrt(rad_se)
    return value, se


def prepare_real_state(vector) -> tuple[Circuit, float]:
    """Circuit of (multi-)controlled RY gates preparing ``vector / ||vector||``; returns (circuit, norm).

    Binary-tree amplitude encoding: level q splits each block's weight between
    its halves; the last level uses signed amplitudes so negative entries are
    reproduced.
    """
    from .qsim import RY, ControlledU

    v = np.asarray(vector, dtype=float)
    n = int(round(math.log2(v.size)))
    if 2**n != v.size:
        raise ValueError("vector length must be a power of two")
    norm = float(np.linalg.norm(v))
    if norm == 0:
        raise ValueError("cannot prepare the zero vector")
    v = v / norm
    gates = []
    for q in range(n):
        blocks = v.reshape(2**q, 2, -1)
        for prefix in range(2**q):
            left, right = blocks[prefix, 0], blocks[prefix, 1]
            if q == n - 1:
                theta = 2 * math.atan2(right[0], left[0])
            else:
                theta = 2 * math.atan2(np.linalg.norm(right), np.linalg.norm(left))
            if theta == 0.0:
                continue
            flips = [X(c) for c in range(q) if not prefix >> (q - 1 - c) & 1]
            rot = RY(q, theta) if q == 0 else ControlledU((RY(q, theta),), tuple(range(q)))
            gates += flips + [rot] + flips
    return Circuit(n, tuple(gates)), norm


@dataclass(frozen=True)
class MeasurementBudget:
    gamma: float
    epsilon_per_term: float
    n_unitaries: int
    shots_per_term: int
    hadamard_shots_total: int
    qpe_depth: int
    qpe_measurements_per_term: int
    qpe_measurements_total: int


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9 * max(1.0, x)))


def measurement_budget(E_est: float, distribution, epsilon: float, xi=None, beta=None) -> MeasurementBudget:
    """Per-term precision and shot counts to reach error ``epsilon`` on E.

    gamma = 2E / (sum_j p_j^2 * sum_i |beta_i|) and the per-term precision is
    gamma * epsilon.  Per-term Hadamard shots are ceil(1 / (gamma eps)^2),
    which scales as gamma^-2; an O(1/(gamma eps^2)) total, as sometimes
    quoted, undercounts by a factor of gamma.  QPE figures are order-of-
    magnitude estimates.

    Give either ``xi`` (the S_f coefficients; beta then comes from the
    two-unitary |0><0| split, so sum|beta| = (sum|xi|)^2) or ``beta``.
    """
    if epsilon <= 0 or E_est <= 0:
        raise ValueError("epsilon and E_est must be positive")
    if beta is None:
        if xi is None:
            raise ValueError("give xi or beta")
        xi = np.abs(np.asarray(xi, dtype=complex))
        beta_abs = float(np.sum(xi)) ** 2
        n_unitaries = 2 * xi.size**2
    else:
        beta = np.abs(np.asarray(beta, dtype=complex))
        beta_abs = float(np.sum(beta))
        n_unitaries = beta.size
    if beta_abs == 0:
        raise ValueError("sum of |beta| is zero")
    p = np.asarray(getattr(distribution, "p", distribution), dtype=float)
    gamma = 2.0 * E_est / (float(np.sum(p**2)) * beta_abs)
    eps_term = gamma * epsilon
    per_term = _ceil(1.0 / eps_term**2)
    qpe_per_term = max(1, _ceil(math.log2(1.0 / eps_term))) if eps_term < 1 else 1
    return MeasurementBudget(
        gamma=gamma,
        epsilon_per_term=eps_term,
        n_unitaries=n_unitaries,
        shots_per_term=per_term,
        hadamard_shots_total=n_unitaries * per_term,
        qpe_depth=max(1, _ceil(1.0 / eps_term)),
        qpe_measurements_per_term=qpe_per_term,
        qpe_measurements_total=n_unitaries * qpe_per_term,
    )


def poly_error_bound(f_true: Callable | None, d: int, L: int, x_max: float,
                     derivative_bound: float | None = None) -> float:
    """Bound sup|f^(L+1)| h^(L+1) / (L+1)! on |E_f - E_g| for order-L pieces of width h = x_max/d.

    Without ``derivative_bound`` the supremum is estimated from finite
    differences of ``f_true`` on a fine grid.
    """
    if d < 1 or L < 0:
        raise ValueError("need d >= 1 and L >= 0")
    if derivative_bound is None:
        if f_true is None:
            raise ValueError("need f_true or derivative_bound")
        x = np.linspace(0.0, x_max, 4097)
        step = x[1] - x[0]
        diffs = np.diff(np.asarray(f_true(x), dtype=float), n=L + 1) / step ** (L + 1)
        derivative_bound = float(np.max(np.abs(diffs)))
    h = x_max / d
    return derivative_bound * h ** (L + 1) / math.factorial(L + 1)
