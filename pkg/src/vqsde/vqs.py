"""McLachlan variational simulation of ``d|v>/dt = L|v>`` for an unnormalised state.

The ansatz is ``|v> = alpha * R(theta)|0>`` where R is an RY/CNOT circuit, so
every amplitude stays real and the embedded vector is read directly as a
probability distribution.  Parameter index 0 is ``alpha``; 1..M are the RY
angles in the order the gates are applied.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .generator import LatticeDistribution, ProcessSpec, build_L_unitary_sum
from .multivar import MultiProcessSpec, build_L_multi_unitary_sum
from .qsim import (
    CNOT,
    RY,
    Circuit,
    Gate,
    StateVector,
    UnitarySum,
    Y,
    estimate_overlap_pair,
    pm1_stderr,
    run_gates,
    to_dense,
)

logger = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-12


class VQSError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnsatzSpec:
    """RY layer followed by ``depth`` blocks of [CNOT ring, RY layer]."""

    n_qubits: int
    depth: int

    def __post_init__(self):
        if self.n_qubits < 1 or self.depth < 0:
            raise ValueError("need n_qubits >= 1 and depth >= 0")

    @property
    def n_params(self) -> int:
        return self.n_qubits * (self.depth + 1)

    def _ring(self) -> list[Gate]:
        n = self.n_qubits
        if n == 1:
            return []
        ring = [CNOT(q, q + 1) for q in range(n - 1)]
        if n > 2:
            ring.append(CNOT(n - 1, 0))
        return ring

    def circuit(self, theta) -> Circuit:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} angles, got {theta.size}")
        n = self.n_qubits
        gates = [RY(q, theta[q]) for q in range(n)]
        for layer in range(1, self.depth + 1):
            gates += self._ring()
            gates += [RY(q, theta[layer * n + q]) for q in range(n)]
        return Circuit(n, tuple(gates))

    def param_positions(self) -> list[int]:
        gates = self.circuit(np.zeros(self.n_params)).gates
        return [i for i, g in enumerate(gates) if g.kind == "RY"]


@dataclass(frozen=True)
class AnsatzState:
    alpha: float
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate(([self.alpha], self.theta))

    @classmethod
    def from_params(cls, params) -> "AnsatzState":
        params = np.asarray(params, dtype=float)
        return cls(params[0], params[1:])


@dataclass(frozen=True)
class McLachlanSystem:
    M: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.shape != (self.V.size, self.V.size):
            raise ValueError("M and V sizes disagree")
        if np.max(np.abs(M - M.T), initial=0.0) > 1e-10:
            raise ValueError("M is not symmetric")


@dataclass(frozen=True)
class Shots:
    """Shot-sampled evaluation: ``count`` shots per Hadamard-test circuit."""

    count: int
    seed: int | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("shot count must be positive")


def _zero(n: int) -> np.ndarray:
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    return psi


def ansatz_vector(spec: AnsatzSpec, state: AnsatzState) -> np.ndarray:
    """alpha * R(theta)|0> as a real array."""
    circ = spec.circuit(state.theta)
    return state.alpha * run_gates(_zero(spec.n_qubits), spec.n_qubits, circ.gates).real


def _derivative_circuit(spec: AnsatzSpec, theta, k: int) -> Circuit:
    """R(theta) with a Y inserted right after the k-th rotation (k >= 1)."""
    circ = spec.circuit(theta)
    pos = spec.param_positions()[k - 1]
    gate = circ.gates[pos]
    return Circuit(spec.n_qubits, circ.gates[: pos + 1] + (Y(gate.targets[0]),) + circ.gates[pos + 1 :])


def _derivative_prefactor(state: AnsatzState, k: int) -> complex:
    # d/dtheta RY(theta) = (-i/2) Y RY(theta)
    return 1.0 if k == 0 else -0.5j * state.alpha


def derivative_states(spec: AnsatzSpec, state: AnsatzState) -> np.ndarray:
    """Rows are d|v>/d(param_k) for k = 0..M (real)."""
    n = spec.n_qubits
    gates = spec.circuit(state.theta).gates
    positions = spec.param_positions()
    prefix = [_zero(n)]
    for g in gates:
        prefix.append(run_gates(prefix[-1], n, (g,)))
    rows = [prefix[-1].real]
    for pos in positions:
        psi = run_gates(prefix[pos + 1], n, (Y(gates[pos].targets[0]),)) * (-0.5j * state.alpha)
        rows.append(run_gates(psi, n, gates[pos + 1 :]).real)
    return np.array(rows)


def derivative_state(spec: AnsatzSpec, state: AnsatzState, k: int) -> StateVector:
    if not 0 <= k <= spec.n_params:
        raise IndexError(f"parameter index {k} outside 0..{spec.n_params}")
    if k == 0:
        circ = spec.circuit(state.theta)
    else:
        circ = _derivative_circuit(spec, state.theta, k)
    amps = _derivative_prefactor(state, k) * run_gates(_zero(spec.n_qubits), spec.n_qubits, circ.gates)
    return StateVector(spec.n_qubits, amps)


def _as_dense(L, n_qubits: int) -> np.ndarray:
    if isinstance(L, UnitarySum):
        if L.n_qubits != n_qubits:
            raise ValueError("generator width does not match the ansatz")
        return to_dense(L).real if L.terms else np.zeros((2**n_qubits, 2**n_qubits))
    L = np.asarray(L)
    if L.shape != (2**n_qubits, 2**n_qubits):
        raise ValueError("generator shape does not match the ansatz")
    return L


def compute_M(spec: AnsatzSpec, state: AnsatzState, mode="exact", return_stderr: bool = False):
    """M_kj = Re <d_k v | d_j v>."""
    if mode == "exact":
        d = derivative_states(spec, state)
        M = d @ d.T
        M = 0.5 * (M + M.T)
        return (M, np.zeros_like(M)) if return_stderr else M
    M, err = _shot_M(spec, state, mode)
    return (M, err) if return_stderr else M


def compute_V(spec: AnsatzSpec, state: AnsatzState, L, mode="exact", return_stderr: bool = False):
    """V_k = Re <d_k v | L | v>; ``L`` is a UnitarySum or a dense matrix (exact mode)."""
    if mode == "exact":
        d = derivative_states(spec, state)
        Lv = _as_dense(L, spec.n_qubits) @ ansatz_vector(spec, state)
        V = d @ Lv
        return (V, np.zeros_like(V)) if return_stderr else V
    if not isinstance(L, UnitarySum):
        raise TypeError("shot mode needs L as a UnitarySum")
    V, err = _shot_V(spec, state, L, mode)
    return (V, err) if return_stderr else V


def _param_circuits(spec: AnsatzSpec, state: AnsatzState) -> list[Circuit]:
    return [spec.circuit(state.theta)] + [
        _derivative_circuit(spec, state.theta, k) for k in range(1, spec.n_params + 1)
    ]


def _shot_M(spec, state, shots: Shots):
    rng = np.random.default_rng(shots.seed)
    circs = _param_circuits(spec, state)
    size = len(circs)
    M = np.zeros((size, size))
    err = np.zeros((size, size))
    for k in range(size):
        ck = _derivative_prefactor(state, k)
        M[k, k] = abs(ck) ** 2
        for j in range(k + 1, size):
            c = np.conj(ck) * _derivative_prefactor(state, j)
            est = estimate_overlap_pair(circs[k], circs[j], shots.count, rng, phase=float(np.angle(c)))
            M[k, j] = M[j, k] = abs(c) * est
            err[k, j] = err[j, k] = abs(c) * pm1_stderr(est, shots.count)
    return M, err


def _shot_V(spec, state, L: UnitarySum, shots: Shots):
    rng = np.random.default_rng(shots.seed)
    circs = _param_circuits(spec, state)
    base = circs[0]
    V = np.zeros(len(circs))
    var = np.zeros(len(circs))
    for k, ck in enumerate(circs):
        pre = np.conj(_derivative_prefactor(state, k)) * state.alpha
        for lam, u in L.terms:
            c = pre * lam
            if c == 0:
                continue
            est = estimate_overlap_pair(ck, base + u, shots.count, rng, phase=float(np.angle(c)))
            V[k] += abs(c) * est
            var[k] += (abs(c) * pm1_stderr(est, shots.count)) ** 2
    return V, np.sqrt(var)


def solve_mclachlan(system: McLachlanSystem, rcond: float = 1e-8) -> np.ndarray:
    """Truncated-SVD solution of M theta_dot = V."""
    u, s, vt = np.linalg.svd(system.M)
    if s.size == 0 or s[0] <= np.finfo(float).tiny:
        raise VQSError("McLachlan matrix has no singular value above the cutoff")
    keep = s > rcond * s[0]
    return vt[keep].T @ ((u[:, keep].T @ system.V) / s[keep])


def _clamp_alpha(params: np.ndarray) -> np.ndarray:
    if params[0] <= 0:
        warnings.warn(f"alpha driven to {params[0]:.3e}; clamped at {ALPHA_FLOOR}", RuntimeWarning, stacklevel=3)
        params = params.copy()
        params[0] = ALPHA_FLOOR
    return params


def vqs_step(system: McLachlanSystem, state: AnsatzState, dt: float, rcond: float = 1e-8) -> AnsatzState:
    """One forward-Euler step of the parameters."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    params = state.params + dt * solve_mclachlan(system, rcond)
    return AnsatzState.from_params(_clamp_alpha(params))


def fit_initial(spec: AnsatzSpec, target, restarts: int = 10, seed=None, tol: float = 1e-10):
    """Least-squares fit of ``alpha R(theta)|0>`` to a target distribution.

    L-BFGS with analytic gradients from the derivative states; the first
    start is theta = 0, the rest are uniform in [-pi, pi).  Returns
    ``(state, residual)`` with the 2-norm residual of the best start.
    """
    p = np.asarray(target.p if isinstance(target, LatticeDistribution) else target, dtype=float)
    if p.size != 2**spec.n_qubits:
        raise ValueError("target length does not match the ansatz")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("target distribution must sum to 1")
    rng = np.random.default_rng(seed)
    alpha0 = float(np.linalg.norm(p))

    def loss(x):
        st = AnsatzState.from_params(x)
        r = ansatz_vector(spec, st) - p
        grad = 2.0 * derivative_states(spec, st) @ r
        return float(r @ r), grad

    best = None
    bounds = [(ALPHA_FLOOR, None)] + [(None, None)] * spec.n_params
    for attempt in range(max(restarts, 1)):
        theta0 = np.zeros(spec.n_params) if attempt == 0 else rng.uniform(-np.pi, np.pi, spec.n_params)
        res = minimize(loss, np.concatenate(([alpha0], theta0)), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 5000, "ftol": 1e-16, "gtol": 1e-12})
        residual = float(np.sqrt(max(res.fun, 0.0)))
        if best is None or residual < best[1]:
            best = (AnsatzState.from_params(res.x), residual)
        if best[1] < tol:
            break
    logger.debug("fit_initial residual %.3e after %d starts", best[1], attempt + 1)
    return best


@dataclass(frozen=True)
class StepRecord:
    t: float
    state: AnsatzState
    distribution: LatticeDistribution
    min_amplitude: float
    rank: int


@dataclass
class SimulationResult:
    records: list[StepRecord]
    fit_residual: float
    warnings: list[str] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def distributions(self) -> np.ndarray:
        return np.array([r.distribution.p for r in self.records])


def _n_steps(T: float, dt: float) -> int:
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    return n


def simulate(
    process: ProcessSpec | MultiProcessSpec,
    ansatz: AnsatzSpec,
    T: float,
    dt: float = 0.005,
    mode="exact",
    *,
    initial_state: AnsatzState | None = None,
    restarts: int = 20,
    seed=None,
    rcond: float = 1e-8,
    integrator: str = "euler",
) -> SimulationResult:
    """Evolve the fitted initial distribution to time ``T``.

    ``mode`` is ``"exact"`` or a :class:`Shots`.  ``integrator`` is
    ``"euler"`` (default) or ``"rk4"`` on the parameters.  A
    :class:`MultiProcessSpec` runs on its full product register.
    """
    if isinstance(process, MultiProcessSpec):
        width, build = process.total_qubits, build_L_multi_unitary_sum
    else:
        width, build = process.n_qubits, build_L_unitary_sum
    if ansatz.n_qubits != width:
        raise ValueError("ansatz and process widths differ")
    if integrator not in ("euler", "rk4"):
        raise ValueError(f"unknown integrator {integrator!r}")
    steps = _n_steps(T, dt)
    notes: list[str] = []
    if initial_state is None:
        initial_state, residual = fit_initial(ansatz, process.initial_lattice(), restarts, seed)
    else:
        residual = float(np.linalg.norm(ansatz_vector(ansatz, initial_state) - process.initial_lattice()))

    shot_seeds = None
    if isinstance(mode, Shots):
        shot_seeds = np.random.SeedSequence(mode.seed).spawn(steps * 4)
    elif mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")

    cache: dict = {}

    def generator(t):
        key = None if process.schedule is None else t
        if key not in cache:
            op = build(process, t)
            cache.clear()
            cache[key] = (op, _as_dense(op, width) if mode == "exact" else None)
        return cache[key]

    def velocity(state: AnsatzState, t: float, call: int):
        op, dense = generator(t)
        if mode == "exact":
            system = McLachlanSystem(compute_M(ansatz, state), compute_V(ansatz, state, dense))
        else:
            seed_m, seed_v = (int(v) for v in shot_seeds[call].generate_state(2))
            s1, s2 = Shots(mode.count, seed_m), Shots(mode.count, seed_v)
            system = McLachlanSystem(compute_M(ansatz, state, s1), compute_V(ansatz, state, op, s2))
        rank = int(np.sum(np.linalg.svd(system.M, compute_uv=False) > rcond * np.linalg.norm(system.M, 2)))
        return solve_mclachlan(system, rcond), rank

    def record(t, state, rank):
        vec = ansatz_vector(ansatz, state)
        return StepRecord(t, state, LatticeDistribution(vec, t), float(vec.min()), rank)

    state = initial_state
    records = []
    for step in range(steps):
        t = step * dt
        try:
            if integrator == "euler":
                k1, rank = velocity(state, t, 4 * step)
                params = state.params + dt * k1
            else:
                k1, rank = velocity(state, t, 4 * step)
                k2, _ = velocity(AnsatzState.from_params(state.params + 0.5 * dt * k1), t + 0.5 * dt, 4 * step + 1)
                k3, _ = velocity(AnsatzState.from_params(state.params + 0.5 * dt * k2), t + 0.5 * dt, 4 * step + 2)
                k4, _ = velocity(AnsatzState.from_params(state.params + dt * k3), t + dt, 4 * step + 3)
                params = state.params + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        except VQSError as exc:
            raise VQSError(f"step {step} (t={t:g}): {exc}") from exc
        records.append(record(t, state, rank))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            params = _clamp_alpha(params)
        notes.extend(f"step {step}: {w.message}" for w in caught)
        state = AnsatzState.from_params(params)
    last_rank = records[-1].rank if records else 0
    records.append(record(steps * dt, state, last_rank))
    negative = min(r.min_amplitude for r in records)
    if negative < -1e-12:
        notes.append(f"minimum embedded amplitude {negative:.3e}")
    return SimulationResult(records, residual, notes)
