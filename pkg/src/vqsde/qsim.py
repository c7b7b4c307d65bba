"""Statevector backend: gates, circuits, sums of unitaries and Hadamard tests.

Qubit 0 is the most significant bit of the computational-basis index, so for
``n = 2`` the basis state ``|2>`` is ``|10>``.  Every other module relies on
this ordering.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DENSE_CAP = 10

_SQRT_HALF = 1.0 / np.sqrt(2.0)

_FIXED_MATRICES = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF,
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
}

# kinds whose action is a 2x2 matrix on a single target (optionally controlled)
_SINGLE_TARGET = {"X", "Y", "Z", "H", "S", "SDG", "RY", "P", "CNOT", "TOFFOLI", "MCX"}
_SELF_INVERSE = {"X", "Y", "Z", "H", "CNOT", "TOFFOLI", "MCX", "CNZ"}


class QubitIndexError(IndexError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    """A gate acting on ``targets`` conditioned on every qubit in ``controls`` being 1.

    ``kind`` is one of X, Y, Z, H, S, SDG, RY, P, CNOT, TOFFOLI, MCX, CNZ or CU.
    CNZ flips the sign of the all-ones state of ``targets``; CU applies the
    gates in ``inner`` under the extra ``controls``.
    """

    kind: str
    targets: tuple[int, ...]
    controls: tuple[int, ...] = ()
    angle: float | None = None
    inner: tuple["Gate", ...] = ()

    def __post_init__(self):
        if self.kind not in _SINGLE_TARGET | {"CNZ", "CU"}:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if set(self.targets) & set(self.controls):
            raise ValueError(f"{self.kind}: targets {self.targets} overlap controls {self.controls}")
        if len(set(self.controls)) != len(self.controls):
            raise ValueError(f"{self.kind}: repeated control qubit")
        if self.kind in _SINGLE_TARGET and len(self.targets) != 1:
            raise ValueError(f"{self.kind} takes exactly one target")
        if self.kind in ("RY", "P") and self.angle is None:
            raise ValueError(f"{self.kind} needs an angle")

    @property
    def qubits(self) -> tuple[int, ...]:
        if self.kind == "CU":
            inner = {q for g in self.inner for q in g.qubits}
            return tuple(sorted(inner | set(self.controls)))
        return tuple(self.controls) + tuple(self.targets)

    def matrix(self) -> np.ndarray:
        """2x2 matrix applied to the target (single-target kinds only)."""
        base = {"CNOT": "X", "TOFFOLI": "X", "MCX": "X"}.get(self.kind, self.kind)
        if base == "RY":
            c, s = np.cos(self.angle / 2), np.sin(self.angle / 2)
            return np.array([[c, -s], [s, c]], dtype=complex)
        if base == "P":
            return np.array([[1, 0], [0, np.exp(1j * self.angle)]], dtype=complex)
        return _FIXED_MATRICES[base]

    def inverse(self) -> "Gate":
        if self.kind in _SELF_INVERSE:
            return self
        if self.kind in ("RY", "P"):
            return Gate(self.kind, self.targets, self.controls, -self.angle)
        if self.kind == "S":
            return Gate("SDG", self.targets, self.controls)
        if self.kind == "SDG":
            return Gate("S", self.targets, self.controls)
        return Gate("CU", (), self.controls, inner=tuple(g.inverse() for g in reversed(self.inner)))

    def remap(self, mapping) -> "Gate":
        return Gate(
            self.kind,
            tuple(mapping(q) for q in self.targets),
            tuple(mapping(q) for q in self.controls),
            self.angle,
            tuple(g.remap(mapping) for g in self.inner),
        )


def X(q):
    return Gate("X", (q,))


def Y(q):
    return Gate("Y", (q,))


def Z(q):
    return Gate("Z", (q,))


def H(q):
    return Gate("H", (q,))


def S(q):
    return Gate("S", (q,))


def Sdg(q):
    return Gate("SDG", (q,))


def RY(q, theta):
    return Gate("RY", (q,), angle=float(theta))


def Phase(q, phi):
    return Gate("P", (q,), angle=float(phi))


def CNOT(control, target):
    return Gate("CNOT", (target,), (control,))


def Toffoli(c1, c2, target):
    return Gate("TOFFOLI", (target,), (c1, c2))


def MCX(controls: Sequence[int], target: int) -> Gate:
    controls = tuple(controls)
    if len(controls) == 0:
        return X(target)
    if len(controls) == 1:
        return CNOT(controls[0], target)
    if len(controls) == 2:
        return Toffoli(controls[0], controls[1], target)
    return Gate("MCX", (target,), controls)


def CNZ(qubits: Sequence[int]) -> Gate:
    """Phase -1 on the state where every listed qubit is 1."""
    return Gate("CNZ", tuple(qubits))


def ControlledU(inner: Iterable[Gate], controls: Sequence[int]) -> Gate:
    return Gate("CU", (), tuple(controls), inner=tuple(inner))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...] = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("a circuit needs at least one qubit")
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise QubitIndexError(f"{g.kind} touches qubit {q} on {self.n_qubits} qubits")

    def __add__(self, other: "Circuit") -> "Circuit":
        """Run ``self`` first, then ``other``."""
        if other.n_qubits != self.n_qubits:
            raise DimensionError("circuit widths differ")
        return Circuit(self.n_qubits, self.gates + other.gates)

    def __len__(self):
        return len(self.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(g.inverse() for g in reversed(self.gates)))

    def remap(self, mapping, n_qubits: int) -> "Circuit":
        return Circuit(n_qubits, tuple(g.remap(mapping) for g in self.gates))

    def embed(self, offset: int, n_qubits: int) -> "Circuit":
        return self.remap(lambda q: q + offset, n_qubits)

    def controlled(self, controls: Sequence[int], n_qubits: int | None = None) -> "Circuit":
        """Each gate gains ``controls``; the register is widened to ``n_qubits``."""
        width = self.n_qubits if n_qubits is None else n_qubits
        return Circuit(width, tuple(ControlledU((g,), controls) for g in self.gates))

    def matrix(self, cap: int = DENSE_CAP) -> np.ndarray:
        _check_cap(self.n_qubits, cap)
        dim = 2**self.n_qubits
        block = np.eye(dim, dtype=complex).reshape((2,) * self.n_qubits + (dim,))
        return _run(block, self.gates).reshape(dim, dim)


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != 2**self.n_qubits:
            raise DimensionError(f"{amps.size} amplitudes for {self.n_qubits} qubits")
        if self.normalized:
            norm2 = float(np.vdot(amps, amps).real)
            if abs(norm2 - 1.0) > 1e-10:
                raise ValueError(f"state flagged normalized has squared norm {norm2}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        return cls.basis(n_qubits, 0)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps, normalized=True)

    @classmethod
    def from_vector(cls, vector) -> "StateVector":
        vector = np.asarray(vector)
        n = int(round(np.log2(vector.size)))
        return cls(n, vector)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def __len__(self):
        return self.amplitudes.size


@dataclass(frozen=True)
class UnitarySum:
    """The operator ``sum_k coeff_k * U_k`` with each ``U_k`` given as a circuit."""

    n_qubits: int
    terms: tuple[tuple[complex, Circuit], ...] = field(default=())

    def __post_init__(self):
        terms = tuple((complex(c), circ) for c, circ in self.terms)
        for _, circ in terms:
            if circ.n_qubits != self.n_qubits:
                raise DimensionError(f"term on {circ.n_qubits} qubits in a {self.n_qubits}-qubit sum")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def identity(cls, n_qubits: int, coeff: complex = 1.0) -> "UnitarySum":
        return cls(n_qubits, ((coeff, Circuit(n_qubits)),))

    @classmethod
    def from_circuit(cls, circuit: Circuit, coeff: complex = 1.0) -> "UnitarySum":
        return cls(circuit.n_qubits, ((coeff, circuit),))

    @classmethod
    def zero(cls, n_qubits: int) -> "UnitarySum":
        return cls(n_qubits, ())

    def __len__(self):
        return len(self.terms)

    def __add__(self, other: "UnitarySum") -> "UnitarySum":
        if other.n_qubits != self.n_qubits:
            raise DimensionError("sum widths differ")
        return UnitarySum(self.n_qubits, self.terms + other.terms).simplify()

    def __neg__(self) -> "UnitarySum":
        return self * -1.0

    def __sub__(self, other: "UnitarySum") -> "UnitarySum":
        return self + (-other)

    def __mul__(self, scalar) -> "UnitarySum":
        return UnitarySum(self.n_qubits, tuple((scalar * c, circ) for c, circ in self.terms))

    __rmul__ = __mul__

    def __matmul__(self, other: "UnitarySum") -> "UnitarySum":
        """Operator product: ``(A @ B)|psi> = A(B|psi>)``."""
        if other.n_qubits != self.n_qubits:
            raise DimensionError("product widths differ")
        terms = [(ca * cb, cb_circ + ca_circ) for ca, ca_circ in self.terms for cb, cb_circ in other.terms]
        return UnitarySum(self.n_qubits, tuple(terms)).simplify()

    def simplify(self, atol: float = 0.0) -> "UnitarySum":
        """Merge terms with identical gate sequences and drop vanishing coefficients."""
        merged: dict[tuple[Gate, ...], complex] = {}
        for c, circ in self.terms:
            merged[circ.gates] = merged.get(circ.gates, 0.0) + c
        terms = tuple(
            (c, Circuit(self.n_qubits, gates)) for gates, c in merged.items() if abs(c) > atol
        )
        return UnitarySum(self.n_qubits, terms)

    def adjoint(self) -> "UnitarySum":
        return UnitarySum(self.n_qubits, tuple((np.conj(c), circ.inverse()) for c, circ in self.terms))

    def embed(self, offset: int, n_qubits: int) -> "UnitarySum":
        return UnitarySum(n_qubits, tuple((c, circ.embed(offset, n_qubits)) for c, circ in self.terms))

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms], dtype=complex)

    @property
    def gate_count(self) -> int:
        return sum(len(circ) for _, circ in self.terms)


def _check_cap(n_qubits: int, cap: int) -> None:
    if n_qubits > cap:
        raise ValueError(f"dense expansion of {n_qubits} qubits exceeds cap {cap}")


def _apply_matrix(psi: np.ndarray, mat: np.ndarray, target: int, controls: Sequence[int]) -> None:
    """In-place 2x2 ``mat`` on axis ``target`` of the slice where all ``controls`` are 1."""
    if controls:
        index = [slice(None)] * psi.ndim
        for c in controls:
            index[c] = 1
        index = tuple(index)
        sub = psi[index]
        axis = target - sum(1 for c in controls if c < target)
    else:
        index = Ellipsis
        sub = psi
        axis = target
    out = np.tensordot(mat, sub, axes=([1], [axis]))
    psi[index] = np.moveaxis(out, 0, axis)


def _apply_gate(psi: np.ndarray, gate: Gate, extra: tuple[int, ...] = ()) -> None:
    controls = tuple(gate.controls) + extra
    if gate.kind == "CU":
        for g in gate.inner:
            _apply_gate(psi, g, controls)
    elif gate.kind == "CNZ":
        index = [slice(None)] * psi.ndim
        for q in controls + gate.targets:
            index[q] = 1
        psi[tuple(index)] *= -1
    else:
        _apply_matrix(psi, gate.matrix(), gate.targets[0], controls)


def _run(tensor: np.ndarray, gates: Iterable[Gate]) -> np.ndarray:
    psi = np.array(tensor, dtype=complex)
    for g in gates:
        _apply_gate(psi, g)
    return psi


def run_gates(amplitudes: np.ndarray, n_qubits: int, gates: Iterable[Gate]) -> np.ndarray:
    """Apply gates to a raw amplitude vector (no validation); returns a new vector."""
    psi = _run(np.reshape(amplitudes, (2,) * n_qubits), gates)
    return psi.reshape(-1)


def apply_circuit(state: StateVector, circuit: Circuit) -> StateVector:
    if state.n_qubits != circuit.n_qubits:
        raise DimensionError(f"state has {state.n_qubits} qubits, circuit {circuit.n_qubits}")
    out = run_gates(state.amplitudes, state.n_qubits, circuit.gates)
    return StateVector(state.n_qubits, out)


def apply_unitary_sum(state: StateVector, op: UnitarySum) -> StateVector:
    if not op.terms:
        raise ValueError("unitary sum has no terms")
    if state.n_qubits != op.n_qubits:
        raise DimensionError(f"state has {state.n_qubits} qubits, operator {op.n_qubits}")
    out = np.zeros_like(state.amplitudes)
    for c, circ in op.terms:
        out += c * run_gates(state.amplitudes, state.n_qubits, circ.gates)
    return StateVector(state.n_qubits, out)


def inner_product(a: StateVector, b: StateVector) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    if a.n_qubits != b.n_qubits:
        raise DimensionError("inner product of states with different widths")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def to_dense(op: UnitarySum | Circuit, cap: int = DENSE_CAP) -> np.ndarray:
    if isinstance(op, Circuit):
        return op.matrix(cap)
    _check_cap(op.n_qubits, cap)
    dim = 2**op.n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for c, circ in op.terms:
        out += c * circ.matrix(cap)
    return out


def _ancilla_zero_probability(psi: np.ndarray, n_qubits: int) -> float:
    # ancilla is the last (least significant) qubit of an (n+1)-qubit register
    p0 = float(np.sum(np.abs(psi.reshape(2**n_qubits, 2)[:, 0]) ** 2))
    return min(max(p0, 0.0), 1.0)


def _sample_pm1(p0: float, shots: int, rng) -> float:
    if shots < 1:
        raise ValueError("shots must be positive")
    rng = np.random.default_rng(rng)
    k = rng.binomial(shots, p0)
    return 2.0 * k / shots - 1.0


def hadamard_test_probability(prep: Circuit, u: Circuit, part: str = "real", phase: float = 0.0) -> float:
    """Exact probability of reading 0 on the ancilla of the Hadamard-test circuit."""
    if part not in ("real", "imag", "imaginary"):
        raise ValueError(f"part must be 'real' or 'imag', got {part!r}")
    if prep.n_qubits != u.n_qubits:
        raise DimensionError("prep and U act on different widths")
    n = prep.n_qubits
    anc = n
    gates = list(prep.gates) + [H(anc)]
    if phase:
        gates.append(Phase(anc, phase))
    gates += list(u.controlled((anc,), n + 1).gates)
    if part != "real":
        gates.append(Sdg(anc))
    gates.append(H(anc))
    circ = Circuit(n + 1, tuple(gates))
    psi = np.zeros(2 ** (n + 1), dtype=complex)
    psi[0] = 1.0
    return _ancilla_zero_probability(run_gates(psi, n + 1, circ.gates), n)


def estimate_overlap_hadamard(
    prep: Circuit,
    u: Circuit,
    shots: int,
    part: str = "real",
    rng_seed=None,
    phase: float = 0.0,
) -> float:
    """Shot estimate of Re (or Im) of ``e^{i phase} <psi|U|psi>`` with ``|psi> = prep|0>``.

    The ancilla starts in ``(|0> + e^{i phase}|1>)/sqrt(2)``, controls U, and is
    measured after a final H (preceded by S^dagger for the imaginary part).
    Each shot yields +-1; the estimate is the sample mean.
    """
    p0 = hadamard_test_probability(prep, u, part, phase)
    return _sample_pm1(p0, shots, rng_seed)


def overlap_pair_probability(a: Circuit, b: Circuit, phase: float = 0.0) -> float:
    if a.n_qubits != b.n_qubits:
        raise DimensionError("circuits act on different widths")
    n = a.n_qubits
    anc = n
    gates = [H(anc)]
    if phase:
        gates.append(Phase(anc, phase))
    gates.append(X(anc))
    gates += list(a.controlled((anc,), n + 1).gates)
    gates.append(X(anc))
    gates += list(b.controlled((anc,), n + 1).gates)
    gates.append(H(anc))
    psi = np.zeros(2 ** (n + 1), dtype=complex)
    psi[0] = 1.0
    return _ancilla_zero_probability(run_gates(psi, n + 1, gates), n)


def estimate_overlap_pair(a: Circuit, b: Circuit, shots: int, rng_seed=None, phase: float = 0.0) -> float:
    """Shot estimate of ``Re(e^{i phase} <0|A^dagger B|0>)``.

    The ancilla selects A on its |0> branch and B on its |1> branch, the
    layout used for the McLachlan M and V circuits.
    """
    return _sample_pm1(overlap_pair_probability(a, b, phase), shots, rng_seed)


def pm1_stderr(estimate: float, shots: int) -> float:
    """Plug-in standard error of a mean of +-1 outcomes."""
    return float(np.sqrt(max(1.0 - estimate**2, 0.0) / shots))


def gate_counts(circuit: Circuit) -> Counter:
    counts: Counter = Counter()
    for g in circuit.gates:
        if g.kind == "CU":
            counts["CU"] += 1
            counts.update(gate_counts(Circuit(circuit.n_qubits, g.inner)))
        else:
            counts[g.kind] += 1
    return counts


def toffoli_cost(circuit: Circuit) -> int:
    """Toffoli count if every multi-controlled X/Z were decomposed with clean ancillas.

    A k-controlled X costs 2k-3 Toffolis for k >= 3 (compute/uncompute ladder);
    C^nZ on m qubits is an (m-1)-controlled Z, same cost.
    """
    return sum(_toffolis(g, 0) for g in circuit.gates)


def _toffolis(gate: Gate, extra: int) -> int:
    if gate.kind == "CU":
        return sum(_toffolis(g, extra + len(gate.controls)) for g in gate.inner)
    k = extra + len(gate.controls) + (len(gate.targets) - 1 if gate.kind == "CNZ" else 0)
    if k == 2:
        return 1
    return 2 * k - 3 if k >= 3 else 0
