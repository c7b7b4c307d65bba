import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from vqsde.generator import cyc_inc, v_plus
from vqsde.qsim import (
    CNOT,
    CNZ,
    MCX,
    RY,
    Circuit,
    ControlledU,
    DimensionError,
    H,
    Phase,
    QubitIndexError,
    S,
    Sdg,
    StateVector,
    Toffoli,
    UnitarySum,
    X,
    Y,
    Z,
    apply_circuit,
    apply_unitary_sum,
    estimate_overlap_hadamard,
    estimate_overlap_pair,
    gate_counts,
    hadamard_test_probability,
    inner_product,
    to_dense,
    toffoli_cost,
)

PAULI_Y = np.array([[0, -1j], [1j, 0]])


def random_circuit(n, n_gates, rng):
    makers = [
        lambda q, r: X(q),
        lambda q, r: Y(q),
        lambda q, r: Z(q),
        lambda q, r: H(q),
        lambda q, r: S(q),
        lambda q, r: Sdg(q),
        lambda q, r: RY(q, r.uniform(-np.pi, np.pi)),
        lambda q, r: Phase(q, r.uniform(-np.pi, np.pi)),
    ]
    gates = []
    for _ in range(n_gates):
        q = int(rng.integers(n))
        choice = rng.integers(len(makers) + 3)
        others = [p for p in range(n) if p != q]
        if choice < len(makers) or not others:
            gates.append(makers[int(choice) % len(makers)](q, rng))
        elif choice == len(makers):
            gates.append(CNOT(int(rng.choice(others)), q))
        elif choice == len(makers) + 1:
            gates.append(MCX(tuple(int(c) for c in rng.choice(others, size=min(2, len(others)), replace=False)), q))
        else:
            gates.append(CNZ(tuple(range(n))))
    return Circuit(n, tuple(gates))


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v), normalized=True)


class TestApplyCircuit:
    def test_x_flips_zero(self):
        out = apply_circuit(StateVector.zero(1), Circuit(1, (X(0),)))
        np.testing.assert_allclose(out.amplitudes, [0, 1])

    def test_hadamard_pair_gives_uniform(self):
        out = apply_circuit(StateVector.zero(2), Circuit(2, (H(0), H(1))))
        np.testing.assert_allclose(out.amplitudes, [0.5] * 4, atol=1e-15)

    def test_ry_matches_matrix_exponential(self):
        theta = np.pi / 3
        out = apply_circuit(StateVector.zero(1), Circuit(1, (RY(0, theta),)))
        expected = expm(-0.5j * theta * PAULI_Y) @ np.array([1, 0])
        np.testing.assert_allclose(out.amplitudes, expected, atol=1e-15)
        np.testing.assert_allclose(out.amplitudes, [np.cos(theta / 2), np.sin(theta / 2)], atol=1e-15)

    def test_qubit_zero_is_most_significant(self):
        out = apply_circuit(StateVector.zero(2), Circuit(2, (X(0),)))
        assert np.argmax(np.abs(out.amplitudes)) == 2

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            apply_circuit(StateVector.zero(2), Circuit(1, (X(0),)))

    def test_qubit_out_of_range(self):
        with pytest.raises(QubitIndexError):
            Circuit(2, (X(2),))

    def test_overlapping_control_and_target(self):
        with pytest.raises(ValueError):
            CNOT(1, 1)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_dense_product_and_keeps_norm(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        circ = random_circuit(n, 12, rng)
        psi = random_state(n, rng)
        out = apply_circuit(psi, circ)
        np.testing.assert_allclose(out.amplitudes, circ.matrix() @ psi.amplitudes, atol=1e-12)
        assert abs(out.norm - psi.norm) < 1e-12


class TestUnitarity:
    @pytest.mark.parametrize(
        "gate",
        [X(1), Y(0), Z(2), H(1), S(0), Sdg(2), RY(1, 0.7), Phase(0, 1.1), CNOT(0, 2), Toffoli(0, 1, 2),
         MCX((0, 1, 2), 3), MCX((), 3), CNZ((0, 1, 2, 3)), ControlledU((RY(3, 0.3), H(1)), (0,))],
        ids=lambda g: g.kind,
    )
    def test_every_gate_is_unitary(self, gate):
        m = Circuit(4, (gate,)).matrix()
        np.testing.assert_allclose(m.conj().T @ m, np.eye(16), atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_circuits_are_unitary(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(1, 6))
        m = random_circuit(n, 15, rng).matrix()
        np.testing.assert_allclose(m.conj().T @ m, np.eye(2**n), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_inverse_undoes_circuit(self, seed):
        rng = np.random.default_rng(200 + seed)
        circ = random_circuit(3, 10, rng)
        np.testing.assert_allclose((circ + circ.inverse()).matrix(), np.eye(8), atol=1e-12)


class TestUnitarySum:
    def test_identity_term(self):
        psi = random_state(2, np.random.default_rng(0))
        out = apply_unitary_sum(psi, UnitarySum.identity(2))
        np.testing.assert_allclose(out.amplitudes, psi.amplitudes)

    def test_projector_annihilates_one(self):
        op = UnitarySum(1, ((0.5, Circuit(1)), (0.5, Circuit(1, (Z(0),)))))
        out = apply_unitary_sum(StateVector.basis(1, 1), op)
        np.testing.assert_allclose(out.amplitudes, [0, 0])

    def test_v_plus_shifts_and_truncates(self):
        vp = v_plus(2)
        assert len(vp) == 2
        np.testing.assert_allclose(apply_unitary_sum(StateVector.basis(2, 2), vp).amplitudes, [0, 0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(apply_unitary_sum(StateVector.basis(2, 3), vp).amplitudes, [0, 0, 0, 0], atol=1e-15)

    def test_empty_sum_is_rejected(self):
        with pytest.raises(ValueError):
            apply_unitary_sum(StateVector.zero(1), UnitarySum.zero(1))

    def test_mixed_widths_rejected(self):
        with pytest.raises(DimensionError):
            UnitarySum(2, ((1.0, Circuit(1)),))

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**16))
    @settings(max_examples=30, deadline=None)
    def test_linear_in_state_and_coefficients(self, a, b, seed):
        rng = np.random.default_rng(seed)
        ua, ub = random_circuit(3, 6, rng), random_circuit(3, 6, rng)
        op = UnitarySum(3, ((a, ua), (b, ub)))
        psi, phi = random_state(3, rng), random_state(3, rng)
        combined = StateVector(3, 2.0 * psi.amplitudes - phi.amplitudes)
        lhs = apply_unitary_sum(combined, op).amplitudes
        rhs = 2.0 * apply_unitary_sum(psi, op).amplitudes - apply_unitary_sum(phi, op).amplitudes
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
        split = a * apply_circuit(psi, ua).amplitudes + b * apply_circuit(psi, ub).amplitudes
        np.testing.assert_allclose(apply_unitary_sum(psi, op).amplitudes, split, atol=1e-12)

    def test_product_order(self):
        a = UnitarySum.from_circuit(Circuit(1, (H(0),)))
        b = UnitarySum.from_circuit(Circuit(1, (S(0),)))
        np.testing.assert_allclose(to_dense(a @ b), to_dense(a) @ to_dense(b), atol=1e-15)

    def test_simplify_merges_and_drops(self):
        c = Circuit(1, (X(0),))
        op = UnitarySum(1, ((1.0, c), (-1.0, c), (2.0, Circuit(1)))).simplify()
        assert len(op) == 1
        np.testing.assert_allclose(to_dense(op), 2 * np.eye(2))

    def test_adjoint(self):
        rng = np.random.default_rng(3)
        op = UnitarySum(2, ((1 + 2j, random_circuit(2, 5, rng)), (0.5, random_circuit(2, 5, rng))))
        np.testing.assert_allclose(to_dense(op.adjoint()), to_dense(op).conj().T, atol=1e-12)


class TestInnerProduct:
    def test_basis_orthonormal(self):
        assert inner_product(StateVector.zero(1), StateVector.zero(1)) == 1
        assert inner_product(StateVector.zero(1), StateVector.basis(1, 1)) == 0

    def test_plus_against_ry(self):
        plus = apply_circuit(StateVector.zero(1), Circuit(1, (H(0),)))
        ry = apply_circuit(StateVector.zero(1), Circuit(1, (RY(0, np.pi / 2),)))
        assert abs(inner_product(plus, ry) - 1) < 1e-15

    def test_conjugate_linear_in_first(self):
        a = StateVector(1, [1j, 0])
        assert inner_product(a, StateVector.zero(1)) == -1j


class TestToDense:
    def test_x(self):
        np.testing.assert_array_equal(to_dense(UnitarySum.from_circuit(Circuit(1, (X(0),)))), [[0, 1], [1, 0]])

    def test_cnz(self):
        np.testing.assert_array_equal(to_dense(Circuit(2, (CNZ((0, 1)),))), np.diag([1, 1, 1, -1]))

    def test_cyclic_increment_permutation(self):
        expected = np.zeros((4, 4))
        for j in range(4):
            expected[(j + 1) % 4, j] = 1
        np.testing.assert_array_equal(to_dense(cyc_inc(2)).real, expected)

    def test_cap(self):
        with pytest.raises(ValueError):
            to_dense(Circuit(3), cap=2)


class TestHadamardTest:
    def test_identity_overlap(self):
        prep = Circuit(2, (H(0), RY(1, 0.4)))
        est = estimate_overlap_hadamard(prep, Circuit(2), 10_000, "real", rng_seed=1)
        assert abs(est - 1) < 0.05

    def test_z_on_plus(self):
        shots = 10_000
        est = estimate_overlap_hadamard(Circuit(1, (H(0),)), Circuit(1, (Z(0),)), shots, "real", rng_seed=2)
        assert abs(est) < 3 / np.sqrt(shots)

    def test_x_on_ry(self):
        shots = 10_000
        est = estimate_overlap_hadamard(Circuit(1, (RY(0, np.pi / 3),)), Circuit(1, (X(0),)), shots, "real", 3)
        assert abs(est - np.sin(np.pi / 3)) < 3 / np.sqrt(shots)

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_probabilities_match_statevector(self, seed):
        rng = np.random.default_rng(300 + seed)
        prep, u = random_circuit(3, 8, rng), random_circuit(3, 8, rng)
        psi = apply_circuit(StateVector.zero(3), prep)
        value = inner_product(psi, apply_circuit(psi, u))
        phase = rng.uniform(-np.pi, np.pi)
        shifted = np.exp(1j * phase) * value
        assert abs(2 * hadamard_test_probability(prep, u, "real", phase) - 1 - shifted.real) < 1e-12
        assert abs(2 * hadamard_test_probability(prep, u, "imag", phase) - 1 - shifted.imag) < 1e-12

    def test_bad_part(self):
        with pytest.raises(ValueError):
            hadamard_test_probability(Circuit(1), Circuit(1), "both")

    def test_deviation_rarely_exceeds_five_sigma(self):
        shots = 40_000
        prep = Circuit(2, (H(0), RY(1, 1.2), CNOT(0, 1)))
        u = Circuit(2, (X(1), Z(0)))
        psi = apply_circuit(StateVector.zero(2), prep)
        exact = inner_product(psi, apply_circuit(psi, u)).real
        misses = sum(
            abs(estimate_overlap_hadamard(prep, u, shots, "real", rng_seed=s) - exact) > 5 / np.sqrt(shots)
            for s in range(200)
        )
        assert misses < 2

    def test_pair_estimate(self):
        rng = np.random.default_rng(7)
        a, b = random_circuit(2, 6, rng), random_circuit(2, 6, rng)
        va = apply_circuit(StateVector.zero(2), a)
        vb = apply_circuit(StateVector.zero(2), b)
        exact = inner_product(va, vb).real
        est = estimate_overlap_pair(a, b, 100_000, rng_seed=4)
        assert abs(est - exact) < 5 / np.sqrt(100_000)

    def test_seed_reproducible(self):
        args = (Circuit(1, (H(0),)), Circuit(1, (Z(0),)), 1000, "real", 11)
        assert estimate_overlap_hadamard(*args) == estimate_overlap_hadamard(*args)


class TestGateCounts:
    def test_counts_and_toffolis(self):
        circ = Circuit(4, (Toffoli(0, 1, 2), MCX((0, 1, 2), 3), CNZ((0, 1, 2, 3)), CNOT(0, 1), H(0)))
        counts = gate_counts(circ)
        assert counts["TOFFOLI"] == 1 and counts["MCX"] == 1 and counts["CNZ"] == 1
        assert toffoli_cost(circ) == 1 + 3 + 3

    def test_controlled_wrapper_adds_controls(self):
        circ = Circuit(3, (ControlledU((CNOT(1, 2),), (0,)),))
        assert toffoli_cost(circ) == 1
