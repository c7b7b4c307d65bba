import numpy as np
import pytest

from vqsde.generator import ProcessSpec, build_L_dense, build_L_unitary_sum, gbm
from vqsde.oracle import runge_kutta
from vqsde.qsim import StateVector, apply_circuit
from vqsde.vqs import (
    AnsatzSpec,
    AnsatzState,
    McLachlanSystem,
    Shots,
    VQSError,
    ansatz_vector,
    compute_M,
    compute_V,
    derivative_state,
    derivative_states,
    fit_initial,
    simulate,
    solve_mclachlan,
    vqs_step,
)


def random_state(spec, rng, alpha=None):
    alpha = rng.uniform(0.5, 2.0) if alpha is None else alpha
    return AnsatzState(alpha, rng.uniform(-np.pi, np.pi, spec.n_params))


def finite_difference(spec, state, k, h=1e-5):
    up, down = state.params.copy(), state.params.copy()
    up[k] += h
    down[k] -= h
    return (ansatz_vector(spec, AnsatzState.from_params(up))
            - ansatz_vector(spec, AnsatzState.from_params(down))) / (2 * h)


class TestAnsatz:
    def test_parameter_count(self):
        assert AnsatzSpec(4, 3).n_params == 16
        assert AnsatzSpec(3, 0).n_params == 3

    def test_layout(self):
        gates = AnsatzSpec(3, 1).circuit(np.zeros(6)).gates
        assert [g.kind for g in gates] == ["RY"] * 3 + ["CNOT"] * 3 + ["RY"] * 3
        assert (gates[5].controls, gates[5].targets) == ((2,), (0,))

    def test_two_qubits_have_no_wraparound(self):
        gates = AnsatzSpec(2, 1).circuit(np.zeros(4)).gates
        assert sum(g.kind == "CNOT" for g in gates) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_amplitudes_are_real(self, seed):
        rng = np.random.default_rng(seed)
        spec = AnsatzSpec(3, 2)
        out = apply_circuit(StateVector.zero(3), spec.circuit(rng.uniform(-3, 3, spec.n_params)))
        assert np.all(out.amplitudes.imag == 0)
        assert out.norm == pytest.approx(1.0, abs=1e-12)


class TestDerivativeStates:
    def test_single_rotation_at_zero(self):
        d = derivative_state(AnsatzSpec(1, 0), AnsatzState(1.0, [0.0]), 1)
        np.testing.assert_allclose(d.amplitudes, [0, 0.5], atol=1e-15)

    def test_alpha_derivative_is_unit_norm(self):
        rng = np.random.default_rng(0)
        spec = AnsatzSpec(3, 1)
        d = derivative_state(spec, random_state(spec, rng, alpha=2.0), 0)
        assert d.norm == pytest.approx(1.0, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            derivative_state(AnsatzSpec(2, 0), AnsatzState(1.0, [0, 0]), 3)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        spec = AnsatzSpec(int(rng.integers(1, 5)), int(rng.integers(0, 4)))
        state = random_state(spec, rng)
        rows = derivative_states(spec, state)
        for k in range(spec.n_params + 1):
            fd = finite_difference(spec, state, k)
            np.testing.assert_allclose(rows[k], fd, atol=1e-8)
            np.testing.assert_allclose(derivative_state(spec, state, k).amplitudes.real, rows[k], atol=1e-12)
            assert np.all(derivative_state(spec, state, k).amplitudes.imag == 0)


class TestMcLachlanMatrices:
    @pytest.mark.parametrize("seed", range(10))
    def test_structure(self, seed):
        rng = np.random.default_rng(seed)
        spec = AnsatzSpec(4, 3)
        M = compute_M(spec, random_state(spec, rng))
        assert np.max(np.abs(M - M.T)) < 1e-10
        assert M[0, 0] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(M[0, 1:], 0.0, atol=1e-12)
        assert np.linalg.eigvalsh(M).min() > -1e-10

    def test_against_explicit_vectors(self):
        rng = np.random.default_rng(42)
        spec = AnsatzSpec(4, 3)
        state = random_state(spec, rng)
        L = build_L_dense(gbm(0.1, 0.2, 4))
        vecs = np.array([finite_difference(spec, state, k, h=1e-6) for k in range(spec.n_params + 1)])
        exact_vecs = np.array([derivative_state(spec, state, k).amplitudes.real for k in range(spec.n_params + 1)])
        np.testing.assert_allclose(vecs, exact_vecs, atol=1e-8)
        v = ansatz_vector(spec, state)
        np.testing.assert_allclose(compute_M(spec, state), exact_vecs @ exact_vecs.T, atol=1e-10)
        np.testing.assert_allclose(compute_V(spec, state, L), exact_vecs @ (L @ v), atol=1e-10)
        op = build_L_unitary_sum(gbm(0.1, 0.2, 4))
        np.testing.assert_allclose(compute_V(spec, state, op), compute_V(spec, state, L), atol=1e-10)

    def test_shot_mode_agrees(self):
        rng = np.random.default_rng(5)
        spec = AnsatzSpec(4, 3)
        state = random_state(spec, rng, alpha=1.0)
        op = build_L_unitary_sum(gbm(0.1, 0.2, 4))
        shots = 100_000
        M_exact = compute_M(spec, state)
        M_shot, M_err = compute_M(spec, state, Shots(shots, 1), return_stderr=True)
        assert np.max(np.abs(M_shot - M_exact)) < 5 / np.sqrt(shots)
        V_exact = compute_V(spec, state, op)
        V_shot, V_err = compute_V(spec, state, op, Shots(shots, 2), return_stderr=True)
        # V sums many weighted overlaps, so its error is judged against the propagated standard error
        assert np.all(np.abs(V_shot - V_exact) <= 5 * V_err + 1e-12)

    def test_shot_mode_needs_unitary_sum(self):
        spec = AnsatzSpec(2, 0)
        with pytest.raises(TypeError):
            compute_V(spec, AnsatzState(1.0, [0, 0]), np.zeros((4, 4)), Shots(10, 0))


class TestStep:
    def test_zero_velocity_keeps_state(self):
        state = AnsatzState(1.3, [0.1, 0.2])
        out = vqs_step(McLachlanSystem(np.eye(3), np.zeros(3)), state, 0.01)
        np.testing.assert_array_equal(out.params, state.params)

    def test_decoupled_alpha(self):
        state = AnsatzState(1.0, [0.1, 0.2])
        out = vqs_step(McLachlanSystem(np.eye(3), np.array([1.0, 0, 0])), state, 0.01)
        np.testing.assert_allclose(out.params, [1.01, 0.1, 0.2])

    def test_singular_system_raises(self):
        with pytest.raises(VQSError):
            solve_mclachlan(McLachlanSystem(np.zeros((2, 2)), np.ones(2)))

    def test_pseudo_inverse_drops_null_directions(self):
        M = np.diag([1.0, 1e-12])
        np.testing.assert_allclose(solve_mclachlan(McLachlanSystem(M, np.array([2.0, 1.0]))), [2.0, 0.0])

    def test_alpha_clamped(self):
        with pytest.warns(RuntimeWarning):
            out = vqs_step(McLachlanSystem(np.eye(2), np.array([-10.0, 0])), AnsatzState(0.01, [0.0]), 0.01)
        assert out.alpha == 1e-12

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            McLachlanSystem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_gbm_step_tracks_explicit_euler(self):
        process = gbm(0.1, 0.2, 4)
        spec = AnsatzSpec(4, 3)
        state, residual = fit_initial(spec, process.initial_lattice(), restarts=5, seed=0)
        L = build_L_dense(process)
        dt = 0.005
        system = McLachlanSystem(compute_M(spec, state), compute_V(spec, state, L))
        v = ansatz_vector(spec, state)
        moved = ansatz_vector(spec, vqs_step(system, state, dt))
        assert np.linalg.norm(moved - (v + dt * L @ v)) <= 10 * dt**2 + residual

    def test_full_rank_step_is_second_order(self):
        process = ProcessSpec((0.2, -0.1), (0.3,), 2)
        spec = AnsatzSpec(2, 3)
        rng = np.random.default_rng(3)
        state = AnsatzState(1.0, rng.uniform(-1, 1, spec.n_params))
        L = build_L_dense(process)
        v = ansatz_vector(spec, state)
        system = McLachlanSystem(compute_M(spec, state), compute_V(spec, state, L))
        errors = []
        for dt in (1e-2, 5e-3):
            moved = ansatz_vector(spec, vqs_step(system, state, dt))
            errors.append(np.linalg.norm(moved - (v + dt * L @ v)))
        assert errors[0] < 1e-3
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.1)


class TestFitInitial:
    def test_uniform(self):
        n = 3
        state, residual = fit_initial(AnsatzSpec(n, 0), np.full(2**n, 2.0**-n), restarts=5, seed=0)
        assert residual < 1e-8
        assert state.alpha == pytest.approx(2 ** (-n / 2), abs=1e-8)

    def test_delta_at_zero(self):
        target = np.zeros(16)
        target[0] = 1
        state, residual = fit_initial(AnsatzSpec(4, 2), target, restarts=1, seed=0)
        assert residual < 1e-10
        assert state.alpha == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(state.theta, 0.0, atol=1e-8)

    def test_gaussian_regression(self):
        grid = np.arange(16)
        target = np.exp(-0.5 * ((grid - 7.5) / 2) ** 2)
        target /= target.sum()
        _, residual = fit_initial(AnsatzSpec(4, 3), target, restarts=20, seed=0)
        assert residual < 1e-3

    def test_target_must_be_normalised(self):
        with pytest.raises(ValueError):
            fit_initial(AnsatzSpec(1, 0), [0.5, 0.6])


class TestSimulate:
    def test_frozen_process(self):
        process = ProcessSpec((0.0,), (0.0,), 3)
        result = simulate(process, AnsatzSpec(3, 1), 0.1, 0.01, restarts=3, seed=0)
        p = result.distributions
        assert np.max(np.abs(p[-1] - p[0])) < 1e-6
        assert len(result.records) == 11
        np.testing.assert_allclose(result.times, np.linspace(0, 0.1, 11))

    def test_short_gbm_run_tracks_rk(self):
        process = gbm(0.1, 0.2, 3)
        result = simulate(process, AnsatzSpec(3, 3), 0.5, 0.005, restarts=5, seed=1)
        start = result.distributions[0]
        rk = runge_kutta(build_L_dense(process), start, 0.5, 0.005)
        assert np.linalg.norm(result.distributions[-1] - rk.final.p) < 5e-3

    def test_rk4_integrator_runs(self):
        process = gbm(0.1, 0.2, 2)
        result = simulate(process, AnsatzSpec(2, 2), 0.05, 0.01, restarts=2, seed=0, integrator="rk4")
        assert len(result.records) == 6

    def test_shots_mode_is_reproducible(self):
        process = gbm(0.1, 0.2, 2)
        spec = AnsatzSpec(2, 1)
        a = simulate(process, spec, 0.02, 0.01, Shots(2000, 9), restarts=2, seed=0)
        b = simulate(process, spec, 0.02, 0.01, Shots(2000, 9), restarts=2, seed=0)
        np.testing.assert_array_equal(a.distributions, b.distributions)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            simulate(gbm(0.1, 0.2, 3), AnsatzSpec(2, 1), 0.1, 0.01)

    def test_bad_time_grid(self):
        with pytest.raises(ValueError):
            simulate(gbm(0.1, 0.2, 2), AnsatzSpec(2, 1), 0.1, 0.03)
