import numpy as np
import pytest
from numpy.testing import assert_allclose

from regulate import (
    DimensionMismatch,
    InputSequence,
    controllability_rank_check,
    excitation_rank_check,
    get_model,
    jacobian_input,
    jacobian_theta,
    numeric_rank,
    simulate,
    stacked_map,
    step,
    terminal_map,
)
from regulate.plant import as_inputs, fd_jacobian, smallest_singular_value

SCALAR = get_model("scalar_linear").model
AFFINE = get_model("affine_2d").model
BILINEAR = get_model("bilinear_scalar").model


def seq(values, dim=1, start=0):
    return as_inputs(values, dim, start_time=start)


class TestStep:
    def test_zero_case(self):
        assert step(SCALAR, [0.0], [0.0], [0.8]) == np.array([0.0])

    def test_hand_arithmetic(self):
        assert_allclose(step(SCALAR, [1.0], [0.5], [0.8]), [1.3], atol=1e-12)

    def test_bilinear_hand_arithmetic(self):
        # 0.5*1 + (1 + 0.5*1)*1 = 2
        assert_allclose(step(BILINEAR, [1.0], [1.0], [0.5, 0.5]), [2.0], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            step(SCALAR, [1.0, 2.0], [0.0], [0.8])
        with pytest.raises(DimensionMismatch):
            step(AFFINE, [1.0, 0.0], [0.0], [0.5, 0.25])

    def test_deterministic(self):
        a = step(BILINEAR, [1.1], [-0.3], [0.7, 0.2])
        b = step(BILINEAR, [1.1], [-0.3], [0.7, 0.2])
        assert np.array_equal(a, b)


class TestSimulate:
    def test_empty_inputs(self):
        out = simulate(SCALAR, [1.0], InputSequence.empty(1), [0.8])
        assert len(out) == 1
        assert_allclose(out.states, [[1.0]])

    def test_one_step(self):
        out = simulate(SCALAR, [1.0], seq([0.5]), [0.8])
        assert_allclose(out.states.ravel(), [1.0, 1.3], atol=1e-12)

    def test_two_steps_back_to_zero(self):
        # 0.8*1.3 - 1.04 = 0 by hand
        out = simulate(SCALAR, [1.0], seq([0.5, -1.04]), [0.8])
        assert_allclose(out.states.ravel(), [1.0, 1.3, 0.0], atol=1e-12)

    def test_semigroup_property(self):
        rng = np.random.default_rng(11)
        for model in (SCALAR, AFFINE, BILINEAR):
            for _ in range(20):
                x0 = rng.uniform(-2, 2, model.state_dim)
                theta = rng.uniform(model.param_lower, model.param_upper)
                u_a = rng.uniform(-1, 1, (3, model.input_dim))
                u_b = rng.uniform(-1, 1, (2, model.input_dim))
                whole = simulate(model, x0, seq(np.vstack([u_a, u_b]), model.input_dim), theta)
                head = simulate(model, x0, seq(u_a, model.input_dim), theta)
                tail = simulate(model, head.states[-1], seq(u_b, model.input_dim, start=3), theta)
                glued = np.vstack([head.states, tail.states[1:]])
                assert_allclose(whole.states, glued, rtol=1e-12, atol=0)


class TestStackedMap:
    def test_single_step(self):
        out = stacked_map(SCALAR, [1.0], seq([0.5]), [0.8])
        assert_allclose(out, [1.3], atol=1e-12)

    def test_two_steps(self):
        out = stacked_map(SCALAR, [1.0], seq([0.5, 0.0]), [0.8])
        assert_allclose(out, [1.3, 1.04], atol=1e-12)

    def test_prefix_property_exact(self):
        rng = np.random.default_rng(5)
        for model in (SCALAR, AFFINE, BILINEAR):
            for _ in range(10):
                x0 = rng.uniform(-1.5, 1.5, model.state_dim)
                theta = rng.uniform(model.param_lower, model.param_upper)
                inputs = rng.uniform(-1, 1, (6, model.input_dim))
                short = stacked_map(model, x0, seq(inputs[:2], model.input_dim), theta)
                long = stacked_map(model, x0, seq(inputs, model.input_dim), theta)
                assert np.array_equal(short, long[: short.size])


class TestTerminalMap:
    def test_empty_block_is_last_stacked_entry(self):
        hist = seq([0.5])
        last = stacked_map(SCALAR, [1.0], hist, [0.8])[-1]
        out = terminal_map(SCALAR, [1.0], hist, InputSequence.empty(1, start_time=1), [0.8])
        assert out[0] == last

    def test_hand_arithmetic(self):
        out = terminal_map(SCALAR, [1.0], seq([0.5]), seq([-1.04], start=1), [0.8])
        assert_allclose(out, [0.0], atol=1e-12)

    def test_bilinear_cancellation(self):
        # u = -th1/(1+th2) sends x=1 to 0 in one step
        u = -0.8 / 1.3
        out = terminal_map(BILINEAR, [1.0], InputSequence.empty(1), seq([u]), [0.8, 0.3])
        assert_allclose(out, [0.0], atol=1e-12)

    def test_block_must_start_where_history_ends(self):
        with pytest.raises(ValueError):
            terminal_map(SCALAR, [1.0], seq([0.5]), seq([0.0], start=3), [0.8])


class TestJacobianTheta:
    def test_scalar_sensitivity_is_initial_state(self):
        jac = jacobian_theta(SCALAR, [2.0], seq([0.7]), [0.9])
        assert_allclose(jac, [[2.0]], atol=1e-8)

    def test_zero_state_zero_sensitivity(self):
        jac = jacobian_theta(SCALAR, [0.0], seq([0.0]), [0.9])
        assert_allclose(jac, [[0.0]], atol=1e-12)

    def test_affine_two_step_hand_matrix(self):
        # From x0=(1,-0.5), inputs ((0.3,0.2),(0,0)), theta=(0.5,0.5); rows by
        # hand differentiation of the two-step composition.
        jac = jacobian_theta(
            AFFINE, [1.0, -0.5], seq([[0.3, 0.2], [0.0, 0.0]], dim=2), [0.5, 0.5]
        )
        expected = np.array([[0.0, 0.0], [1.0, -0.5], [1.0, -0.5], [0.3, 0.2]])
        assert_allclose(jac, expected, atol=1e-6)

    def test_one_sided_at_box_edge(self):
        # Stencil is clipped at the upper bound; still exact for a linear map.
        jac = jacobian_theta(SCALAR, [1.5], seq([0.2]), [2.0])
        assert_allclose(jac, [[1.5]], atol=1e-8)

    def test_rejects_theta_outside_box(self):
        with pytest.raises(ValueError):
            jacobian_theta(SCALAR, [1.0], seq([0.0]), [3.0])


class TestJacobianInput:
    def test_single_step_slope_one(self):
        jac = jacobian_input(SCALAR, [1.0], seq([0.3]), [0.8])
        assert_allclose(jac, [[1.0]], atol=1e-8)

    def test_two_step_chain_rule(self):
        jac = jacobian_input(SCALAR, [1.0], seq([0.3, -0.2]), [0.8])
        assert_allclose(jac, [[0.8, 1.0]], atol=1e-6)

    def test_bilinear_gain(self):
        jac = jacobian_input(BILINEAR, [1.0], seq([0.0]), [0.5, 0.3])
        assert_allclose(jac, [[1.3]], atol=1e-6)

    def test_empty_block_rejected(self):
        with pytest.raises(ValueError):
            jacobian_input(SCALAR, [1.0], InputSequence.empty(1), [0.8])


class TestNumericRank:
    def test_identity(self):
        assert numeric_rank(np.eye(2)) == 2

    def test_all_ones(self):
        assert numeric_rank(np.ones((2, 2))) == 1

    def test_zero_matrix(self):
        assert numeric_rank(np.zeros((2, 2))) == 0

    def test_rel_tol_domain(self):
        with pytest.raises(ValueError):
            numeric_rank(np.eye(2), rel_tol=0.0)
        with pytest.raises(ValueError):
            numeric_rank(np.eye(2), rel_tol=1.0)

    def test_invariance_under_permutation_and_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = rng.standard_normal((4, 3))
            m[:, 2] = m[:, 0] + m[:, 1]  # force rank 2
            r = numeric_rank(m)
            assert r == 2
            perm = rng.permutation(4)
            assert numeric_rank(m[perm]) == r
            q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
            assert numeric_rank(q @ m) == r


class TestRankChecks:
    def test_scalar_excitation_passes(self):
        report = excitation_rank_check(SCALAR, seq([0.0]), [([1.0], [0.9])])
        assert report.passed
        assert_allclose(report.min_singular_value, 1.0, atol=1e-6)

    def test_scalar_zero_state_fails(self):
        report = excitation_rank_check(SCALAR, seq([0.0]), [([0.0], [0.9])])
        assert not report.passed
        assert report.min_singular_value == 0.0

    def test_affine_grid_passes(self):
        spec = get_model("affine_2d")
        states = [np.array(v) for v in ([1.0, 0.0], [1.0, 1.0], [2.0, -1.0])]
        thetas = [np.array(v) for v in ([0.25, 0.25], [0.5, 0.25], [0.9, 0.4])]
        samples = [(x, th) for x in states for th in thetas]
        report = excitation_rank_check(spec.model, spec.excitation, samples)
        assert report.passed
        # Independent route: the analytic sensitivities must be rank 2 as well.
        for x, th in samples:
            analytic = spec.oracle.stacked_jacobian(x, spec.excitation, th)
            assert numeric_rank(analytic) == 2
            assert smallest_singular_value(analytic, 2) > 1e-8

    def test_controllability_scalar(self):
        assert controllability_rank_check(SCALAR, [5.0], [1.7], seq([0.0]))

    def test_controllability_bilinear_singular_state(self):
        # 1 + 0.4*(-2.5) = 0: the input gain vanishes
        assert not controllability_rank_check(BILINEAR, [-2.5], [0.5, 0.4], seq([0.0]))

    def test_controllability_affine_two_steps(self):
        block = seq([[0.0, 0.0], [0.0, 0.0]], dim=2)
        assert controllability_rank_check(AFFINE, [1.0, 1.0], [0.5, 0.25], block)


class TestFdJacobian:
    def test_matches_analytic_quadratic(self):
        def f(v):
            return np.array([v[0] ** 2 + v[1], 3.0 * v[1]])

        jac = fd_jacobian(f, np.array([1.5, -2.0]))
        assert_allclose(jac, [[3.0, 1.0], [0.0, 3.0]], atol=1e-6)

    def test_degenerate_box_gives_zero_column(self):
        jac = fd_jacobian(lambda v: v, np.array([1.0]), lower=np.array([1.0]), upper=np.array([1.0]))
        assert_allclose(jac, [[0.0]])
