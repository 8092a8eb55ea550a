"""Built-in problems against dense linear-algebra references."""

import math

import numpy as np
import pytest

from sisqo.library import (ControlProblemSpec, SyntheticQpSpec,
                           build_neumann_control, build_poisson_control,
                           build_synthetic_qp, reference_function_value)

from oracles import dense_tracking_solution


# -- reference tracking states ------------------------------------------------

def test_reference_center_term_drops_the_spread():
    for x1, x2 in ((1.0, 1.0), (0.3, -0.7)):
        val = reference_function_value(2, 2, 3, 0.37, 1.9, x1, x2)
        assert val == pytest.approx(math.sin(4 * x1) + math.cos(3 * x2),
                                    abs=1e-15)


def test_reference_value_at_origin():
    assert reference_function_value(1, 3, 3, 0.1, 2.0, 0.0, 0.0) == 1.0


def test_reference_offcenter_frozen_value():
    eps_n, eps_s = 1e-1, math.sqrt(15.0)
    spread = eps_n / eps_s
    expected = math.sin((4.0 - spread) * 1.0) + math.cos((3.0 + spread) * 1.0)
    got = reference_function_value(1, 3, 3, eps_n, eps_s, 1.0, 1.0)
    assert got == pytest.approx(expected, abs=1e-15)


def test_reference_validates_arguments():
    with pytest.raises(ValueError, match="outside"):
        reference_function_value(0, 1, 3, 0.1, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="outside"):
        reference_function_value(1, 4, 3, 0.1, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="eps_s"):
        reference_function_value(1, 1, 3, 0.1, 0.0, 0.0, 0.0)


# -- synthetic QPs -------------------------------------------------------------

def test_qp_spec_validation():
    with pytest.raises(ValueError):
        SyntheticQpSpec(n=3, m=4)
    with pytest.raises(ValueError):
        SyntheticQpSpec(n=3, m=0)
    with pytest.raises(ValueError):
        SyntheticQpSpec(n=3, m=1, cond_target=0.5)


def test_qp_planted_solution_satisfies_kkt():
    problem = build_synthetic_qp(SyntheticQpSpec(n=20, m=8, seed=3))
    x_star, y_star = problem.known_solution
    j = problem.eval_jacobian(x_star)
    stat = problem.eval_grad_f(x_star) + j.apply_transpose(y_star)
    assert np.abs(stat).max() <= 1e-12 * max(1.0, np.abs(y_star).max())
    assert np.abs(problem.eval_c(x_star)).max() <= 1e-12


def test_qp_curvature_and_rank_guarantees():
    spec = SyntheticQpSpec(n=15, m=6, seed=1, cond_target=25.0,
                           curvature_floor=0.5)
    problem = build_synthetic_qp(spec)
    q = problem.eval_lagrangian_hessian(problem.x0, np.zeros(6)).to_dense()
    eigs = np.linalg.eigvalsh(q)
    assert eigs.min() >= 0.5 * (1 - 1e-9)
    assert eigs.max() == pytest.approx(0.5 * 25.0, rel=1e-9)
    assert problem.lipschitz[0] == pytest.approx(eigs.max(), rel=1e-9)
    assert problem.lipschitz[1] == 0.0

    j_dense = problem.eval_jacobian(problem.x0).to_dense()
    singulars = np.linalg.svd(j_dense, compute_uv=False)
    assert singulars.min() >= 1e-3
    assert singulars.min() >= 0.4  # construction places them in [0.5, 2]

    # curvature on the constraint null space, the part the method sees
    _, _, vt = np.linalg.svd(j_dense)
    null_basis = vt[6:].T
    reduced = null_basis.T @ q @ null_basis
    assert np.linalg.eigvalsh(reduced).min() >= 0.5 * (1 - 1e-9)


def test_qp_objective_callables_are_consistent():
    problem = build_synthetic_qp(SyntheticQpSpec(n=9, m=2, seed=5))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(9)
    d = rng.standard_normal(9)
    h = 1e-6
    fd = (problem.eval_f(x + h * d) - problem.eval_f(x - h * d)) / (2 * h)
    assert fd == pytest.approx(float(problem.eval_grad_f(x) @ d), rel=1e-7)


def test_qp_build_is_deterministic():
    a = build_synthetic_qp(SyntheticQpSpec(n=7, m=3, seed=11))
    b = build_synthetic_qp(SyntheticQpSpec(n=7, m=3, seed=11))
    np.testing.assert_array_equal(a.x0, b.x0)
    np.testing.assert_array_equal(a.known_solution[0], b.known_solution[0])
    c = build_synthetic_qp(SyntheticQpSpec(n=7, m=3, seed=12))
    assert not np.array_equal(a.x0, c.x0)


# -- Poisson interior control --------------------------------------------------

def test_poisson_shapes_and_start():
    spec = ControlProblemSpec(mesh_size=4)
    problem = build_poisson_control(spec)
    nh2 = 16
    assert (problem.n, problem.m) == (2 * nh2, nh2)
    state0 = problem.x0[:nh2]
    assert set(np.unique(state0)) == {0.5, 1.5}
    assert state0[0] == 1.5 and state0[1] == 0.5
    np.testing.assert_array_equal(problem.x0[nh2:], np.zeros(nh2))
    # the start must be visibly infeasible for budget-matched runs
    assert np.abs(problem.eval_c(problem.x0)).max() >= 0.5


def test_poisson_laplacian_spectrum():
    nh = 4
    problem = build_poisson_control(ControlProblemSpec(mesh_size=nh))
    j = problem.eval_jacobian(problem.x0).to_dense()
    a = j[:, :nh * nh]
    h = 1.0 / (nh + 1)
    eigs = np.linalg.eigvalsh(a)
    # classical five-point spectrum: 4 - 2cos(p pi h) - 2cos(q pi h)
    assert eigs.min() == pytest.approx(4.0 - 4.0 * np.cos(np.pi * h),
                                       rel=1e-12)
    assert eigs.max() == pytest.approx(4.0 + 4.0 * np.cos(np.pi * h),
                                       rel=1e-12)
    # control block is -h^2 I, so the full Jacobian has full row rank
    np.testing.assert_allclose(j[:, nh * nh:], -h * h * np.eye(nh * nh),
                               rtol=0, atol=1e-15)


def test_poisson_constraints_are_linear_and_homogeneous():
    problem = build_poisson_control(ControlProblemSpec(mesh_size=3))
    assert np.abs(problem.eval_c(np.zeros(problem.n))).max() == 0.0
    rng = np.random.default_rng(1)
    x = rng.standard_normal(problem.n)
    np.testing.assert_allclose(
        problem.eval_c(x),
        problem.eval_jacobian(x).to_dense() @ x, rtol=1e-13, atol=1e-13)


def test_poisson_dense_solution_is_kkt_point():
    for n_terms in (1, 3):
        problem = build_poisson_control(
            ControlProblemSpec(mesh_size=4, n_terms=n_terms))
        x_star, y_star = dense_tracking_solution(problem)
        j = problem.eval_jacobian(x_star)
        stat = problem.eval_grad_f(x_star) + j.apply_transpose(y_star)
        assert np.abs(stat).max() <= 1e-10
        assert np.abs(problem.eval_c(x_star)).max() <= 1e-10
        assert float(problem.eval_f(x_star)) < float(problem.eval_f(problem.x0))


def test_poisson_zero_spread_collapses_targets():
    problem = build_poisson_control(ControlProblemSpec(mesh_size=3,
                                                       eps_n=0.0))
    x = problem.x0
    grads = [problem.eval_term_grad(x, i, j)
             for i in range(1, 4) for j in range(1, 4)]
    for g in grads[1:]:
        np.testing.assert_array_equal(g, grads[0])


def test_control_spec_validation():
    with pytest.raises(ValueError):
        ControlProblemSpec(mesh_size=0)
    with pytest.raises(ValueError):
        ControlProblemSpec(regularization=0.0)
    with pytest.raises(ValueError):
        ControlProblemSpec(eps_n=-0.1)
    with pytest.raises(ValueError):
        ControlProblemSpec(eps_s=0.0)


# -- Neumann boundary control ---------------------------------------------------

def test_neumann_shapes_and_start():
    nh = 3
    problem = build_neumann_control(ControlProblemSpec(mesh_size=nh))
    side = nh + 2
    assert problem.m == side * side
    assert problem.n == side * side + 4 * nh
    state0 = problem.x0[:side * side]
    assert set(np.unique(state0)) == {0.5, 1.5}
    np.testing.assert_array_equal(problem.x0[side * side:], np.zeros(4 * nh))
    assert np.abs(problem.eval_c(problem.x0)).max() >= 0.5


def test_neumann_ghost_elimination_row():
    # left-edge node (0, 2) at mesh 3: the ghost neighbor doubles the
    # interior one and sources the control with weight 2h
    nh = 3
    side, h = nh + 2, 0.25
    problem = build_neumann_control(ControlProblemSpec(mesh_size=nh))
    dim = side * side
    row = problem.eval_jacobian(problem.x0).to_dense()[2]
    expected = np.zeros(dim + 4 * nh)
    expected[2] = 4.0 + h * h
    expected[1] = expected[3] = -1.0
    expected[side + 2] = -2.0
    expected[dim + 1] = -2.0 * h
    np.testing.assert_allclose(row, expected, rtol=0, atol=1e-15)


def test_neumann_corner_closure_row():
    nh = 3
    side = nh + 2
    problem = build_neumann_control(ControlProblemSpec(mesh_size=nh))
    row = problem.eval_jacobian(problem.x0).to_dense()[0]
    expected = np.zeros(problem.n)
    expected[0] = 1.0
    expected[1] = -0.5
    expected[side] = -0.5
    np.testing.assert_allclose(row, expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("nh", [3, 4, 5])
def test_neumann_jacobian_full_row_rank(nh):
    problem = build_neumann_control(ControlProblemSpec(mesh_size=nh))
    j = problem.eval_jacobian(problem.x0).to_dense()
    singulars = np.linalg.svd(j, compute_uv=False)
    assert singulars.min() > 1e-8

    # the state block alone is nonsingular: zero control forces w = 0
    state_block = j[:, :problem.m]
    assert np.linalg.svd(state_block, compute_uv=False).min() > 1e-8


def test_neumann_quadrature_weights():
    nh = 3
    side, h = nh + 2, 0.25
    problem = build_neumann_control(ControlProblemSpec(mesh_size=nh))
    lam = 1e-5
    hess = problem.eval_lagrangian_hessian(problem.x0,
                                           np.zeros(problem.m)).to_dense()
    diag = np.diag(hess)
    assert diag[0] == pytest.approx(h * h * 0.25)        # corner
    assert diag[2] == pytest.approx(h * h * 0.5)         # edge midpoint
    assert diag[side + 1] == pytest.approx(h * h)        # interior
    np.testing.assert_allclose(diag[side * side:], lam * h, rtol=1e-12)


def test_neumann_dense_solution_is_kkt_point():
    problem = build_neumann_control(ControlProblemSpec(mesh_size=4))
    x_star, y_star = dense_tracking_solution(problem)
    j = problem.eval_jacobian(x_star)
    stat = problem.eval_grad_f(x_star) + j.apply_transpose(y_star)
    assert np.abs(stat).max() <= 1e-10
    assert np.abs(problem.eval_c(x_star)).max() <= 1e-10


def test_control_problems_expose_finite_sum_metadata():
    for build in (build_poisson_control, build_neumann_control):
        problem = build(ControlProblemSpec(mesh_size=3, n_terms=3))
        assert problem.term_grid == 3
        with pytest.raises(ValueError, match="outside"):
            problem.eval_term_grad(problem.x0, 0, 1)
        assert problem.lipschitz is not None
        assert problem.info["mesh_size"] == 3
