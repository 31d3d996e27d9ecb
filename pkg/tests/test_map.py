"""Newton-CG MAP solver."""

import numpy as np
import pytest

from hessmc.config import RunConfig
from hessmc.fem import Mesh1D, assemble_mass, interpolation_matrix
from hessmc.map_point import solve_map
from hessmc.models import (LinearGaussianModel, gradient, observation_points,
                           synthesize_data)
from hessmc.pipeline import build_problem, observed_mask
from hessmc.prior import build_prior

from conftest import make_small_problem


def test_linear_problem_converges_in_one_newton_step():
    # quadratic objective + essentially exact inner solves
    mesh, space, prior, model, _ = make_small_problem(n=35, q=6, kind="linear")
    res = solve_map(model.clone(), prior, cg_rtol=1e-12)
    assert res.converged
    assert res.newton_iters == 1
    assert res.line_search_steps == [1.0]
    g = gradient(model.clone(), prior, res.m_map)
    assert space.norm(g) <= 1e-8 * res.grad_norms[0]


def test_zero_gradient_start_terminates_immediately():
    # data synthesized exactly at the prior mean with no noise: the mean
    # is already the mode and the solver should not move at all
    mesh = Mesh1D.uniform(25, 1.0)
    space = assemble_mass(mesh)
    prior = build_prior(mesh, 1e-2, 1e2, mean=1.0, space=space)
    pts = observation_points(mesh, 5)
    model = LinearGaussianModel(mesh, space, interpolation_matrix(mesh, pts))
    synthesize_data(model, prior.mean, 0.0, np.random.default_rng(0), points=pts)
    res = solve_map(model, prior)
    assert res.converged
    assert res.newton_iters == 0
    assert res.grad_norms[0] == 0.0
    np.testing.assert_array_equal(res.m_map, prior.mean)


def test_nonlinear_problem_defaults():
    mesh, space, prior, model, _ = make_small_problem()
    res = solve_map(model.clone(), prior)
    assert res.converged
    assert res.grad_norms[-1] <= 1e-5 * res.grad_norms[0]
    # monotone decrease, and every accepted step came from halving
    J = np.asarray(res.objective)
    assert np.all(np.diff(J) < 0.0)
    assert all(0.0 < s <= 1.0 for s in res.line_search_steps)
    assert len(res.objective) == res.newton_iters + 1
    assert len(res.line_search_steps) == res.newton_iters


def test_cg_iterations_account_for_all_incremental_solves():
    mesh, space, prior, model, _ = make_small_problem()
    worker = model.clone()
    worker.counter.reset()
    res = solve_map(worker, prior)
    # every Hessian action inside CG costs two incremental solves, and
    # nothing else touches that counter
    assert worker.counter.incremental_solves == 2 * res.cg_iters_total


def test_iteration_budget_reports_nonconvergence():
    mesh, space, prior, model, _ = make_small_problem()
    res = solve_map(model.clone(), prior, max_newton=1)
    assert not res.converged
    assert res.newton_iters == 1
    assert len(res.grad_norms) == 2  # initial + post-exhaustion report


def test_default_problem_error_split():
    """Reconstruction error on the full-size problem, frozen by value.

    The observed right half carries a slightly larger error than the
    blind left half: the exponential reaction term couples the state to
    the parameter most strongly where the solution gradient is largest,
    and the noise level is calibrated to the signal peak sitting there.
    The left half simply reverts toward the prior mean, which by chance
    is a decent guess for this truth.
    """
    cfg = RunConfig()
    prob = build_problem(cfg)
    res = solve_map(prob.model.clone(), prob.prior)
    assert res.converged
    assert res.newton_iters == 9
    e = res.m_map - prob.m_true
    mask = observed_mask(prob.mesh, cfg["obs.region"])
    obs_err = prob.space.norm(np.where(mask, e, 0.0))
    unobs_err = prob.space.norm(np.where(mask, 0.0, e))
    assert obs_err == pytest.approx(0.3569694717339446, rel=1e-9)
    assert unobs_err == pytest.approx(0.30230747449190337, rel=1e-9)
    assert obs_err > unobs_err
