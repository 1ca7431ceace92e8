"""Closed-form 1D convection-diffusion solution and the flatness study."""

import numpy as np
import pytest

from plume.ode1d import (Ode1dProblem, flatness_study, outflow_formula,
                         outflow_reference, solve_closed_form)


def make_problem(**kw):
    base = dict(mu=0.1, u=1.0, intensity=50.0, x_m=0.5, h=0.05)
    base.update(kw)
    return Ode1dProblem(**base)


def test_problem_validation_and_peclet():
    assert make_problem().peclet == pytest.approx(5.0)
    with pytest.raises(ValueError):
        make_problem(mu=0.0)
    with pytest.raises(ValueError):
        make_problem(u=-1.0)
    with pytest.raises(ValueError):
        make_problem(x_m=0.03)  # support sticks out of the domain


def test_boundary_conditions_are_satisfied():
    p = make_problem(c_up=0.3)
    sol = solve_closed_form(p)
    assert sol(np.array([p.x1]))[0] == pytest.approx(0.3, abs=1e-10)
    # numerical outflow derivative
    eps = 1e-7
    d = (sol(np.array([p.x2])) - sol(np.array([p.x2 - eps]))) / eps
    assert abs(d[0]) < 1e-4


def test_solution_is_continuous_at_the_interfaces():
    p = make_problem(mu=0.07, u=1.3)
    sol = solve_closed_form(p)
    for x in (p.x_m - p.h, p.x_m + p.h):
        left = sol(np.array([x - 1e-9]))[0]
        right = sol(np.array([x + 1e-9]))[0]
        assert left == pytest.approx(right, rel=1e-6)


def test_rightmost_exponential_coefficient_vanishes():
    """The outflow Neumann condition kills the growing mode downstream."""
    for u in (0.5, 1.0, 2.0):
        sol = solve_closed_form(make_problem(u=u))
        c6_scaled = sol.c[5] * np.exp(u / sol.problem.mu * sol.problem.x2)
        assert abs(c6_scaled) < 1e-8 * abs(sol.outflow_value)


def test_outflow_formula_matches_the_linear_solve():
    for mu, u in ((0.05, 0.6), (0.2, 1.7), (0.4, 0.9)):
        p = make_problem(mu=mu, u=u, c_up=0.1)
        assert outflow_formula(p) == pytest.approx(
            solve_closed_form(p).outflow_value, rel=1e-9)


def test_closed_form_agrees_with_the_difference_oracle(rng):
    for _ in range(5):
        p = Ode1dProblem(mu=rng.uniform(0.05, 0.5), u=rng.uniform(0.5, 2.0),
                         intensity=rng.uniform(10, 200),
                         x_m=rng.uniform(0.25, 0.75), h=0.05)
        exact = solve_closed_form(p).outflow_value
        ref = outflow_reference(p, n=2001)
        assert abs(exact - ref) / abs(ref) < 1e-6


def test_outflow_is_linear_in_the_intensity():
    p1 = make_problem(intensity=10.0)
    p2 = make_problem(intensity=30.0)
    v1 = solve_closed_form(p1).outflow_value
    v2 = solve_closed_form(p2).outflow_value
    assert v2 == pytest.approx(3.0 * v1, rel=1e-12)


def test_flatness_spread_shrinks_with_peclet():
    grid = np.linspace(0.35, 0.8, 9)
    spreads = []
    for pe in (10.0, 20.0, 40.0):
        study = flatness_study(0.05, 2 * pe * 0.05, 100.0, 0.05, grid)
        assert study.outflow_values.shape == grid.shape
        spreads.append(study.relative_spread)
    assert spreads[0] < 1e-2
    assert spreads[0] >= spreads[1] >= spreads[2]
