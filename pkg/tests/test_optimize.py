"""Projected damped Gauss-Newton loop and the comparison methods."""

import numpy as np
import pytest

from plume.controls import ActiveSet, ControlVector, to_nodal_control
from plume.optimize import (GnConfig, evaluate_cost, gauss_newton_step,
                            run_comparisons, run_pdgn)
from plume.sensitivity import jacobian_cs, residual
from conftest import unit_control


@pytest.fixture(scope="module")
def known_location(small_cfg, small_model, small_sub):
    """Exact measurements for a single active segment of intensity 100."""
    cv_true = unit_control(small_sub, 2, 100.0)
    meas = small_model.predict(to_nodal_control(cv_true, small_model.mesh))
    return cv_true, meas


def test_one_undamped_step_recovers_a_known_source(small_model, small_sub,
                                                   known_location):
    cv_true, meas = known_location
    cv, trace = run_pdgn(small_model, ControlVector.zeros(small_sub), meas,
                         GnConfig(jacobian="cs"), active=ActiveSet((2,)))
    assert trace.iterations == 1
    assert trace.records[0].alpha == 1.0
    assert cv.theta[2] == pytest.approx(100.0, rel=1e-8)
    assert trace.final_cost < 1e-18


def test_iterates_stay_nonnegative(small_model, small_sub):
    """Zero measurements from a positive start: the step is clipped at 0."""
    meas = small_model.predict(np.zeros(small_model.mesh.n_nodes))
    cv0 = unit_control(small_sub, 4, 50.0)
    cv, trace = run_pdgn(small_model, cv0, meas, GnConfig(jacobian="cs"),
                         active=ActiveSet((4,)))
    assert np.all(cv.theta >= 0.0)
    assert cv.theta[4] == pytest.approx(0.0, abs=1e-8)


def test_damping_search_never_increases_the_cost(small_model, small_sub,
                                                 known_location):
    _, meas = known_location
    cv = unit_control(small_sub, 2, 37.0)
    active = ActiveSet((2,))
    ce = evaluate_cost(small_model, cv, meas)
    e = residual(small_model, cv, meas, prediction=ce.prediction)
    sens = jacobian_cs(small_model, cv, active, 1e-8)
    nxt, info = gauss_newton_step(small_model, cv, active, sens.psi, e, None,
                                  meas, None, ce.value, GnConfig())
    assert info["cost"] <= ce.value
    assert 0.0 < info["alpha"] <= 1.0


def test_rel_tol_stops_once_progress_stalls(small_model, small_sub,
                                            known_location):
    _, meas = known_location
    # optimizing the wrong segment cannot reach zero cost; the relative
    # improvement threshold must stop the loop before max_it
    cv, trace = run_pdgn(small_model, ControlVector.zeros(small_sub), meas,
                         GnConfig(jacobian="cs", max_it=20),
                         active=ActiveSet((9,)), rel_tol=1e-2)
    assert trace.iterations < 20
    assert trace.final_cost > 1e-6


def test_max_it_caps_the_iteration_count(small_model, small_sub,
                                         known_location):
    _, meas = known_location
    config = GnConfig(jacobian="cs", max_it=2, tol=1e-30)
    _, trace = run_pdgn(small_model, ControlVector.zeros(small_sub), meas,
                        config, active=ActiveSet((2, 3)))
    assert trace.iterations <= 2


def test_config_validation():
    with pytest.raises(ValueError):
        GnConfig(tol=0.0)
    with pytest.raises(ValueError):
        GnConfig(max_it=0)


def test_evaluate_cost_windows_and_exactness(small_model, small_sub,
                                             known_location):
    cv_true, meas = known_location
    full = evaluate_cost(small_model, cv_true, meas)
    assert full.value == pytest.approx(0.0, abs=1e-20)
    windowed = evaluate_cost(small_model, ControlVector.zeros(small_sub),
                             meas, window=(5, 10))
    assert windowed.per_step.shape == (6,)
    assert windowed.value == pytest.approx(windowed.per_step.mean())


@pytest.mark.parametrize("method", ["lm", "steepest", "tikhonov"])
def test_comparison_methods_descend(small_model, small_sub, known_location,
                                    method):
    _, meas = known_location
    cv, trace = run_comparisons(small_model, ControlVector.zeros(small_sub),
                                meas, GnConfig(max_it=8), method,
                                active=ActiveSet((2,)))
    costs = [r.cost for r in trace.records]
    start = evaluate_cost(small_model, ControlVector.zeros(small_sub),
                          meas).value
    assert costs[0] < start
    assert all(b < a for a, b in zip(costs, costs[1:]))
    assert np.all(cv.theta >= 0)


def test_lm_with_tiny_regularization_matches_gauss_newton(small_model,
                                                          small_sub,
                                                          known_location):
    _, meas = known_location
    gn, _ = run_pdgn(small_model, ControlVector.zeros(small_sub), meas,
                     GnConfig(jacobian="cs"), active=ActiveSet((2,)))
    lm, _ = run_comparisons(small_model, ControlVector.zeros(small_sub), meas,
                            GnConfig(alpha_reg=1e-12, max_it=5), "lm",
                            active=ActiveSet((2,)))
    assert lm.theta[2] == pytest.approx(gn.theta[2], rel=1e-6)


def test_unknown_comparison_method_rejected(small_model, small_sub,
                                            known_location):
    _, meas = known_location
    with pytest.raises(ValueError):
        run_comparisons(small_model, ControlVector.zeros(small_sub), meas,
                        GnConfig(), "newton", active=ActiveSet((2,)))
