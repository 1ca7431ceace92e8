"""End-to-end acceptance gate.

Each test covers one numbered acceptance criterion and prints a single
``[criterion N] PASS/FAIL`` line (run with ``-s`` or read the captured
output) before asserting.  The criteria exercise the shipped experiment
configurations rather than reduced stand-ins, so this module is slow.
"""

import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from plume.algorithms import reference_cost_exponents
from plume.controls import ControlVector, to_nodal_control
from plume.experiments import (TEST_CASES, build_model, default_config,
                               finest_subdivision, run_experiment,
                               truth_segment_indices, truth_vector)
from plume.forward import TimeGrid, TransportModel
from plume.mesh import (PhysicalCoefficients, assemble, build_mesh,
                        nodal_control_from_segments)
from plume.ode1d import (Ode1dProblem, flatness_study, outflow_reference,
                         solve_closed_form)
from plume.pod import collect_snapshots, projection_error, truncate
from plume.sensitivity import full_window, jacobian_cs, jacobian_fd, stack


def verdict(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def timed_bundle(name: str):
    t0 = time.perf_counter()
    bundle = run_experiment(default_config(name))
    return bundle, time.perf_counter() - t0


@pytest.fixture(scope="module")
def example1():
    return timed_bundle("example1")


@pytest.fixture(scope="module")
def example2():
    return timed_bundle("example2")


@pytest.fixture(scope="module")
def pod_bundle():
    return timed_bundle("pod-table1")[0]


@pytest.fixture(scope="module")
def suite_bundle():
    return timed_bundle("tests1-9")[0]


@pytest.fixture(scope="module")
def threshold_bundle():
    return timed_bundle("thresholds-table4")[0]


def _pdgn_rows(bundle, table):
    return [r for r in bundle.tables[table] if r["method"] == "pdgn"]


def test_criterion_01_single_source_recovery(example1):
    bundle, elapsed = example1
    clean_err = max(r["relative_error"]
                    for r in _pdgn_rows(bundle, "noisefree_estimates"))
    clean_its = _pdgn_rows(bundle, "noisefree_summary")[0]["iterations"]
    noisy_err = max(r["relative_error"]
                    for r in _pdgn_rows(bundle, "noisy_estimates"))
    noisy_its = _pdgn_rows(bundle, "noisy_summary")[0]["iterations"]
    ok = (clean_err <= 1e-6 and clean_its <= 3 and noisy_err <= 0.05
          and noisy_its <= 20 and elapsed <= 60.0)
    verdict(1, ok,
            f"noise-free err {clean_err:.2e} in {clean_its} its, "
            f"noisy err {noisy_err:.2%} in {noisy_its} its, {elapsed:.1f}s")


def test_criterion_02_two_source_recovery(example2):
    bundle, _ = example2
    err = max(r["relative_error"]
              for r in _pdgn_rows(bundle, "noisefree_estimates"))
    cost = _pdgn_rows(bundle, "noisefree_summary")[0]["final_cost"]
    ok = err <= 1e-4 and cost <= 1e-12
    verdict(2, ok, f"noise-free err {err:.2e}, final cost {cost:.2e}")


def test_criterion_03_reduced_model_study(pod_bundle):
    rows = pod_bundle.tables["pod"]
    fixed = sorted((r for r in rows if r["reduced"] and r["tau"] == 0.01),
                   key=lambda r: r["t_m"])
    costs = [r["final_cost"] for r in fixed]
    dims = [r["dim"] for r in rows if r["reduced"]]
    last = fixed[-1]
    ok = (all(b < a for a, b in zip(costs, costs[1:]))
          and max(dims) <= 45
          and last["t_m"] == 5.0 and last["final_cost"] <= 1e-4
          and last["l1_top"] <= 0.1 and last["l1_bottom"] <= 0.1)
    verdict(3, ok,
            f"costs over horizons {costs}, dims {dims}, "
            f"longest-horizon L1 ({last['l1_top']:.2e}, "
            f"{last['l1_bottom']:.2e})")


def test_criterion_04_ordered_controls_give_ordered_outputs():
    # run on the resolved configuration: discrete positivity (and with it
    # the ordering property) needs the boundary layer resolved
    cfg = replace(default_config("appendixA-stabilization"), truth=[])
    model = build_model(cfg)
    sub = finest_subdivision(cfg)
    rng = np.random.default_rng(42)
    worst = np.inf
    for _ in range(50):
        lo = ControlVector(sub, rng.uniform(0.0, 100.0, sub.n_segments))
        hi = ControlVector(sub, lo.theta + rng.uniform(0.0, 50.0,
                                                       sub.n_segments))
        obs_lo = model.predict(to_nodal_control(lo, model.mesh))
        obs_hi = model.predict(to_nodal_control(hi, model.mesh))
        worst = min(worst, float((obs_hi - obs_lo).min()))
    ok = worst >= -1e-10
    verdict(4, ok, f"worst ordering violation {worst:.2e} over 50 pairs")


def test_criterion_05_sensitivity_cross_validation():
    worst_fd_cs, worst_oracle = 0.0, 0.0
    for name in ("example1", "example2"):
        cfg = replace(default_config(name), noise_variance=0.0)
        model = build_model(cfg)
        sub = finest_subdivision(cfg)
        cv = truth_vector(cfg)
        active = truth_segment_indices(cfg, sub)
        fd = jacobian_fd(model, cv, active, 1e-3)
        cs = jacobian_cs(model, cv, active, 1e-8)
        window = full_window(model.grid.n_times)
        base = stack(model.predict(np.zeros(model.mesh.n_nodes)), window)
        for k, j in enumerate(active):
            unit = ControlVector.zeros(sub)
            unit.theta[j] = 1.0
            nodal = to_nodal_control(unit, model.mesh, require_aligned=False)
            oracle = stack(model.predict(nodal), window) - base
            scale = np.linalg.norm(oracle)
            worst_fd_cs = max(worst_fd_cs, np.linalg.norm(
                fd.psi[:, k] - cs.psi[:, k]) / scale)
            for psi in (fd.psi, cs.psi):
                worst_oracle = max(worst_oracle, np.linalg.norm(
                    psi[:, k] - oracle) / scale)
    ok = worst_fd_cs <= 1e-6 and worst_oracle <= 1e-8
    verdict(5, ok, f"fd-vs-cs {worst_fd_cs:.2e}, "
            f"vs superposition oracle {worst_oracle:.2e}")


def test_criterion_06_one_dimensional_flatness():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        p = Ode1dProblem(mu=rng.uniform(0.05, 0.5), u=rng.uniform(0.5, 2.0),
                         intensity=rng.uniform(10, 200),
                         x_m=rng.uniform(0.25, 0.75), h=0.05)
        exact = solve_closed_form(p).outflow_value
        worst = max(worst, abs(exact - outflow_reference(p)) / abs(exact))

    mu, h = 0.05, 0.05
    grid = np.linspace(0.35, 0.8, 15)
    spreads = [flatness_study(mu, 2.0 * pe * mu, 100.0, h, grid).relative_spread
               for pe in (10.0, 20.0, 40.0)]

    m_grid = np.linspace(10, 200, 8)
    vals = np.array([solve_closed_form(
        Ode1dProblem(mu, 1.0, m, 0.4, h)).outflow_value for m in m_grid])
    coef = np.polyfit(m_grid, vals, 1)
    resid = vals - np.polyval(coef, m_grid)
    r2 = 1.0 - np.sum(resid ** 2) / np.sum((vals - vals.mean()) ** 2)

    ok = (worst <= 1e-6 and spreads[0] <= 1e-2
          and spreads[0] >= spreads[1] >= spreads[2]
          and abs(1.0 - r2) <= 1e-12)
    verdict(6, ok, f"oracle err {worst:.2e}, spreads {spreads}, "
            f"1-R^2 {abs(1.0 - r2):.2e}")


def test_criterion_07_conditioning_grows_as_width_shrinks():
    bundle = timed_bundle("conditioning-vs-h")[0]
    conds = [r["cond"] for r in bundle.tables["conditioning"]]
    ok = all(b > a for a, b in zip(conds, conds[1:]))
    verdict(7, ok, f"cond along shrinking widths: "
            f"{['%.3e' % c for c in conds]}")


def test_criterion_08_time_windows_improve_conditioning():
    bundle = timed_bundle("cond-time-localization")[0]
    rows = bundle.tables["cond_localization"]
    not_worse = [r for r in rows
                 if r["max_cond_localized"] <= r["max_cond_full"] * (1 + 1e-9)]
    strictly = [r for r in not_worse
                if r["max_cond_localized"] < r["max_cond_full"]]
    ok = len(not_worse) >= 2 and len(strictly) >= 1
    pairs = [(r["test"], f"{r['max_cond_localized']:.2e}",
              f"{r['max_cond_full']:.2e}") for r in rows]
    verdict(8, ok, f"(test, localized, full) = {pairs}")


def test_criterion_09_variant_relations(suite_bundle):
    rows = {(r["test"], r["variant"]): r
            for r in suite_bundle.tables["suite"]}
    tests = sorted(TEST_CASES)

    def cost(t, v):
        return max(rows[(t, v)]["final_cost"], 1e-10)

    cost_wins = sum(
        cost(t, "adaptive-time") <= cost(t, "adaptive")
        and cost(t, "adaptive-time") <= cost(t, "finest-time")
        for t in tests)
    dist_ok = all(
        rows[(t, "adaptive-time")]["dist_top"] <= 3
        and rows[(t, "adaptive-time")]["dist_bottom"] <= 3 for t in tests)
    solves_ok = all(
        rows[(t, "adaptive-time")]["solve_equivalents"]
        < rows[(t, "adaptive")]["solve_equivalents"]
        < rows[(t, "finest")]["solve_equivalents"]
        and rows[(t, "finest-time")]["solve_equivalents"]
        < rows[(t, "finest")]["solve_equivalents"] for t in tests)
    exponents = reference_cost_exponents()
    exp_ok = [exponents[v] for v in
              ("finest", "finest-time", "adaptive", "adaptive-time")] == \
        [14, 13, 12, 11]
    ok = cost_wins >= 7 and dist_ok and solves_ok and exp_ok
    verdict(9, ok, f"cost wins {cost_wins}/9, distance bound {dist_ok}, "
            f"solve ordering {solves_ok}, cost exponents {exp_ok}")


def test_criterion_10_threshold_trends(threshold_bundle):
    rows = {(r["eps1"], r["eps2"]): r
            for r in threshold_bundle.tables["thresholds"]}

    def overref(key):
        return rows[key]["raw_dist_top"] + rows[key]["raw_dist_bottom"]

    # lowering eps1 at fixed eps2: more over-refinement, cond within 10x
    eps1_keys = [(0.4, 0.4), (0.3, 0.4), (0.01, 0.4)]
    dists = [overref(k) for k in eps1_keys]
    conds1 = [rows[k]["mean_cond"] for k in eps1_keys]
    eps1_ok = (all(b >= a for a, b in zip(dists, dists[1:]))
               and dists[-1] > dists[0]
               and max(conds1) <= 10 * min(conds1))

    # lowering eps2 at fixed eps1: more iterations and larger cond
    eps2_keys = [(0.4, 0.4), (0.4, 0.3), (0.4, 0.01)]
    its = [rows[k]["iterations"] for k in eps2_keys]
    conds2 = [rows[k]["mean_cond"] for k in eps2_keys]
    eps2_ok = (all(b >= a for a, b in zip(its, its[1:]))
               and its[-1] > its[0]
               and all(b >= a for a, b in zip(conds2, conds2[1:]))
               and conds2[-1] > conds2[0])

    base = rows[(0.4, 0.4)]
    cond_ok = 79.95 / 10 <= base["mean_cond"] <= 79.95 * 10
    its_ok = 4 <= base["outer_iterations"] <= 10

    ok = eps1_ok and eps2_ok and cond_ok and its_ok
    verdict(10, ok,
            f"eps1 trend {eps1_ok} (over-refinement {dists}), "
            f"eps2 trend {eps2_ok} (iterations {its}, cond "
            f"{['%.2e' % c for c in conds2]}), baseline cond "
            f"{base['mean_cond']:.2e} within-order {cond_ok}, "
            f"baseline outer iterations {base['outer_iterations']} ok {its_ok}")


def test_criterion_11_mesh_resolution_contrast():
    bundle = timed_bundle("appendixA-stabilization")[0]
    rows = bundle.tables["stabilization"]
    coarse, fine = rows[0], rows[-1]
    ratio = coarse["oscillation"] / fine["oscillation"]
    ok = (ratio >= 10.0 and coarse["final_cost"] > 1e-4
          and fine["final_cost"] <= 1e-4)
    verdict(11, ok,
            f"oscillation ratio {ratio:.1f}, inverse cost coarse "
            f"{coarse['final_cost']:.2e} vs fine {fine['final_cost']:.2e}")


def test_criterion_12_basis_optimality():
    mesh = build_mesh((0.0, 8.0), (0.0, 1.0), 4, 4)
    system = assemble(mesh, PhysicalCoefficients(mu=0.1, sigma=0.1, nu=2.0,
                                                 c_up=0.1))
    grid = TimeGrid(0.0, 4.0, 41)
    model = TransportModel(system, grid)
    rng = np.random.default_rng(3)
    worst_identity, beaten = 0.0, 0
    for truth in ([("top", 0.0, 8.0, 100.0)],
                  [("bottom", 0.0, 8.0 / 3.0, 80.0)],
                  [("top", 8.0 / 3.0, 16.0 / 3.0, 50.0),
                   ("bottom", 16.0 / 3.0, 8.0, 30.0)]):
        control = nodal_control_from_segments(mesh, truth)
        snaps = collect_snapshots(system, grid, model.c0, control,
                                  model.c_up, t_m=2.0)
        x = snaps.columns
        n = x.shape[0]
        assert n <= 8
        s = np.linalg.svd(x, compute_uv=False)
        for k in range(1, min(5, n)):
            basis = truncate(snaps, system, ("sigma", s[k - 1] * 0.999))
            err = projection_error(snaps, basis)
            tail = float(np.sum(s[basis.k:] ** 2))
            worst_identity = max(worst_identity,
                                 abs(err - tail) / max(np.sum(s ** 2), 1e-30))
            candidates = [np.eye(n)[:, list(cols)] for cols in
                          itertools.combinations(range(n), basis.k)]
            candidates += [np.linalg.qr(rng.normal(size=(n, basis.k)))[0]
                           for _ in range(100)]
            for q in candidates:
                other = float(np.sum((x - q @ (q.T @ x)) ** 2))
                if other < err - 1e-10:
                    beaten += 1
    ok = worst_identity <= 1e-8 and beaten == 0
    verdict(12, ok, f"projection-error identity within {worst_identity:.2e}, "
            f"competing bases beating the basis: {beaten}")
