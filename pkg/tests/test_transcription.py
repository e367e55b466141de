import numpy as np
import pytest

from cdmp.dmp import fit_lwr, rollout
from cdmp.library import load_library_demo, load_library_scene, minimum_jerk_demo
from cdmp.nlp import check_gradients
from cdmp.sdf import CONTAIN, Capsule, Halfspace, Sphere, make_scene
from cdmp.transcription import (
    CERTIFIED, INFEASIBLE, PROFILE_COLUMNS, UNCERTIFIED, CdmpProblem, Transcription,
    TranscriptionError, most_violated_constraint, profile_to_csv, runtime_profile,
    solve_cdmp, transcribe,
)


@pytest.fixture(scope="module")
def model():
    return fit_lwr(load_library_demo("wall-jump"), 20)


@pytest.fixture(scope="module")
def wall():
    return load_library_scene("wall-jump")


@pytest.fixture(scope="module")
def wall50(model, wall):
    return solve_cdmp(CdmpProblem(model, wall, n_colloc=50))


def away_from_capsule_seams(scene, y, margin=1e-4):
    # capsule distances are C1 but not C2 across the planes through the
    # endpoints, which spoils finite differences of the Jacobian there
    ok = True
    for prim in scene.primitives:
        if isinstance(prim, Capsule):
            u = (prim.b - prim.a) / np.linalg.norm(prim.b - prim.a)
            for end in (prim.a, prim.b):
                ok &= bool(np.all(np.abs((y - end) @ u) > margin))
    return ok


# -- construction -------------------------------------------------------------


def test_problem_checks(model, wall):
    with pytest.raises(TranscriptionError):
        CdmpProblem(model, wall, n_colloc=1)
    with pytest.raises(TranscriptionError):
        CdmpProblem(model, wall, epsilon=0.0)
    with pytest.raises(TranscriptionError):
        CdmpProblem(model, make_scene([Sphere([0.0, 0.0, 0.0], 1.0)]))


def test_start_outside_safety_set_rejected(model):
    scene = make_scene([Sphere([0.0, 0.0], 0.1)])
    with pytest.raises(TranscriptionError, match="outside the safety set"):
        CdmpProblem(model, scene)


def test_layout_and_initial_guess(model, wall):
    p = CdmpProblem(model, wall, n_colloc=12)
    assert p.horizon == pytest.approx(1.5 * model.tau)
    assert p.n_vars == model.weights.size + 11 * 5
    zeta, states = p.unpack(p.initial_guess())
    assert np.all(zeta == 0)
    assert np.array_equal(states[0], p.initial_state())
    assert np.allclose(states[:, 3:], p.reference.y)
    assert np.array_equal(p.unpack(p.pack(zeta, states))[1], states)


def test_reference_is_nominal_rollout(model, wall):
    p = CdmpProblem(model, wall, n_colloc=11)
    r = rollout(model, p.dt / 20, p.horizon)
    assert np.allclose(p.reference.y, r.y[::20])
    assert np.allclose(p.reference.times, p.times)


def test_nominal_defects_shrink_quadratically(model, wall):
    errs = []
    for n in (21, 41, 81):
        p = CdmpProblem(model, wall, n_colloc=n)
        errs.append(np.abs(Transcription(p).dynamics(p.initial_guess(), jac=False)).max())
    # defects are in rate units, so O(dt^2) shows as a ratio near 4
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


def test_jacobians_match_finite_differences(model, wall):
    p = CdmpProblem(model, wall, n_colloc=8, epsilon=0.1)
    nlp = transcribe(p)
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 20:
        v = nlp.x0 + rng.normal(0, 0.02, nlp.n_vars)
        if not away_from_capsule_seams(wall, p.unpack(v)[1][:, 3:]):
            continue
        assert check_gradients(nlp, v).error < 1e-4
        checked += 1


def test_value_only_callables_agree(model, wall):
    p = CdmpProblem(model, wall, n_colloc=6, epsilon=0.2)
    tr = Transcription(p)
    v = p.initial_guess() + np.random.default_rng(1).normal(0, 0.01, p.n_vars)
    assert tr.objective(v, jac=False) == tr.objective(v)[0]
    assert np.array_equal(tr.dynamics(v, jac=False), tr.dynamics(v)[0])
    assert np.array_equal(tr.inequalities(v, jac=False), tr.inequalities(v)[0])


def test_constraint_labels(model, wall):
    p = CdmpProblem(model, wall, n_colloc=5, epsilon=0.1)
    labels = Transcription(p).constraint_labels()
    assert labels[:5] == [("zbf", k) for k in range(5)]
    assert labels[5:10] == [("deviation", k) for k in range(5)]
    assert labels[-1] == ("goal", 4)
    assert len(labels) == Transcription(p).inequalities(p.initial_guess(), jac=False).size


def test_most_violated_points_at_the_wall(model, wall):
    p = CdmpProblem(model, wall, n_colloc=20)
    worst = most_violated_constraint(p, p.initial_guess())
    assert worst["kind"] == "zbf"
    y = p.reference.y[worst["grid_index"]]
    assert abs(y[0] - 0.5) < 0.15


# -- solving ------------------------------------------------------------------


def test_wall_jump_fine_grid_certified(wall50, model, wall):
    sol = wall50
    assert sol.status == CERTIFIED
    assert sol.dense_min_h > 0
    assert sol.dense_min_residual >= -1e-6
    assert np.linalg.norm(sol.dense.y[-1] - model.g) < 1e-2
    assert np.min(wall.h(sol.grid_y)) > 0


def test_wall_jump_coarse_grid_uncertified(model, wall):
    sol = solve_cdmp(CdmpProblem(model, wall, n_colloc=10))
    assert sol.solve_report.success
    assert sol.status == UNCERTIFIED
    assert sol.dense_min_h < 0
    assert sol.dense_first_violation is not None


def test_perturbed_model_only_changes_weights(wall50, model):
    pm = wall50.perturbed_model
    assert np.array_equal(pm.weights, model.weights - wall50.zeta)
    assert np.array_equal(pm.y0, model.y0) and np.array_equal(pm.g, model.g)
    assert pm.tau == model.tau


def test_collocation_states_match_reintegration(wall50):
    dense_at_grid = wall50.dense.y[::20]
    gap = np.max(np.abs(dense_at_grid - wall50.grid_y))
    dt = wall50.times[1]
    # discretization error for dt ~ 0.03 s
    assert gap < 10 * dt**2


def test_grid_refinement_stays_feasible(wall50, model, wall):
    sol = solve_cdmp(CdmpProblem(model, wall, n_colloc=60), warm_start=wall50)
    assert sol.solve_report.success
    assert sol.certified


def test_warm_start_shape_checked(wall50, wall):
    other = fit_lwr(load_library_demo("wall-jump"), 10)
    with pytest.raises(TranscriptionError):
        CdmpProblem(other, wall).guess_from(wall50)


def test_disc_through_path(model):
    scene = load_library_scene("disc-midpath")
    p = CdmpProblem(model, scene, n_colloc=50)
    sol = solve_cdmp(p)
    assert sol.solve_report.success
    assert np.min(scene.h(sol.grid_y)) >= 0
    assert sol.dense_min_h >= -1e-3
    assert np.linalg.norm(sol.dense.y[-1] - model.g) < 1e-2


def test_deviation_bound(model, wall, wall50):
    p = CdmpProblem(model, wall, n_colloc=50, epsilon=0.1)
    sol = solve_cdmp(p)
    assert sol.certified
    dev = np.linalg.norm(sol.grid_y - p.reference.y, axis=1)
    assert dev.max() <= 0.1 + 1e-6
    # the bound is active: the unconstrained detour goes further out
    free = np.linalg.norm(wall50.grid_y - p.reference.y, axis=1)
    assert free.max() > 0.1


def test_obstacle_free_gives_zero_perturbation(model):
    scene = make_scene([Halfspace([0.0, 1.0], -10.0)])
    p = CdmpProblem(model, scene, n_colloc=30, goal_tol=None)
    sol = solve_cdmp(p)
    assert sol.certified
    assert np.linalg.norm(sol.zeta) <= 1e-3 * (1 + np.linalg.norm(model.weights))
    nominal = rollout(model, p.dt / 20, p.horizon)
    assert np.max(np.abs(sol.dense.y - nominal.y)) < 1e-3


def test_goal_outside_contain_sphere_is_infeasible(model):
    # contain sphere of radius below |y0 - g| / 2 around the start
    scene = make_scene([Sphere([0.0, 0.0], 0.3, polarity=CONTAIN)], gamma=5.0)
    sol = solve_cdmp(CdmpProblem(model, scene, n_colloc=20))
    assert sol.status == INFEASIBLE
    assert not sol.certified
    assert sol.most_violated["kind"] in ("zbf", "goal", "dynamics")
    assert 0 <= sol.most_violated["grid_index"] < 20


def test_report_fields(wall50):
    rep = wall50.to_report()
    assert rep["certified"] is True
    assert rep["status"] == CERTIFIED
    assert rep["final_goal_distance"] < 1e-2
    assert rep["solver"]["status"] in ("optimal", "feasible-suboptimal")


# -- runtime profile ------------------------------------------------------------


def test_runtime_profile_rows(model, wall):
    rows = runtime_profile(wall, model, [2, 10])
    assert [r["n"] for r in rows] == [2, 10]
    for r in rows:
        assert set(r) == set(PROFILE_COLUMNS)
        assert r["wall_time"] >= 0
    assert rows[1]["status"] == UNCERTIFIED
    again = runtime_profile(wall, model, [2, 10])
    assert [r["certified"] for r in again] == [r["certified"] for r in rows]
    assert [r["status"] for r in again] == [r["status"] for r in rows]
    csv = profile_to_csv(rows).splitlines()
    assert csv[0] == ",".join(PROFILE_COLUMNS)
    assert len(csv) == 3


def test_runtime_profile_requires_sorted(model, wall):
    with pytest.raises(TranscriptionError):
        runtime_profile(wall, model, [20, 10])


def test_runtime_profile_records_errors(model):
    # start inside the obstacle: every row carries the construction error
    scene = make_scene([Sphere([0.0, 0.0], 0.1)])
    rows = runtime_profile(scene, model, [5])
    assert rows[0]["error"]
    assert not rows[0]["certified"]


def test_one_dimensional_problem():
    model = fit_lwr(minimum_jerk_demo([0.0], [1.0]), 10)
    scene = make_scene([Halfspace([-1.0], -0.8)], gamma=5.0)
    sol = solve_cdmp(CdmpProblem(model, scene, n_colloc=30, goal_tol=None))
    assert sol.solve_report.success
    assert np.max(sol.dense.y) < 0.8
