import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdmp.dmp import (
    CanonicalSystem, Demonstration, DivergenceError, DmpError, DmpModel, FitError,
    ForcingEvaluationError, ForcingTerm, eval_forcing, fit_lwr, path_extent,
    reproduction_rmse, rollout,
)
from cdmp.library import helix_demo, minimum_jerk_demo

import oracles


def make_model(weights, y0, g, tau=1.0, n_basis=None):
    w = np.atleast_2d(np.asarray(weights, float))
    n_basis = w.shape[1] if n_basis is None else n_basis
    forcing = ForcingTerm.evenly_spaced(n_basis, w.shape[0])
    return DmpModel(CanonicalSystem(tau=tau), ForcingTerm(forcing.centers, forcing.widths, w), y0, g)


# -- forcing ------------------------------------------------------------------


def test_single_basis_returns_its_weight():
    f = ForcingTerm([1.0], [10.0], [[2.0]])
    for s in [1.0, 0.5, 0.01]:
        assert eval_forcing(f, s)[0] == pytest.approx(2.0, abs=1e-15)


def test_zero_weights_give_zero_force():
    f = ForcingTerm.evenly_spaced(12, 3)
    s = np.linspace(0.01, 1, 50)
    assert np.all(eval_forcing(f, s) == 0.0)


def test_two_basis_value_against_multiprecision():
    f = ForcingTerm([1.0, 0.5], [10.0, 10.0], [[1.0, 3.0]])
    ref = oracles.forcing_mp([10, 10], [1.0, 0.5], [1, 3], 0.75)
    # s = 0.75 is equidistant from both centers, so the mixture is the mean
    assert float(ref) == pytest.approx(2.0, abs=1e-12)
    assert eval_forcing(f, 0.75)[0] == pytest.approx(float(ref), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.01, max_value=1.0), st.integers(min_value=0, max_value=2**31 - 1))
def test_forcing_matches_multiprecision(s, seed):
    rng = np.random.default_rng(seed)
    f = ForcingTerm.evenly_spaced(8, 1)
    w = rng.normal(0, 50, size=(1, 8))
    ref = oracles.forcing_mp(f.widths, f.centers, w[0], s)
    assert eval_forcing(f, s, weights_override=w)[0] == pytest.approx(float(ref), rel=1e-9, abs=1e-9)


def test_override_with_same_weights_is_identical():
    rng = np.random.default_rng(3)
    f = ForcingTerm.evenly_spaced(10, 2)
    f = ForcingTerm(f.centers, f.widths, rng.normal(size=(2, 10)))
    s = np.linspace(0.02, 1, 40)
    assert np.array_equal(eval_forcing(f, s), eval_forcing(f, s, weights_override=f.weights.copy()))


def test_override_shape_checked():
    f = ForcingTerm.evenly_spaced(5, 2)
    with pytest.raises(DmpError):
        eval_forcing(f, 0.5, weights_override=np.zeros((1, 5)))


def test_nonfinite_forcing_names_basis():
    f = ForcingTerm([1.0, 0.5], [10.0, 10.0], [[1.0, np.inf]])
    with pytest.raises(ForcingEvaluationError, match="basis 1"):
        eval_forcing(f, 0.7)


def test_normalized_basis_derivative():
    f = ForcingTerm.evenly_spaced(9, 1)
    s = np.linspace(0.05, 0.95, 13)
    _, dphi = f.normalized_basis(s, derivative=True)
    step = 1e-6
    fd = (f.normalized_basis(s + step) - f.normalized_basis(s - step)) / (2 * step)
    assert np.allclose(dphi, fd, atol=1e-5 * np.abs(fd).max())


def test_basis_placement():
    f = ForcingTerm.evenly_spaced(5, 1, alpha_s=4.0)
    assert np.allclose(f.centers, np.exp(-4.0 * np.arange(5) / 4))
    gaps = np.diff(f.centers)
    assert np.allclose(f.widths[:-1], 1 / (2 * gaps**2))
    assert f.widths[-1] == f.widths[-2]


# -- fitting ------------------------------------------------------------------


def test_relaxation_demo_fits_zero_weights():
    model = make_model(np.zeros((1, 15)), [0.0], [1.0])
    traj = rollout(model, 0.001, 1.0)
    demo = Demonstration(0.001, traj.y)
    fit = fit_lwr(demo, 15)
    # target forces vanish up to finite-difference error; the force scale
    # here is alpha_z * beta_z = 156
    assert np.max(np.abs(fit.weights)) < 0.05


def test_constant_demo_fits_exact_zero():
    demo = Demonstration(0.01, np.full((100, 2), 0.3))
    fit = fit_lwr(demo, 10)
    assert np.all(fit.weights == 0.0)


def test_fit_sets_endpoints_and_tau():
    demo = minimum_jerk_demo([0.2, -0.1], [1.0, 0.5], duration=2.0)
    fit = fit_lwr(demo, 20)
    assert np.array_equal(fit.y0, demo.positions[0])
    assert np.array_equal(fit.g, demo.positions[-1])
    assert fit.tau == pytest.approx(2.0)
    assert fit.beta_z == fit.alpha_z / 4


def test_minimum_jerk_reproduction():
    demo = minimum_jerk_demo([0.0], [1.0])
    fit = fit_lwr(demo, 20)
    assert reproduction_rmse(fit, demo) < 0.02 * path_extent(demo.positions)


def test_helix_reproduction():
    demo = helix_demo(turns=1.0)
    fit = fit_lwr(demo, 50)
    assert reproduction_rmse(fit, demo) < 0.02 * path_extent(demo.positions)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_fit_recovers_known_dmp_rollout(seed):
    rng = np.random.default_rng(seed)
    i = np.arange(20) / 19
    # smooth weight profiles; white-noise weights are not representable by
    # the weighted-mean regression
    w = np.array([
        rng.uniform(10, 60) * np.sin(np.pi * rng.uniform(0.5, 2) * i + rng.uniform(0, 2 * np.pi))
        for _ in range(2)
    ])
    model = make_model(w, rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))
    traj = rollout(model, 0.005, 1.0)
    demo = Demonstration(0.005, traj.y)
    fit = fit_lwr(demo, 30)
    extent = max(path_extent(demo.positions), 1e-3)
    assert reproduction_rmse(fit, demo) < 0.02 * extent


def test_too_few_samples():
    with pytest.raises(DmpError, match="at least 3 samples"):
        Demonstration(0.1, np.zeros((2, 1)))
    with pytest.raises(FitError):
        fit_lwr(Demonstration(0.1, np.zeros((5, 1))), 10)


def test_nonuniform_times_rejected():
    with pytest.raises(DmpError, match="uniform"):
        Demonstration.from_times([0.0, 0.1, 0.3, 0.4], np.zeros(4))


def test_n_basis_lower_bound():
    with pytest.raises(FitError):
        fit_lwr(minimum_jerk_demo([0.0], [1.0]), 1)


# -- rollout ------------------------------------------------------------------


def test_equilibrium_stays_put():
    model = make_model(np.zeros((2, 6)), [0.4, -0.2], [0.4, -0.2])
    traj = rollout(model, 0.01, 2.0)
    assert np.all(traj.y == model.g)


def test_critically_damped_approach():
    model = make_model(np.zeros((1, 6)), [0.0], [1.0])
    traj = rollout(model, 0.002, 2.0)
    t = traj.times
    assert np.all(np.diff(traj.y[:, 0]) >= -1e-15)
    assert np.all(traj.y[:, 0] <= 1.0 + 1e-12)
    assert abs(traj.y[-1, 0] - 1.0) < 1e-3
    ref = oracles.dmp_reference(model, t)
    assert np.max(np.abs(ref[:, 2] - traj.y[:, 0])) < 1e-6


def test_phase_closed_form():
    model = make_model(np.zeros((1, 6)), [0.0], [1.0], tau=1.3)
    traj = rollout(model, 0.001, 2.6)
    assert np.max(np.abs(traj.phase - np.exp(-4.0 * traj.times / 1.3))) < 1e-6
    k = np.argmin(np.abs(traj.times - 1.3))
    assert traj.phase[k] == pytest.approx(np.exp(-4.0), abs=1e-6)


def test_rollout_matches_adaptive_reference():
    rng = np.random.default_rng(7)
    model = make_model(rng.normal(0, 30, size=(2, 15)), [0.0, 0.0], [1.0, 0.5])
    traj = rollout(model, 0.002, 1.5)
    ref = oracles.dmp_reference(model, traj.times)
    assert np.max(np.abs(ref[:, 3:] - traj.y)) < 1e-6
    assert np.max(np.abs(ref[:, 1:3] - traj.z)) < 1e-5


def test_fourth_order_convergence():
    rng = np.random.default_rng(11)
    model = make_model(rng.normal(0, 30, size=(1, 10)), [0.0], [1.0])
    ref = oracles.dmp_reference(model, np.array([0.0, 1.0]))[-1, 2]
    errs = [abs(rollout(model, dt, 1.0).y[-1, 0] - ref) for dt in (0.04, 0.02)]
    assert errs[0] / errs[1] >= 8.0


def test_goal_attraction_when_forcing_vanishes_late():
    # every basis is comparably active as s -> 0, so the limit force is a
    # weighted mean of all weights; choose weights whose limit is zero
    rng = np.random.default_rng(5)
    model = make_model(np.zeros((1, 12)), [0.0], [1.0])
    w = rng.normal(0, 40, size=(1, 12))
    w[0, -1] = 0.0
    w[0, :-1] -= w[0, :-1].mean()
    model = model.with_weights(w)
    errs = [abs(rollout(model, 0.005, T).y[-1, 0] - 1.0) for T in (2.0, 3.0, 4.0)]
    assert errs[0] > errs[1] > errs[2]


def test_weights_override_in_rollout():
    rng = np.random.default_rng(2)
    model = make_model(rng.normal(size=(1, 5)), [0.0], [1.0])
    other = rng.normal(size=(1, 5))
    a = rollout(model, 0.01, 1.0, weights_override=other)
    b = rollout(model.with_weights(other), 0.01, 1.0)
    assert np.array_equal(a.y, b.y)
    with pytest.raises(DmpError):
        rollout(model, 0.01, 1.0, weights_override=np.zeros((2, 5)))


def test_divergence_reports_time():
    model = make_model(np.zeros((1, 4)), [0.0], [1.0])

    def blowup(y, v):
        with np.errstate(over="ignore"):
            return 1e300 * (1.0 + y**2)

    with pytest.raises(DivergenceError) as info:
        rollout(model, 0.01, 1.0, coupling=blowup)
    assert 0 < info.value.time <= 1.0


def test_rollout_argument_checks():
    model = make_model(np.zeros((1, 4)), [0.0], [1.0])
    with pytest.raises(DmpError):
        rollout(model, 0.0, 1.0)
    with pytest.raises(DmpError):
        rollout(model, 0.01, -1.0)


def test_trajectory_times_checked():
    from cdmp.dmp import Trajectory

    with pytest.raises(DmpError):
        Trajectory([0.0, 0.0], [1.0, 1.0], [[0.0], [0.0]], [[0.0], [0.0]])


def test_model_parameter_checks():
    f = ForcingTerm.evenly_spaced(4, 1)
    with pytest.raises(DmpError):
        DmpModel(CanonicalSystem(), f, [0.0], [1.0], alpha_z=-1.0)
    with pytest.raises(DmpError):
        DmpModel(CanonicalSystem(), f, [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DmpError):
        CanonicalSystem(tau=0.0)
