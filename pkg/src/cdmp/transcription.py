"""Collocation transcription of the constrained-DMP problem.

The weight perturbation ``zeta`` (shape ``(d, N)``) replaces the forcing
weights ``w`` by ``w - zeta``.  On a uniform grid of ``n`` points the
decision vector is ``[zeta.ravel(); x_1; ...; x_{n-1}]`` with
``x_k = (s_k, z_k, y_k)`` and ``x_0`` fixed to the initial condition.

Constraints:

* trapezoidal dynamics defects between consecutive grid points, divided by
  the step so they are measured in rate units,
* the barrier inequality ``grad_h(y_k) . z_k / tau + gamma h(y_k) >= margin``
  at every grid point; inside obstacles the velocity term is faded out by a
  smoothstep of ``h`` so the rows stay continuous across medial axes,
* optionally ``||y_k - y_ref_k|| <= epsilon`` at every grid point,
* optionally ``||y_{n-1} - g|| <= goal_tol``.

The objective is ``dt * sum_k zeta_weight * ||zeta||^2 / horizon`` over the
grid plus the terminal cost ``||y_{n-1} - g||^2``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dmp import DmpModel, Trajectory, rollout
from .nlp import FEASIBLE_SUBOPTIMAL, INFEASIBLE, OPTIMAL, NlpProblem, SolveReport, solve
from .sdf import SafetyScene

log = logging.getLogger(__name__)

CERTIFIED = "certified"
UNCERTIFIED = "uncertified"
FAILED = "failed"

DENSE_SUBSTEPS = 20
RESIDUAL_TOL = 1e-6
INTERIOR_FADE = 0.05
DEFAULT_ZBF_MARGIN = 0.01
DEFAULT_GOAL_TOL = 5e-3


class TranscriptionError(ValueError):
    """The problem cannot be transcribed (e.g. the start is unsafe)."""


@dataclass
class CdmpProblem:
    """Constrained-DMP instance.

    Parameters
    ----------
    model : DmpModel
        Fitted primitive whose weights are perturbed.
    scene : SafetyScene
    n_colloc : int
        Number of grid points including the fixed initial one.
    horizon : float, optional
        Optimized time window; defaults to ``1.5 * tau``.
    epsilon : float, optional
        Maximum distance from the nominal trajectory at grid points.
    zeta_weight : float
        Weight of ``||zeta||**2`` in the objective.
    zbf_margin : float
        Lower bound imposed on the barrier residual at grid points.  The
        slack absorbs part of the between-grid error.
    goal_tol : float, optional
        Bound on the terminal distance to the goal; ``None`` drops the row.
    """

    model: DmpModel
    scene: SafetyScene
    n_colloc: int = 50
    horizon: Optional[float] = None
    epsilon: Optional[float] = None
    zeta_weight: float = 1e-3
    zbf_margin: float = DEFAULT_ZBF_MARGIN
    goal_tol: Optional[float] = DEFAULT_GOAL_TOL
    reference: Trajectory = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_colloc < 2:
            raise TranscriptionError("n_colloc must be at least 2")
        if self.epsilon is not None and not self.epsilon > 0:
            raise TranscriptionError("epsilon must be positive")
        if self.goal_tol is not None and not self.goal_tol > 0:
            raise TranscriptionError("goal_tol must be positive")
        if self.scene.dim != self.model.dim:
            raise TranscriptionError(
                f"scene dimension {self.scene.dim} != model dimension {self.model.dim}"
            )
        if self.horizon is None:
            self.horizon = 1.5 * self.model.tau
        h0 = float(self.scene.h(self.model.y0))
        if not h0 > 0:
            raise TranscriptionError(
                f"start {self.model.y0.tolist()} is outside the safety set (h={h0:.4g})"
            )
        fine = rollout(self.model, self.dt / DENSE_SUBSTEPS, self.horizon)
        idx = np.arange(self.n_colloc) * DENSE_SUBSTEPS
        self.reference = Trajectory(fine.times[idx], fine.phase[idx], fine.z[idx], fine.y[idx])

    @property
    def dt(self) -> float:
        return self.horizon / (self.n_colloc - 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_colloc)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def state_size(self) -> int:
        return 1 + 2 * self.dim

    @property
    def n_zeta(self) -> int:
        return self.model.weights.size

    @property
    def n_vars(self) -> int:
        return self.n_zeta + (self.n_colloc - 1) * self.state_size

    def initial_state(self) -> np.ndarray:
        return np.concatenate([[1.0], np.zeros(self.dim), self.model.y0])

    def pack(self, zeta, states) -> np.ndarray:
        """Decision vector from ``zeta`` (d, N) and grid states (n, 1+2d)."""
        return np.concatenate([np.asarray(zeta, float).ravel(), np.asarray(states, float)[1:].ravel()])

    def unpack(self, v):
        """Inverse of :meth:`pack`; returns ``(zeta, states)`` with ``states[0] = x_0``."""
        v = np.asarray(v, dtype=float)
        zeta = v[: self.n_zeta].reshape(self.model.weights.shape)
        states = np.empty((self.n_colloc, self.state_size))
        states[0] = self.initial_state()
        states[1:] = v[self.n_zeta:].reshape(self.n_colloc - 1, self.state_size)
        return zeta, states

    def initial_guess(self) -> np.ndarray:
        ref = self.reference
        states = np.column_stack([ref.phase, ref.z, ref.y])
        return self.pack(np.zeros(self.model.weights.shape), states)

    def guess_from(self, solution: "CdmpSolution") -> np.ndarray:
        """Decision vector interpolated from a solution on another grid."""
        if solution.zeta.shape != self.model.weights.shape:
            raise TranscriptionError("solution belongs to a model of a different shape")
        t = self.times
        src = np.clip(t, 0.0, solution.times[-1])
        states = np.column_stack([
            np.interp(src, solution.times, solution.states[:, j])
            for j in range(self.state_size)
        ])
        states[0] = self.initial_state()
        return self.pack(solution.zeta, states)


@dataclass
class CdmpSolution:
    status: str
    zeta: np.ndarray
    times: np.ndarray
    states: np.ndarray
    solve_report: SolveReport
    dense: Optional[Trajectory] = None
    dense_min_h: float = float("nan")
    dense_min_residual: float = float("nan")
    dense_first_violation: Optional[float] = None
    most_violated: Optional[dict] = None
    model: Optional[DmpModel] = None

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    @property
    def perturbed_model(self) -> DmpModel:
        return self.model.with_weights(self.model.weights - self.zeta)

    @property
    def grid_y(self) -> np.ndarray:
        d = self.zeta.shape[0]
        return self.states[:, 1 + d:]

    def to_report(self) -> dict:
        rep = {
            "status": self.status,
            "certified": self.certified,
            "dense_min_h": self.dense_min_h,
            "dense_min_residual": self.dense_min_residual,
            "dense_first_violation_time": self.dense_first_violation,
            "zeta_norm": float(np.linalg.norm(self.zeta)),
            "most_violated": self.most_violated,
            "solver": self.solve_report.to_dict(),
        }
        if self.dense is not None and self.model is not None:
            rep["final_goal_distance"] = float(np.linalg.norm(self.dense.y[-1] - self.model.g))
        return rep


class Transcription:
    """Evaluates objective, constraints and their derivatives for a problem."""

    def __init__(self, problem: CdmpProblem):
        self.p = problem
        model = problem.model
        self.tau = model.tau
        self.d = model.dim
        self.N = model.forcing.n_basis
        self.n = problem.n_colloc
        self.m = problem.state_size
        self.ref_y = problem.reference.y
        self._cache_key = None
        self._cache = None

    # shared evaluation of states, forcing and dynamics
    def _evaluate(self, v, order=2):
        v = np.array(v, dtype=float)
        key = v.tobytes()
        if key == self._cache_key and self._cache["order"] >= order:
            return self._cache
        p = self.p
        model = p.model
        d, tau = self.d, self.tau
        zeta, X = p.unpack(v)
        s, z, y = X[:, 0], X[:, 1:1 + d], X[:, 1 + d:]
        W = model.weights - zeta
        phi, dphi = model.forcing.normalized_basis(s, derivative=True)
        force = phi @ W.T
        F = np.empty_like(X)
        F[:, 0] = -model.canonical.alpha_s * s / tau
        F[:, 1:1 + d] = (model.alpha_z * (model.beta_z * (model.g - y) - z) + force) / tau
        F[:, 1 + d:] = z / tau
        h, gh, Hh = p.scene.evaluate(y, order=max(order, 1))
        out = dict(zeta=zeta, X=X, s=s, z=z, y=y, W=W, phi=phi, dphi=dphi, F=F, h=h, gh=gh, Hh=Hh,
                   order=max(order, 1))
        self._cache_key, self._cache = key, out
        return out

    def objective(self, v, jac=True):
        p = self.p
        e = self._evaluate(v, order=0)
        zeta = e["zeta"]
        miss = e["y"][-1] - p.model.g
        # dt * sum over the n grid points of zeta_weight * |zeta|^2 / horizon
        wz = p.zeta_weight * self.n * p.dt / p.horizon
        f = wz * np.sum(zeta**2) + miss @ miss
        if not jac:
            return f
        g = np.zeros(v.size)
        g[: p.n_zeta] = 2.0 * wz * zeta.ravel()
        g[-self.d:] += 2.0 * miss
        return f, g

    def _state_jacobians(self, e):
        """Per-point df/dx blocks (n, m, m)."""
        p, d, tau = self.p, self.d, self.tau
        model = p.model
        A = np.zeros((self.n, self.m, self.m))
        A[:, 0, 0] = -model.canonical.alpha_s / tau
        A[:, 1:1 + d, 0] = (e["dphi"] @ e["W"].T) / tau
        eye = np.eye(d)
        A[:, 1:1 + d, 1:1 + d] = -model.alpha_z / tau * eye
        A[:, 1:1 + d, 1 + d:] = -model.alpha_z * model.beta_z / tau * eye
        A[:, 1 + d:, 1:1 + d] = eye / tau
        return A

    def dynamics(self, v, jac=True):
        p = self.p
        e = self._evaluate(v, order=0)
        n, m, d, N = self.n, self.m, self.d, self.N
        half = 0.5 * p.dt
        X, F = e["X"], e["F"]
        # defects in rate units so their size does not shrink with the grid
        defects = (X[1:] - X[:-1] - half * (F[1:] + F[:-1])).ravel() / p.dt
        if not jac:
            return defects

        A = self._state_jacobians(e)
        eye = np.eye(m)
        k = np.arange(n - 1)
        Jx = np.zeros((n - 1, m, n - 1, m))
        Jx[k, :, k, :] = eye - half * A[1:]
        if n > 2:
            Jx[k[1:], :, k[1:] - 1, :] = -eye - half * A[1:-1]
        # d f_j / d zeta_{j,i} = -phi_i / tau on the z rows
        phi_sum = (e["phi"][1:] + e["phi"][:-1]) / self.tau  # (n-1, N)
        Jz = np.zeros((n - 1, m, d, N))
        for j in range(d):
            Jz[:, 1 + j, j, :] = half * phi_sum
        J = np.concatenate(
            [Jz.reshape((n - 1) * m, d * N), Jx.reshape((n - 1) * m, (n - 1) * m)], axis=1
        )
        return defects, J / p.dt

    def inequalities(self, v, jac=True):
        p = self.p
        e = self._evaluate(v, order=2 if jac else 1)
        n, m, d = self.n, self.m, self.d
        nz = p.n_zeta
        ycols = nz + (np.arange(1, n) - 1) * m + 1 + d  # first y column of x_k, k >= 1
        rows = []
        jacs = []

        gamma, tau = p.scene.gamma, self.tau
        z, y, h, gh = e["z"], e["y"], e["h"], e["gh"]
        # the velocity term fades out inside obstacles, where grad h jumps
        # across the medial axis; rows are unchanged wherever h >= 0
        t = np.clip(h / INTERIOR_FADE + 1.0, 0.0, 1.0)
        fade = t * t * (3.0 - 2.0 * t)
        rate = np.sum(gh * z, axis=1) / tau
        rows.append(fade * rate + gamma * h - p.zbf_margin)
        if jac:
            dfade = 6.0 * t * (1.0 - t) / INTERIOR_FADE
            dy = (fade[:, None] * np.einsum("kij,kj->ki", e["Hh"], z) / tau
                  + (gamma + dfade * rate)[:, None] * gh)
            dz = fade[:, None] * gh / tau
            Jr = np.zeros((n, v.size))
            for kk in range(1, n):
                c = ycols[kk - 1]
                Jr[kk, c - d:c] = dz[kk]
                Jr[kk, c:c + d] = dy[kk]
            jacs.append(Jr)

        if p.epsilon is not None:
            eps = p.epsilon
            diff = y - self.ref_y
            rows.append((eps**2 - np.sum(diff**2, axis=1)) / (2 * eps))
            if jac:
                Jd = np.zeros((n, v.size))
                for kk in range(1, n):
                    c = ycols[kk - 1]
                    Jd[kk, c:c + d] = -diff[kk] / eps
                jacs.append(Jd)

        if p.goal_tol is not None:
            tol = p.goal_tol
            miss = y[-1] - p.model.g
            rows.append(np.array([(tol**2 - miss @ miss) / (2 * tol)]))
            if jac:
                Jg = np.zeros((1, v.size))
                Jg[0, -d:] = -miss / tol
                jacs.append(Jg)
        values = np.concatenate(rows)
        if not jac:
            return values
        return values, np.concatenate(jacs, axis=0)

    def constraint_labels(self):
        """``(kind, grid index)`` for every inequality row, in order."""
        labels = [("zbf", k) for k in range(self.n)]
        if self.p.epsilon is not None:
            labels += [("deviation", k) for k in range(self.n)]
        if self.p.goal_tol is not None:
            labels.append(("goal", self.n - 1))
        return labels


def transcribe(problem: CdmpProblem) -> NlpProblem:
    """Assemble the nonlinear program for ``problem`` (initial guess: nominal rollout)."""
    tr = Transcription(problem)
    nlp = NlpProblem(
        n_vars=problem.n_vars,
        objective=tr.objective,
        x0=problem.initial_guess(),
        eq_constraints=tr.dynamics,
        ineq_constraints=tr.inequalities,
        objective_value=lambda v: tr.objective(v, jac=False),
        eq_values=lambda v: tr.dynamics(v, jac=False),
        ineq_values=lambda v: tr.inequalities(v, jac=False),
    )
    nlp.transcription = tr
    return nlp


def most_violated_constraint(problem: CdmpProblem, v) -> dict:
    """Locate the largest violation (dynamics defect or inequality) at ``v``."""
    tr = Transcription(problem)
    defects, _ = tr.dynamics(v)
    ineq, _ = tr.inequalities(v)
    m = problem.state_size
    worst_eq = int(np.argmax(np.abs(defects)))
    eq_val = float(abs(defects[worst_eq]))
    worst_in = int(np.argmin(ineq))
    in_val = float(-ineq[worst_in])
    if eq_val >= in_val:
        comp = worst_eq % m
        d = problem.dim
        name = "s" if comp == 0 else (f"z{comp}" if comp <= d else f"y{comp - d}")
        return {"kind": "dynamics", "component": name, "grid_index": worst_eq // m + 1,
                "violation": eq_val}
    kind, k = tr.constraint_labels()[worst_in]
    return {"kind": kind, "grid_index": k, "violation": in_val}


def dense_check(scene: SafetyScene, traj: Trajectory, tau: float):
    """Minimum barrier value and residual along a trajectory.

    Returns ``(min_h, min_residual, first_violation_time)``; the last is the
    first sample time with ``h <= 0`` or ``None``.
    """
    h, grad, _ = scene.evaluate(traj.y, order=1)
    resid = np.sum(grad * traj.z, axis=1) / tau + scene.gamma * h
    bad = np.flatnonzero(h <= 0)
    first = float(traj.times[bad[0]]) if bad.size else None
    return float(np.min(h)), float(np.min(resid)), first


def solve_cdmp(problem: CdmpProblem, warm_start: Optional[CdmpSolution] = None,
               **solver_opts) -> CdmpSolution:
    """Solve the transcription and certify the result by dense re-integration.

    The solution is ``certified`` when the perturbed primitive, integrated
    with step ``dt / 20`` over the horizon, keeps ``h > 0`` and a barrier
    residual of at least ``-1e-6`` at every sample.  ``warm_start`` seeds
    the solver with a solution interpolated from another grid instead of
    the nominal rollout.
    """
    started = time.perf_counter()
    nlp = transcribe(problem)
    if warm_start is not None:
        nlp.x0 = problem.guess_from(warm_start)
    report = solve(nlp, **solver_opts)
    zeta, states = problem.unpack(report.x_star)
    sol = CdmpSolution(
        status=FAILED,
        zeta=zeta,
        times=problem.times,
        states=states,
        solve_report=report,
        model=problem.model,
    )
    if report.status not in (OPTIMAL, FEASIBLE_SUBOPTIMAL):
        sol.most_violated = most_violated_constraint(problem, report.x_star)
        log.warning("CDMP solve %s; most violated: %s", report.status, sol.most_violated)
        sol.status = INFEASIBLE if report.status == INFEASIBLE else FAILED
        return sol

    model = problem.model
    dense = rollout(
        model, problem.dt / DENSE_SUBSTEPS, problem.horizon,
        weights_override=model.weights - zeta,
    )
    min_h, min_res, first = dense_check(problem.scene, dense, model.tau)
    sol.dense = dense
    sol.dense_min_h, sol.dense_min_residual, sol.dense_first_violation = min_h, min_res, first
    sol.status = CERTIFIED if (min_h > 0 and min_res >= -RESIDUAL_TOL) else UNCERTIFIED
    log.info(
        "CDMP n=%d %s: dense min h=%.4g, min residual=%.4g (%.2fs)",
        problem.n_colloc, sol.status, min_h, min_res, time.perf_counter() - started,
    )
    return sol


PROFILE_COLUMNS = ("n", "wall_time", "certified", "status", "error")


def runtime_profile(scene: SafetyScene, model: DmpModel, n_values, **problem_opts) -> list:
    """Solve the same instance for each grid size and time it.

    Returns one dict per ``n`` with the keys of :data:`PROFILE_COLUMNS`.  A
    failing run becomes a row with its error message instead of aborting.
    """
    n_values = [int(n) for n in n_values]
    if n_values != sorted(n_values):
        raise TranscriptionError("n_values must be sorted ascending")
    solver_opts = problem_opts.pop("solver_opts", {})
    rows = []
    for n in n_values:
        started = time.perf_counter()
        row = {"n": n, "certified": False, "status": FAILED, "error": ""}
        try:
            sol = solve_cdmp(CdmpProblem(model, scene, n_colloc=n, **problem_opts), **solver_opts)
            row["status"] = sol.status
            row["certified"] = sol.certified
        except (ValueError, ArithmeticError) as exc:
            row["error"] = str(exc)
        row["wall_time"] = time.perf_counter() - started
        rows.append(row)
    return rows


def profile_to_csv(rows) -> str:
    lines = [",".join(PROFILE_COLUMNS)]
    for r in rows:
        err = str(r.get("error", "")).replace('"', "'")
        lines.append(
            f"{r['n']},{r['wall_time']:.6f},{str(bool(r['certified'])).lower()},{r['status']},\"{err}\""
        )
    return "\n".join(lines) + "\n"
