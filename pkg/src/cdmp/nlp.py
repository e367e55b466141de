"""Augmented-Lagrangian solver for small dense nonlinear programs.

Problems have the form::

    minimize f(x)  s.t.  c_eq(x) = 0,  c_in(x) >= 0,  lb <= x <= ub

Equality and inequality constraints are handled by an augmented
Lagrangian with a quadratic penalty; bounds are left to the inner
minimizer, a projected quasi-Newton method.  Each inner step minimizes a
piecewise-quadratic model built from the linearized constraints and a
damped BFGS approximation of the Lagrangian Hessian.  All derivatives are
supplied by the caller; no second derivatives are needed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
FEASIBLE_SUBOPTIMAL = "feasible-suboptimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"


class NlpError(ArithmeticError):
    """A problem callable returned a non-finite value."""

    def __init__(self, what: str, x: np.ndarray):
        super().__init__(f"{what} is not finite at x={np.array2string(x, threshold=20)}")
        self.x = x


ValueGrad = Callable[[np.ndarray], tuple]


@dataclass
class NlpProblem:
    """Dense nonlinear program.

    ``objective(x)`` returns ``(f, grad)``; ``eq_constraints(x)`` and
    ``ineq_constraints(x)`` return ``(values, jacobian)`` with the Jacobian
    of shape ``(m, n_vars)``.  The optional ``*_values`` callables return the
    values alone; :func:`check_gradients` uses them when present.
    """

    n_vars: int
    objective: ValueGrad
    x0: np.ndarray
    eq_constraints: Optional[ValueGrad] = None
    ineq_constraints: Optional[ValueGrad] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    objective_value: Optional[Callable] = None
    eq_values: Optional[Callable] = None
    ineq_values: Optional[Callable] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.size != self.n_vars:
            raise ValueError(f"x0 has {self.x0.size} entries, expected {self.n_vars}")
        lo = -np.inf if self.lower is None else self.lower
        hi = np.inf if self.upper is None else self.upper
        self.lower = np.broadcast_to(np.asarray(lo, float), (self.n_vars,)).copy()
        self.upper = np.broadcast_to(np.asarray(hi, float), (self.n_vars,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def eval_objective(self, x):
        f, g = self.objective(x)
        f = float(f)
        g = np.asarray(g, dtype=float).reshape(self.n_vars)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NlpError("objective", x)
        return f, g

    def _eval_block(self, fn, what, x):
        if fn is None:
            return np.zeros(0), np.zeros((0, self.n_vars))
        c, J = fn(x)
        c = np.asarray(c, dtype=float).reshape(-1)
        J = np.asarray(J, dtype=float).reshape(c.size, self.n_vars)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(J))):
            raise NlpError(what, x)
        return c, J

    def eval_eq(self, x):
        return self._eval_block(self.eq_constraints, "equality constraints", x)

    def eval_ineq(self, x):
        return self._eval_block(self.ineq_constraints, "inequality constraints", x)


@dataclass
class SolveReport:
    status: str
    x_star: np.ndarray
    objective_value: float
    max_eq_violation: float
    min_ineq_residual: float
    iterations: int
    wall_time: float
    kkt_residual: float = float("nan")
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ineq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inner_iterations: int = 0
    penalty: float = float("nan")
    # (merit at the start, merit at the end) of each inner minimization
    merit_history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE_SUBOPTIMAL)

    def to_dict(self, include_x: bool = False) -> dict:
        out = asdict(self)
        for key in ("x_star", "eq_multipliers", "ineq_multipliers"):
            out.pop(key)
        out["merit_history"] = [list(map(float, m)) for m in self.merit_history]
        if include_x:
            out["x_star"] = self.x_star.tolist()
        return out


def _violation(c_eq, c_in, lam=None, rho=None):
    """Infinity-norm constraint violation.

    With multipliers, the inequality part measures ``min(c, lam / rho)``
    so that inactive constraints with zero multipliers count as satisfied
    and active ones must satisfy complementarity.
    """
    v = np.max(np.abs(c_eq), initial=0.0)
    if c_in.size:
        if lam is None:
            v = max(v, np.max(-c_in, initial=0.0))
        else:
            v = max(v, np.max(np.abs(np.minimum(c_in, lam / rho)), initial=0.0))
    return float(v)


def _projected_gradient(x, g, lower, upper):
    return x - np.clip(x - g, lower, upper)


@dataclass
class _Point:
    """Derivative data of the merit at one iterate."""

    grad_f: np.ndarray
    c_eq: np.ndarray
    J_eq: np.ndarray
    c_in: np.ndarray
    J_in: np.ndarray
    active: np.ndarray
    mu_hat: np.ndarray
    lam_hat: np.ndarray

    def lagrangian_grad(self, mu_hat, lam_hat):
        return self.grad_f - self.J_eq.T @ mu_hat - self.J_in.T @ lam_hat


class _Merit:
    """Augmented Lagrangian for fixed multipliers and penalty.

    Inequalities use the shifted quadratic penalty: with ``t = c - lam/rho``
    a row contributes ``-lam c + rho/2 c**2`` when ``t < 0`` and
    ``-lam**2 / (2 rho)`` otherwise.
    """

    def __init__(self, problem: NlpProblem, mu, lam, rho):
        self.problem, self.mu, self.lam, self.rho = problem, mu, lam, rho

    def __call__(self, x):
        pr, mu, lam, rho = self.problem, self.mu, self.lam, self.rho
        f, g = pr.eval_objective(x)
        ce, Je = pr.eval_eq(x)
        ci, Ji = pr.eval_ineq(x)
        val = f - mu @ ce + 0.5 * rho * (ce @ ce)
        mu_hat = mu - rho * ce
        lam_hat = np.zeros(ci.size)
        act = np.zeros(ci.size, dtype=bool)
        if ci.size:
            act = ci - lam / rho < 0
            val += np.sum(np.where(act, -lam * ci + 0.5 * rho * ci**2, -(lam**2) / (2 * rho)))
            lam_hat = np.where(act, lam - rho * ci, 0.0)
        grad = g - Je.T @ mu_hat - Ji.T @ lam_hat
        return float(val), grad, _Point(g, ce, Je, ci, Ji, act, mu_hat, lam_hat)

    def penalty_curvature(self, point):
        """Gauss-Newton part ``rho * (Je^T Je + Ja^T Ja)`` of the Hessian."""
        Ja = point.J_in[point.active]
        return self.rho * (point.J_eq.T @ point.J_eq + Ja.T @ Ja)


class _LagrangianBfgs:
    """Damped dense BFGS approximation of the Lagrangian Hessian.

    Kept across outer iterations; Powell damping keeps it positive
    definite on nonconvex problems.
    """

    def __init__(self, n):
        self.B = np.zeros((n, n))
        self.started = False

    def update(self, s, y):
        ss = s @ s
        if ss == 0.0:
            return
        if not self.started:
            # start near zero: the penalty curvature carries the early steps
            self.B = 1e-6 * np.eye(s.size)
            self.started = True
        Bs = self.B @ s
        sBs = s @ Bs
        sy = s @ y
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1 - theta) * Bs
            sy = s @ y
        if sy <= 1e-14 * ss or sBs <= 0:
            return
        self.B += np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs


def _solve_spd(A, b):
    """Solve ``A p = b`` for symmetric A, regularizing until positive definite."""
    shift = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(A))))) if A.size else 1.0
    eye = np.eye(A.shape[0])
    for _ in range(30):
        try:
            L = np.linalg.cholesky(A + shift * eye)
        except np.linalg.LinAlgError:
            shift = max(1e-12 * scale, 10.0 * shift)
            continue
        return _cho_solve(L, b)
    return b / scale


def _cho_solve(L, b):
    w = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, w, lower=False, check_finite=False)


def _model_step(merit: _Merit, pt: _Point, M, damp, free, max_passes=20):
    """Minimize the piecewise-quadratic model of the merit around the iterate.

    Every inequality row enters through its linearization, so rows that
    are satisfied now but would be crossed by the step are seen by the
    model.  The active set is found by semi-smooth Newton passes.

    Returns ``(p, predicted_decrease)``.
    """
    mu, lam, rho = merit.mu, merit.lam, merit.rho
    n = pt.grad_f.size
    Je, Ji = pt.J_eq, pt.J_in
    shift = lam / rho

    def model(p):
        ce = pt.c_eq + Je @ p
        ci = pt.c_in + Ji @ p
        val = pt.grad_f @ p + 0.5 * p @ (M @ p) - mu @ ce + 0.5 * rho * (ce @ ce)
        if ci.size:
            val += np.sum(np.where(ci < shift, -lam * ci + 0.5 * rho * ci**2, -(lam**2) / (2 * rho)))
        return val

    idx = np.flatnonzero(free)
    base = (M + damp * np.eye(n) + rho * (Je.T @ Je))[np.ix_(idx, idx)]
    rhs_base = -(pt.grad_f - Je.T @ (mu - rho * pt.c_eq))[idx]
    act = pt.c_in < shift
    best = None
    for _ in range(max_passes):
        Ja = Ji[act][:, idx]
        A = base + rho * (Ja.T @ Ja)
        b = rhs_base + Ja.T @ (lam[act] - rho * pt.c_in[act])
        p = np.zeros(n)
        p[idx] = _solve_spd(A, b)
        val = model(p)
        if best is None or val < best[1]:
            best = (p, val)
        new_act = pt.c_in + Ji @ p < shift
        if np.array_equal(new_act, act):
            break
        act = new_act
    p, val = best
    return p, model(np.zeros(n)) - val


def _inner_minimize(merit: _Merit, x, lower, upper, gtol, max_iter, bfgs=None):
    """Bound-constrained structured quasi-Newton minimization of the merit.

    Steps come from :func:`_model_step`.  Variables at a bound whose
    gradient pushes outward are held fixed.  Steps are
    safeguarded by Levenberg-Marquardt damping that adapts to the ratio of
    actual to predicted decrease.

    Returns ``(x, iterations, converged)``.
    """
    n = x.size
    if bfgs is None:
        bfgs = _LagrangianBfgs(n)
    val, g, pt = merit(x)
    G = merit.penalty_curvature(pt)
    damp = 1e-6 * max(1.0, float(np.max(np.diag(G), initial=0.0)))
    for it in range(max_iter):
        pg = _projected_gradient(x, g, lower, upper)
        if np.max(np.abs(pg), initial=0.0) <= gtol:
            return x, it, True
        binding = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        free = ~binding
        for _ in range(60):
            p, predicted = _model_step(merit, pt, bfgs.B, damp, free)
            xt = np.clip(x + p, lower, upper)
            s = xt - x
            if not np.array_equal(s, p):
                predicted = -(g @ s + 0.5 * s @ ((G + bfgs.B) @ s))
            vt, gt, ptt = merit(xt)
            actual = val - vt
            if predicted > 0 and actual >= 1e-4 * predicted:
                break
            damp = max(4.0 * damp, 1e-12)
        else:
            return x, it, False
        ratio = actual / predicted
        if ratio > 0.75:
            damp = max(0.25 * damp, 1e-12)
        elif ratio < 0.25:
            damp *= 2.0
        y = ptt.lagrangian_grad(ptt.mu_hat, ptt.lam_hat) - pt.lagrangian_grad(ptt.mu_hat, ptt.lam_hat)
        bfgs.update(s, y)
        x, val, g, pt, G = xt, vt, gt, ptt, merit.penalty_curvature(ptt)
    return x, max_iter, False


def solve(
    problem: NlpProblem,
    tol_feas: float = 1e-6,
    tol_opt: float = 1e-6,
    max_iter: int = 40,
    max_inner: int = 500,
    initial_penalty: float = 10.0,
    penalty_growth: float = 10.0,
    max_penalty: float = 1e8,
) -> SolveReport:
    """Minimize ``problem`` with an augmented-Lagrangian method.

    Parameters
    ----------
    problem : NlpProblem
    tol_feas : float
        Required ``max |c_eq|`` and ``-min c_in``.
    tol_opt : float
        Required infinity norm of the projected Lagrangian gradient.
    max_iter : int
        Outer (multiplier update) iterations.
    max_inner : int
        Iteration cap for each inner minimization.
    initial_penalty, penalty_growth, max_penalty : float
        The penalty grows by ``penalty_growth`` whenever an outer iteration
        fails to shrink the constraint violation fourfold.

    Returns
    -------
    SolveReport
        Violations in the report are recomputed from ``x_star``.
    """
    start = time.perf_counter()
    lower, upper = problem.lower, problem.upper
    x = np.clip(problem.x0, lower, upper)
    if not np.all(np.isfinite(x)):
        raise NlpError("x0", x)

    c_eq, J_eq = problem.eval_eq(x)
    c_in, J_in = problem.eval_ineq(x)
    mu = np.zeros(c_eq.size)
    lam = np.zeros(c_in.size)
    rho = float(initial_penalty)

    history = []
    prev_violation = _violation(c_eq, c_in)
    omega = max(1e-2, tol_opt)
    best = None
    inner_total = 0
    status = ITERATION_LIMIT
    kkt = np.inf
    stalled_at_cap = 0
    outer = 0
    bfgs = _LagrangianBfgs(x.size)
    idle = 0
    for outer in range(1, max_iter + 1):
        merit = _Merit(problem, mu, lam, rho)
        m_start = merit(x)[0]
        x, nit, converged = _inner_minimize(merit, x, lower, upper, omega, max_inner, bfgs)
        history.append((m_start, merit(x)[0]))
        inner_total += nit

        c_eq, J_eq = problem.eval_eq(x)
        c_in, J_in = problem.eval_ineq(x)
        viol_comp = _violation(c_eq, c_in, lam, rho)
        mu = mu - rho * c_eq
        lam = np.maximum(lam - rho * c_in, 0.0)

        f, g = problem.eval_objective(x)
        grad_lag = g - J_eq.T @ mu - J_in.T @ lam
        kkt = float(np.max(np.abs(_projected_gradient(x, grad_lag, lower, upper)), initial=0.0))
        raw_viol = _violation(c_eq, c_in)
        feasible = raw_viol <= tol_feas
        log.debug(
            "outer %d: f=%.6g viol=%.3g kkt=%.3g rho=%.1e inner=%d%s",
            outer, f, raw_viol, kkt, rho, nit, "" if converged else " (not converged)",
        )
        key = (0, f) if feasible else (1, raw_viol)
        if best is None or key < best[0]:
            best = (key, x.copy(), mu.copy(), lam.copy(), kkt)

        if feasible and kkt <= tol_opt:
            status = OPTIMAL
            break

        if viol_comp > 0.25 * prev_violation:
            if rho >= max_penalty:
                stalled_at_cap += 1
            rho = min(rho * penalty_growth, max_penalty)
        else:
            stalled_at_cap = 0
        if stalled_at_cap >= 3 and not feasible:
            status = INFEASIBLE
            break
        idle = idle + 1 if (nit == 0 and not converged) else 0
        if idle >= 3:
            # the inner solver can no longer make progress at this penalty;
            # an infeasible iterate here is a local infeasibility certificate
            if not feasible:
                status = INFEASIBLE
            break
        prev_violation = min(prev_violation, viol_comp)
        omega = max(tol_opt, omega * 0.1)

    if status != OPTIMAL and best is not None:
        _, x, mu, lam, kkt = best
        c_eq, _ = problem.eval_eq(x)
        c_in, _ = problem.eval_ineq(x)
        if _violation(c_eq, c_in) <= tol_feas:
            status = FEASIBLE_SUBOPTIMAL
    f, _ = problem.eval_objective(x)
    c_eq, _ = problem.eval_eq(x)
    c_in, _ = problem.eval_ineq(x)
    report = SolveReport(
        status=status,
        x_star=x,
        objective_value=float(f),
        max_eq_violation=float(np.max(np.abs(c_eq), initial=0.0)),
        min_ineq_residual=float(np.min(c_in, initial=np.inf)),
        iterations=outer,
        wall_time=time.perf_counter() - start,
        kkt_residual=kkt,
        eq_multipliers=mu,
        ineq_multipliers=lam,
        inner_iterations=inner_total,
        penalty=rho,
        merit_history=history,
    )
    log.info(
        "nlp %s after %d outer / %d inner iterations (%.2fs): f=%.6g eq=%.2e ineq=%.2e",
        status, outer, inner_total, report.wall_time, f,
        report.max_eq_violation, report.min_ineq_residual,
    )
    return report


@dataclass(frozen=True)
class GradientCheck:
    """Worst discrepancy found by :func:`check_gradients`."""

    error: float
    block: str
    row: int
    col: int

    def __float__(self):
        return self.error


def _central_jacobian(fn, x, n_out):
    jac = np.zeros((n_out, x.size))
    for i in range(x.size):
        step = 1e-6 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        jac[:, i] = (np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2 * step)
    return jac


def check_gradients(problem: NlpProblem, point) -> GradientCheck:
    """Compare supplied derivatives with central differences.

    The step for coordinate ``i`` is ``1e-6 * (1 + |x_i|)``.  The error of
    an entry is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x = np.asarray(point, dtype=float).reshape(-1)
    worst = GradientCheck(0.0, "objective", 0, 0)
    blocks = [
        ("objective", problem.objective_value or (lambda v: problem.eval_objective(v)[0]),
         lambda v: problem.eval_objective(v)[1][None, :]),
        ("eq", problem.eq_values or (lambda v: problem.eval_eq(v)[0]),
         lambda v: problem.eval_eq(v)[1]),
        ("ineq", problem.ineq_values or (lambda v: problem.eval_ineq(v)[0]),
         lambda v: problem.eval_ineq(v)[1]),
    ]
    for name, value_fn, jac_fn in blocks:
        analytic = jac_fn(x)
        if analytic.size == 0:
            continue
        numeric = _central_jacobian(value_fn, x, analytic.shape[0])
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        r, c = np.unravel_index(int(np.argmax(err)), err.shape)
        if err[r, c] > worst.error:
            worst = GradientCheck(float(err[r, c]), name, int(r), int(c))
    return worst
