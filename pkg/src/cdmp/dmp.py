"""Discrete dynamic movement primitives.

The system is integrated in first-order form with state ``(s, z, y)``::

    tau * ds/dt = -alpha_s * s
    tau * dz/dt = alpha_z * (beta_z * (g - y) - z) + f(s)
    tau * dy/dt = z

where ``f`` is a normalized mixture of Gaussian bases in the phase ``s``.
The forcing term is not modulated by ``s * (g - y0)``; goal convergence
relies on the fitted weights of the late bases being close to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

DEFAULT_ALPHA_S = 4.0
DEFAULT_ALPHA_Z = 25.0


class DmpError(ValueError):
    """Invalid DMP input or parameters."""


class FitError(DmpError):
    """The regression problem is ill-posed for the given demonstration."""


class ForcingEvaluationError(ArithmeticError):
    """The forcing term produced a non-finite value."""


class DivergenceError(ArithmeticError):
    """Integration produced a non-finite state."""

    def __init__(self, time: float):
        super().__init__(f"rollout diverged at t={time:.6g} s")
        self.time = time


def _as_2d(positions) -> np.ndarray:
    arr = np.asarray(positions, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


@dataclass(frozen=True)
class Demonstration:
    """Uniformly sampled trajectory ``positions[t] = y(t * dt)``."""

    dt: float
    positions: np.ndarray

    def __post_init__(self):
        pos = _as_2d(self.positions)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2:
            raise DmpError("positions must be a (T, d) array")
        if pos.shape[0] < 3:
            raise DmpError(
                f"demonstration needs at least 3 samples, got {pos.shape[0]}"
            )
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DmpError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(pos)):
            raise DmpError("demonstration contains non-finite positions")

    @classmethod
    def from_times(cls, times, positions, rtol: float = 1e-6) -> "Demonstration":
        """Build a demonstration from explicit sample times.

        Raises
        ------
        DmpError
            If fewer than 3 samples are given or the spacing is not uniform.
        """
        t = np.asarray(times, dtype=float)
        if t.size < 3:
            raise DmpError(f"demonstration needs at least 3 samples, got {t.size}")
        steps = np.diff(t)
        dt = float(np.mean(steps))
        if dt <= 0 or np.max(np.abs(steps - dt)) > rtol * max(dt, 1e-12) + 1e-12:
            raise DmpError("demonstration sample times are not uniformly spaced")
        # prefer a step that regenerates the times exactly (lossless round trip)
        k = np.arange(t.size)
        for cand in (float(steps[0]), float((t[-1] - t[0]) / (t.size - 1))):
            if np.array_equal(cand * k, t - t[0]):
                dt = cand
                break
        return cls(dt=dt, positions=positions)

    @property
    def n_samples(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return self.dt * (self.n_samples - 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_samples)


@dataclass(frozen=True)
class CanonicalSystem:
    alpha_s: float = DEFAULT_ALPHA_S
    tau: float = 1.0

    def __post_init__(self):
        if not self.alpha_s > 0:
            raise DmpError(f"alpha_s must be positive, got {self.alpha_s}")
        if not self.tau > 0:
            raise DmpError(f"tau must be positive, got {self.tau}")

    def phase(self, t):
        """Closed-form phase ``exp(-alpha_s * t / tau)``."""
        return np.exp(-self.alpha_s * np.asarray(t, dtype=float) / self.tau)


@dataclass(frozen=True)
class ForcingTerm:
    """Normalized radial-basis forcing term.

    ``weights`` has shape ``(d, N)``; ``centers`` and ``widths`` have shape
    ``(N,)``.
    """

    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1)
        h = np.asarray(self.widths, dtype=float).reshape(-1)
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", h)
        object.__setattr__(self, "weights", w)
        if c.size < 1 or h.shape != c.shape:
            raise DmpError("centers and widths must be non-empty and equally sized")
        if w.shape[1] != c.size:
            raise DmpError(f"weights must have shape (d, {c.size}), got {w.shape}")
        if np.any(np.diff(c) >= 0):
            raise DmpError("basis centers must be strictly decreasing")
        if np.any(~(h > 0)):
            raise DmpError("basis widths must be positive")

    @classmethod
    def evenly_spaced(cls, n_basis: int, dim: int, alpha_s: float = DEFAULT_ALPHA_S):
        """Zero-weight forcing term with centers uniform in time.

        Centers are ``exp(-alpha_s * i / (N - 1))`` and each width is set from
        the gap to the next center, the last one copied from its neighbour.
        """
        if n_basis < 2:
            raise DmpError(f"n_basis must be at least 2, got {n_basis}")
        centers = np.exp(-alpha_s * np.arange(n_basis) / (n_basis - 1))
        gaps = np.diff(centers)
        widths = np.empty(n_basis)
        widths[:-1] = 1.0 / (2.0 * gaps**2)
        widths[-1] = widths[-2]
        return cls(centers, widths, np.zeros((dim, n_basis)))

    @property
    def n_basis(self) -> int:
        return self.centers.size

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def basis(self, s) -> np.ndarray:
        """Raw Gaussian activations, shape ``s.shape + (N,)``."""
        s = np.asarray(s, dtype=float)[..., None]
        return np.exp(-self.widths * (s - self.centers) ** 2)

    def normalized_basis(self, s, derivative: bool = False):
        """Activations divided by their sum, evaluated stably.

        With ``derivative=True`` also returns d/ds of the normalized
        activations.
        """
        s = np.asarray(s, dtype=float)[..., None]
        diff = s - self.centers
        log_psi = -self.widths * diff**2
        shifted = np.exp(log_psi - np.max(log_psi, axis=-1, keepdims=True))
        phi = shifted / np.sum(shifted, axis=-1, keepdims=True)
        if not derivative:
            return phi
        # d(log psi_i)/ds = -2 h_i (s - c_i)
        dlog = -2.0 * self.widths * diff
        dphi = phi * (dlog - np.sum(phi * dlog, axis=-1, keepdims=True))
        return phi, dphi


def eval_forcing(forcing: ForcingTerm, s, weights_override=None) -> np.ndarray:
    """Evaluate ``sum_i w_i psi_i(s) / sum_i psi_i(s)`` per dimension.

    Parameters
    ----------
    forcing : ForcingTerm
    s : float or array_like
        Phase value(s) in ``(0, 1]``.
    weights_override : array_like, optional
        ``(d, N)`` weights used in place of ``forcing.weights``.

    Returns
    -------
    np.ndarray
        Shape ``s.shape + (d,)``.
    """
    if weights_override is None:
        weights = forcing.weights
    else:
        weights = np.asarray(weights_override, dtype=float)
        if weights.shape != forcing.weights.shape:
            raise DmpError(
                f"weights_override must have shape {forcing.weights.shape}, "
                f"got {weights.shape}"
            )
    phi = forcing.normalized_basis(s)
    value = phi @ weights.T
    if not np.all(np.isfinite(value)):
        bad = np.flatnonzero(
            ~np.all(np.isfinite(phi.reshape(-1, forcing.n_basis)), axis=0)
            | ~np.isfinite(forcing.widths)
            | ~np.isfinite(forcing.centers)
            | ~np.all(np.isfinite(weights), axis=0)
        )
        culprit = int(bad[0]) if bad.size else int(np.argmax(np.abs(weights).max(0)))
        raise ForcingEvaluationError(
            f"forcing term is not finite; offending basis {culprit} "
            f"(center={forcing.centers[culprit]!r}, width={forcing.widths[culprit]!r})"
        )
    return value


@dataclass(frozen=True)
class DmpModel:
    canonical: CanonicalSystem
    forcing: ForcingTerm
    y0: np.ndarray
    g: np.ndarray
    alpha_z: float = DEFAULT_ALPHA_Z
    beta_z: float = DEFAULT_ALPHA_Z / 4.0

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float).reshape(-1)
        g = np.asarray(self.g, dtype=float).reshape(-1)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "g", g)
        if not (self.alpha_z > 0 and self.beta_z > 0):
            raise DmpError("alpha_z and beta_z must be positive")
        if y0.shape != g.shape or y0.size != self.forcing.dim:
            raise DmpError(
                f"y0 {y0.shape}, g {g.shape} and forcing dimension "
                f"{self.forcing.dim} disagree"
            )

    @property
    def dim(self) -> int:
        return self.y0.size

    @property
    def tau(self) -> float:
        return self.canonical.tau

    @property
    def weights(self) -> np.ndarray:
        return self.forcing.weights

    def with_weights(self, weights) -> "DmpModel":
        return replace(self, forcing=replace(self.forcing, weights=np.asarray(weights, float)))

    def with_endpoints(self, y0=None, g=None) -> "DmpModel":
        """Re-target the primitive to a new start and/or goal."""
        return replace(
            self,
            y0=self.y0 if y0 is None else np.asarray(y0, float),
            g=self.g if g is None else np.asarray(g, float),
        )


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped rollout ``(s, z, y)``; ``z`` and ``y`` have shape (T, d)."""

    times: np.ndarray
    phase: np.ndarray
    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float).reshape(-1)
        s = np.asarray(self.phase, float).reshape(-1)
        z = _as_2d(self.z)
        y = _as_2d(self.y)
        for name, val in (("times", t), ("phase", s), ("z", z), ("y", y)):
            object.__setattr__(self, name, val)
        if not (s.size == t.size == z.shape[0] == y.shape[0]):
            raise DmpError("trajectory arrays have inconsistent lengths")
        if z.shape != y.shape:
            raise DmpError("z and y must have the same dimension")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DmpError("trajectory times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    def __len__(self) -> int:
        return self.times.size


def _target_forces(demo: Demonstration, tau, alpha_z, beta_z):
    y = demo.positions
    yd = np.gradient(y, demo.dt, axis=0, edge_order=2)
    ydd = np.gradient(yd, demo.dt, axis=0, edge_order=2)
    g = y[-1]
    return tau**2 * ydd - alpha_z * (beta_z * (g - y) - tau * yd)


def fit_lwr(
    demo: Demonstration,
    n_basis: int = 20,
    alpha_s: float = DEFAULT_ALPHA_S,
    alpha_z: float = DEFAULT_ALPHA_Z,
    beta_z: Optional[float] = None,
) -> DmpModel:
    """Fit forcing weights to a demonstration by locally weighted regression.

    Each weight is the activation-weighted mean of the target forcing
    samples, which is the exact LWR solution for a constant regressor.
    """
    if beta_z is None:
        beta_z = alpha_z / 4.0
    if n_basis < 2:
        raise FitError(f"n_basis must be at least 2, got {n_basis}")
    if demo.n_samples < n_basis:
        raise FitError(
            f"{demo.n_samples} samples cannot support {n_basis} basis functions"
        )
    tau = demo.duration
    canonical = CanonicalSystem(alpha_s=alpha_s, tau=tau)
    template = ForcingTerm.evenly_spaced(n_basis, demo.dim, alpha_s)
    f_target = _target_forces(demo, tau, alpha_z, beta_z)
    psi = template.basis(canonical.phase(demo.times))  # (T, N)
    mass = psi.sum(axis=0)
    if np.any(mass < 1e-10 * np.max(mass)):
        raise FitError("some basis functions receive no support from the demo")
    weights = (f_target.T @ psi) / mass
    forcing = replace(template, weights=weights)
    return DmpModel(
        canonical=canonical,
        forcing=forcing,
        y0=demo.positions[0].copy(),
        g=demo.positions[-1].copy(),
        alpha_z=alpha_z,
        beta_z=beta_z,
    )


Coupling = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _derivative(model: DmpModel, weights, coupling: Optional[Coupling]):
    tau = model.tau
    a_s = model.canonical.alpha_s
    a_z, b_z, g = model.alpha_z, model.beta_z, model.g
    phi_of = model.forcing.normalized_basis

    def rhs(s, z, y):
        f = phi_of(s) @ weights.T
        acc = a_z * (b_z * (g - y) - z) + f
        if coupling is not None:
            acc = acc + coupling(y, z / tau)
        return -a_s * s / tau, acc / tau, z / tau

    return rhs


def rollout(
    model: DmpModel,
    dt: float,
    duration: float,
    weights_override=None,
    z0=None,
    coupling: Optional[Coupling] = None,
) -> Trajectory:
    """Integrate the DMP with the classical fourth-order Runge-Kutta scheme.

    The step is adjusted to ``duration / round(duration / dt)`` so the last
    sample lands exactly on ``duration``.  ``coupling(y, ydot)`` is an
    optional extra term added to ``tau * dz/dt``.
    """
    if not (dt > 0 and duration > 0):
        raise DmpError("dt and duration must be positive")
    n_steps = max(1, int(round(duration / dt)))
    h = duration / n_steps
    if weights_override is None:
        weights = model.weights
    else:
        weights = np.asarray(weights_override, dtype=float)
        if weights.shape != model.weights.shape:
            raise DmpError(
                f"weights_override must have shape {model.weights.shape}, "
                f"got {weights.shape}"
            )
    rhs = _derivative(model, weights, coupling)
    d = model.dim
    times = h * np.arange(n_steps + 1)
    S = np.empty(n_steps + 1)
    Z = np.empty((n_steps + 1, d))
    Y = np.empty((n_steps + 1, d))
    s = 1.0
    z = np.zeros(d) if z0 is None else np.asarray(z0, float).reshape(d)
    y = model.y0.copy()
    S[0], Z[0], Y[0] = s, z, y
    with np.errstate(over="ignore", invalid="ignore"):
        # non-finite states are reported as DivergenceError below
        return _rk4_loop(rhs, h, times, s, z, y, S, Z, Y)


def _rk4_loop(rhs, h, times, s, z, y, S, Z, Y):
    for k in range(len(times) - 1):
        k1 = rhs(s, z, y)
        k2 = rhs(s + 0.5 * h * k1[0], z + 0.5 * h * k1[1], y + 0.5 * h * k1[2])
        k3 = rhs(s + 0.5 * h * k2[0], z + 0.5 * h * k2[1], y + 0.5 * h * k2[2])
        k4 = rhs(s + h * k3[0], z + h * k3[1], y + h * k3[2])
        s = s + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        z = z + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        y = y + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (np.isfinite(s) and np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise DivergenceError(times[k + 1])
        S[k + 1], Z[k + 1], Y[k + 1] = s, z, y
    return Trajectory(times, S, Z, Y)


def reproduction_rmse(model: DmpModel, demo: Demonstration) -> float:
    """RMSE between the demo and a rollout of ``model`` on the demo grid."""
    traj = rollout(model, demo.dt, demo.duration)
    err = traj.y - demo.positions
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def path_extent(positions) -> float:
    """Largest per-axis range of a set of positions."""
    pos = _as_2d(positions)
    return float(np.max(pos.max(axis=0) - pos.min(axis=0)))
