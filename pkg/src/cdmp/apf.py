"""Velocity-dependent potential-field coupling, the comparison baseline.

For an obstacle point ``o`` and state ``(y, v)`` let ``r = y - o`` and
``theta`` the angle between ``v`` and ``-r``.  Inside the approach cone
(``cos theta > 0``) the dynamic potential is::

    U = lam * cos(theta)**beta * |v| / |r|

and the coupling added to ``tau * dz/dt`` is ``-grad_y U`` summed over all
points.  The field steers the velocity away from points ahead of the
motion and vanishes at rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dmp import DmpModel, Trajectory, rollout
from .sdf import AVOID, Box, Capsule, Cone, Halfspace, SafetyScene, Sphere

DEFAULT_LAMBDA = 1.0
DEFAULT_BETA = 2.0
DEFAULT_MAX_FORCE = 1e3
DEFAULT_POINTS_PER_PRIMITIVE = 32

_TINY = 1e-12


class ApfError(ValueError):
    pass


@dataclass(frozen=True)
class ApfConfig:
    """Parameters of the potential field.

    Parameters
    ----------
    lambda_gain : float
        Coupling strength, positive.
    beta_exp : float
        Steering exponent, greater than one.
    points : ndarray, shape (P, d)
        Obstacle points the field repels from.  May be empty.
    max_force : float
        Norm cap for a single point's contribution.
    """

    lambda_gain: float = DEFAULT_LAMBDA
    beta_exp: float = DEFAULT_BETA
    points: np.ndarray = None
    max_force: float = DEFAULT_MAX_FORCE

    def __post_init__(self):
        if not self.lambda_gain > 0:
            raise ApfError("lambda_gain must be positive")
        if not self.beta_exp > 1:
            raise ApfError("beta_exp must be greater than 1")
        if not self.max_force > 0:
            raise ApfError("max_force must be positive")
        pts = np.zeros((0, 0)) if self.points is None else np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 0)
        elif pts.ndim != 2:
            raise ApfError("points must be a (P, d) array")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_scene(cls, scene: SafetyScene, **overrides) -> "ApfConfig":
        """Build the field from the scene's ``apf`` block and avoid primitives."""
        block = dict(scene.apf or {})
        n_pts = int(block.get("points_per_primitive", DEFAULT_POINTS_PER_PRIMITIVE))
        kwargs = dict(
            lambda_gain=float(block.get("lambda", DEFAULT_LAMBDA)),
            beta_exp=float(block.get("beta", DEFAULT_BETA)),
            points=scene_points(scene, n_pts),
        )
        kwargs.update(overrides)
        return cls(**kwargs)


def potential(config: ApfConfig, y, ydot) -> float:
    """Total dynamic potential at ``(y, ydot)``; used as a finite-difference oracle."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(ydot, dtype=float)
    speed = np.linalg.norm(v)
    if speed == 0 or config.points.shape[0] == 0:
        return 0.0
    r = y - config.points
    dist = np.linalg.norm(r, axis=1)
    cos = -(r @ v) / (speed * np.maximum(dist, _TINY))
    active = cos > 0
    u = config.lambda_gain * cos[active] ** config.beta_exp * speed / np.maximum(dist[active], _TINY)
    return float(np.sum(u))


def apf_coupling(config: ApfConfig, y, ydot) -> np.ndarray:
    """Coupling force ``-grad_y U`` for one state.

    A point closer than 1e-12 contributes ``-max_force * v / |v|``; any
    other contribution is clipped to norm ``max_force``.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(ydot, dtype=float)
    if y.shape != v.shape:
        raise ApfError(f"position {y.shape} and velocity {v.shape} shapes differ")
    out = np.zeros_like(y)
    pts = config.points
    speed = float(np.linalg.norm(v))
    if speed == 0 or pts.shape[0] == 0:
        return out
    if pts.shape[1] != y.size:
        raise ApfError(f"obstacle points are {pts.shape[1]}-D, state is {y.size}-D")
    lam, beta, cap = config.lambda_gain, config.beta_exp, config.max_force
    r = y - pts
    dist = np.linalg.norm(r, axis=1)
    coincident = dist < _TINY
    if np.any(coincident):
        out -= np.count_nonzero(coincident) * cap * v / speed
    keep = ~coincident
    r, dist = r[keep], dist[keep]
    a = -(r @ v)  # |v| |r| cos(theta)
    active = a > 0
    if not np.any(active):
        return out
    r, dist, a = r[active], dist[active], a[active]
    # U = lam * a**beta * |v|**(1 - beta) * |r|**(-beta - 1)
    scale = lam * speed ** (1.0 - beta)
    term_v = (beta * a ** (beta - 1.0) * dist ** (-beta - 1.0))[:, None] * v[None, :]
    term_r = ((beta + 1.0) * a**beta * dist ** (-beta - 3.0))[:, None] * r
    force = scale * (term_v + term_r)
    norms = np.linalg.norm(force, axis=1)
    over = norms > cap
    force[over] *= (cap / norms[over])[:, None]
    return out + force.sum(axis=0)


def rollout_with_apf(model: DmpModel, config: ApfConfig, dt: float, duration: float, **kwargs) -> Trajectory:
    """DMP rollout with the potential field added to ``tau * dz/dt``.

    With no obstacle points this is exactly :func:`cdmp.dmp.rollout`.
    """
    if config.points.shape[0] == 0:
        return rollout(model, dt, duration, **kwargs)
    if config.points.shape[1] != model.dim:
        raise ApfError(f"obstacle points are {config.points.shape[1]}-D, model is {model.dim}-D")
    return rollout(model, dt, duration, coupling=lambda y, v: apf_coupling(config, y, v), **kwargs)


def _circle(d, n):
    """``n`` unit directions in ``d`` dimensions (circle in 2-D, spiral in 3-D)."""
    if d == 1:
        return np.array([[-1.0], [1.0]])
    if d == 2:
        ang = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    # Fibonacci sphere on the first three axes
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    golden = np.pi * (1 + 5**0.5)
    out = np.zeros((n, d))
    out[:, 0] = np.cos(golden * i) * np.sin(phi)
    out[:, 1] = np.sin(golden * i) * np.sin(phi)
    out[:, 2] = np.cos(phi)
    return out


def primitive_points(prim, n: int) -> np.ndarray:
    """Center plus ``n`` surface samples for a bounded avoid primitive.

    Halfspaces and cones are unbounded and yield no points.
    """
    if isinstance(prim, (Halfspace, Cone)):
        return np.zeros((0, prim.dim))
    if isinstance(prim, Sphere):
        return np.vstack([prim.center, prim.center + prim.radius * _circle(prim.dim, n)])
    if isinstance(prim, Capsule):
        m = max(2, n // 4)
        t = np.linspace(0.0, 1.0, m)[:, None]
        spine = prim.a + t * (prim.b - prim.a)
        dirs = _circle(prim.dim, max(4, n // m))
        shell = (spine[:, None, :] + prim.radius * dirs[None, :, :]).reshape(-1, prim.dim)
        # drop shell samples that fall inside the capsule near the spine joints
        sig = prim(shell)
        return np.vstack([spine, shell[sig > -1e-9]])
    if isinstance(prim, Box):
        dirs = _circle(prim.dim, n)
        # radial projection of directions onto the box surface
        scale = np.min(prim.half_extents / np.maximum(np.abs(dirs), _TINY), axis=1)
        return np.vstack([prim.center, prim.center + dirs * scale[:, None]])
    raise ApfError(f"no point sampler for {type(prim).__name__}")


def scene_points(scene: SafetyScene, points_per_primitive: int = DEFAULT_POINTS_PER_PRIMITIVE) -> np.ndarray:
    """Obstacle points of every avoid primitive in declaration order."""
    parts = [primitive_points(p, points_per_primitive) for p in scene.primitives if p.polarity == AVOID]
    parts = [p for p in parts if p.size]
    if not parts:
        return np.zeros((0, scene.dim))
    return np.vstack(parts)
