"""Signed-distance primitives and the barrier function built from them.

Sign convention: a primitive's signed distance is negative strictly inside
the shape and positive outside.  A scene composes per-primitive terms with a
left fold of :func:`smooth_min`; *avoid* primitives contribute ``sigma`` and
*contain* primitives contribute ``-sigma``, so ``h > 0`` is the safe set.

Every primitive evaluates on batches of points of shape ``(P, d)`` and can
return the gradient ``(P, d)`` and Hessian ``(P, d, d)`` alongside the value.
At points where a distance is not differentiable (box medial axis, cone
axis, sphere center) a deterministic one-sided derivative is returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np

AVOID = "avoid"
CONTAIN = "contain"
DEFAULT_BLEND_K = 0.1

_TINY = 1e-12


class SceneError(ValueError):
    """Invalid primitive or scene definition."""


def _vec(value, name) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise SceneError(f"{name} must be finite")
    return arr


def _unit(value, name) -> np.ndarray:
    arr = _vec(value, name)
    if abs(np.linalg.norm(arr) - 1.0) > 1e-9:
        raise SceneError(f"{name} must have unit length, got norm {np.linalg.norm(arr)}")
    return arr


def _radial(r, order):
    """Value/derivatives of ``|r|`` for a batch of vectors ``r``."""
    dist = np.linalg.norm(r, axis=1)
    safe = np.maximum(dist, _TINY)
    n = r / safe[:, None]
    # the zero vector has no direction; fall back to the first axis
    n[dist < _TINY] = np.eye(r.shape[1])[0]
    if order < 2:
        return dist, n, None
    eye = np.eye(r.shape[1])
    hess = (eye - n[:, :, None] * n[:, None, :]) / safe[:, None, None]
    return dist, n, hess


@dataclass(frozen=True)
class Primitive:
    """Base class. Subclasses implement :meth:`_distance`."""

    shape: ClassVar[str] = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def _distance(self, p: np.ndarray, order: int):
        raise NotImplementedError

    def _check_polarity(self):
        if self.polarity not in (AVOID, CONTAIN):
            raise SceneError(f"polarity must be 'avoid' or 'contain', got {self.polarity!r}")

    def evaluate(self, points, order: int = 0):
        """Signed distance and optionally its gradient (order>=1) and Hessian (order 2).

        Returns a tuple ``(sigma, grad, hess)`` with ``None`` for orders not
        requested.  ``points`` may be a single point or a ``(P, d)`` batch.
        """
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if p.shape[1] != self.dim:
            raise SceneError(f"point dimension {p.shape[1]} != primitive dimension {self.dim}")
        sigma, grad, hess = self._distance(p, order)
        if order < 1:
            grad = None
        if order < 2:
            hess = None
        if single:
            sigma = sigma[0]
            grad = None if grad is None else grad[0]
            hess = None if hess is None else hess[0]
        return sigma, grad, hess

    def __call__(self, points):
        return self.evaluate(points)[0]


@dataclass(frozen=True)
class Sphere(Primitive):
    center: np.ndarray
    radius: float
    polarity: str = AVOID
    shape: ClassVar[str] = "sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        if not self.radius > 0:
            raise SceneError("sphere radius must be positive")
        self._check_polarity()

    @property
    def dim(self):
        return self.center.size

    def _distance(self, p, order):
        dist, n, hess = _radial(p - self.center, order)
        return dist - self.radius, n, hess


@dataclass(frozen=True)
class Box(Primitive):
    """Axis-aligned box."""

    center: np.ndarray
    half_extents: np.ndarray
    polarity: str = AVOID
    shape: ClassVar[str] = "box"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        object.__setattr__(self, "half_extents", _vec(self.half_extents, "half_extents"))
        if self.center.shape != self.half_extents.shape:
            raise SceneError("box center and half_extents differ in dimension")
        if np.any(self.half_extents <= 0):
            raise SceneError("box half_extents must be positive")
        self._check_polarity()

    @property
    def dim(self):
        return self.center.size

    def _distance(self, p, order):
        rel = p - self.center
        sgn = np.where(rel < 0, -1.0, 1.0)
        q = np.abs(rel) - self.half_extents
        qpos = np.maximum(q, 0.0)
        outside_dist = np.linalg.norm(qpos, axis=1)
        inner = np.max(q, axis=1)
        outside = inner > 0
        sigma = np.where(outside, outside_dist, inner)
        grad = np.zeros_like(p)
        hess = np.zeros(p.shape + (p.shape[1],)) if order >= 2 else None
        if np.any(outside):
            o = outside
            dist = np.maximum(outside_dist[o], _TINY)
            nq = qpos[o] / dist[:, None]
            grad[o] = sgn[o] * nq
            if order >= 2:
                active = (q[o] > 0).astype(float)
                # distance in the active coordinates only; sign flips cancel
                ng = grad[o]
                hess[o] = (
                    active[:, :, None] * np.eye(p.shape[1]) - ng[:, :, None] * ng[:, None, :]
                ) / dist[:, None, None]
        if np.any(~outside):
            i = ~outside
            # argmax picks the lowest axis index on ties
            axis = np.argmax(q[i], axis=1)
            rows = np.flatnonzero(i)
            grad[rows, axis] = sgn[rows, axis]
        return sigma, grad, hess


@dataclass(frozen=True)
class Halfspace(Primitive):
    """Obstacle ``{p : normal . p < offset}``; the normal points out of it."""

    normal: np.ndarray
    offset: float
    polarity: str = AVOID
    shape: ClassVar[str] = "halfspace"

    def __post_init__(self):
        object.__setattr__(self, "normal", _unit(self.normal, "normal"))
        object.__setattr__(self, "offset", float(self.offset))
        self._check_polarity()

    @property
    def dim(self):
        return self.normal.size

    def _distance(self, p, order):
        sigma = p @ self.normal - self.offset
        grad = np.broadcast_to(self.normal, p.shape).copy()
        hess = np.zeros(p.shape + (p.shape[1],)) if order >= 2 else None
        return sigma, grad, hess


@dataclass(frozen=True)
class Capsule(Primitive):
    a: np.ndarray
    b: np.ndarray
    radius: float
    polarity: str = AVOID
    shape: ClassVar[str] = "capsule"

    def __post_init__(self):
        object.__setattr__(self, "a", _vec(self.a, "a"))
        object.__setattr__(self, "b", _vec(self.b, "b"))
        if self.a.shape != self.b.shape:
            raise SceneError("capsule endpoints differ in dimension")
        if not self.radius > 0:
            raise SceneError("capsule radius must be positive")
        if np.linalg.norm(self.b - self.a) < _TINY:
            raise SceneError("capsule endpoints coincide; use a sphere")
        self._check_polarity()

    @property
    def dim(self):
        return self.a.size

    def _distance(self, p, order):
        ab = self.b - self.a
        length2 = ab @ ab
        t_raw = ((p - self.a) @ ab) / length2
        t = np.clip(t_raw, 0.0, 1.0)
        closest = self.a + t[:, None] * ab
        dist, n, hess = _radial(p - closest, order)
        if order >= 2:
            interior = (t_raw > 0.0) & (t_raw < 1.0)
            if np.any(interior):
                u = ab / np.sqrt(length2)
                proj = np.eye(p.shape[1]) - np.outer(u, u)
                ni = n[interior]
                safe = np.maximum(dist[interior], _TINY)
                hess[interior] = (proj - ni[:, :, None] * ni[:, None, :]) / safe[:, None, None]
        return dist - self.radius, n, hess


@dataclass(frozen=True)
class Cone(Primitive):
    """Solid cone of circles along ``axis`` whose radius is ``slope * t``.

    ``t`` is the axial coordinate measured from ``apex``.  The distance is
    exact: in the (radial, axial) half plane the boundary is a ray from the
    apex, so the nearest boundary point is the projection onto that ray.
    """

    apex: np.ndarray
    axis: np.ndarray
    slope: float
    polarity: str = AVOID
    shape: ClassVar[str] = "cone"

    def __post_init__(self):
        object.__setattr__(self, "apex", _vec(self.apex, "apex"))
        object.__setattr__(self, "axis", _unit(self.axis, "axis"))
        if self.apex.shape != self.axis.shape or self.apex.size < 2:
            raise SceneError("cone apex and axis must share a dimension >= 2")
        if not self.slope > 0:
            raise SceneError("cone slope must be positive")
        self._check_polarity()

    @property
    def dim(self):
        return self.apex.size

    def _radius_at(self, t):
        return self.slope * t

    def _distance(self, p, order):
        d = p.shape[1]
        u = self.axis
        cos_a = 1.0 / np.hypot(1.0, self.slope)
        sin_a = self.slope * cos_a
        q = p - self.apex
        t = q @ u
        perp = q - t[:, None] * u
        rho = np.linalg.norm(perp, axis=1)
        e = perp / np.maximum(rho, _TINY)[:, None]
        on_axis = rho < _TINY
        if np.any(on_axis):
            # any direction orthogonal to the axis is a valid radial direction
            fallback = np.eye(d)[np.argmin(np.abs(u))]
            fallback = fallback - (fallback @ u) * u
            e[on_axis] = fallback / np.linalg.norm(fallback)
        lam = rho * sin_a + t * cos_a
        ray = lam > 0
        sigma = np.empty(p.shape[0])
        grad = np.empty_like(p)
        hess = np.zeros((p.shape[0], d, d)) if order >= 2 else None
        sigma[ray] = rho[ray] * cos_a - t[ray] * sin_a
        grad[ray] = cos_a * e[ray] - sin_a * u
        if order >= 2 and np.any(ray):
            proj = np.eye(d) - np.outer(u, u)
            er = e[ray]
            safe = np.maximum(rho[ray], _TINY)
            hess[ray] = cos_a * (proj - er[:, :, None] * er[:, None, :]) / safe[:, None, None]
        apex_side = ~ray
        if np.any(apex_side):
            dist, n, h2 = _radial(q[apex_side], order)
            sigma[apex_side] = dist
            grad[apex_side] = n
            if order >= 2:
                hess[apex_side] = h2
        return sigma, grad, hess


PRIMITIVES = {cls.shape: cls for cls in (Sphere, Box, Halfspace, Capsule, Cone)}


def sdf_eval(prim: Primitive, point) -> float:
    """Signed distance of ``point`` (ignores polarity)."""
    return prim.evaluate(point)[0]


def smooth_min(d1, d2, k):
    """Polynomial smooth minimum ``min(d1, d2) - k/6 * (max(k - |d1 - d2|, 0) / k)**3``."""
    if np.any(np.asarray(k) <= 0):
        raise ValueError("blend radius k must be positive")
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    u = np.maximum(k - np.abs(d1 - d2), 0.0) / k
    out = np.minimum(d1, d2) - k * u**3 / 6.0
    return out if out.ndim else float(out)


def smooth_min_partials(d1, d2, k):
    """``(value, d/dd1, d/dd2, u/k)`` for :func:`smooth_min`.

    The Hessian with respect to ``(d1, d2)`` is ``u/k * [[-1, 1], [1, -1]]``.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    u = np.maximum(k - np.abs(d1 - d2), 0.0) / k
    first = d1 <= d2
    w_small = 1.0 - 0.5 * u**2
    w_large = 0.5 * u**2
    g1 = np.where(first, w_small, w_large)
    g2 = np.where(first, w_large, w_small)
    value = np.minimum(d1, d2) - k * u**3 / 6.0
    return value, g1, g2, u / k


@dataclass(frozen=True)
class SafetyScene:
    """Ordered primitives composed into a barrier function ``h``."""

    primitives: tuple
    blend_k: float = DEFAULT_BLEND_K
    gamma: float = 1.0
    apf: dict = None

    def __post_init__(self):
        prims = tuple(self.primitives)
        object.__setattr__(self, "primitives", prims)
        if not prims:
            raise SceneError("scene needs at least one primitive")
        if len({p.dim for p in prims}) != 1:
            raise SceneError("all primitives must share one dimension")
        if not self.blend_k > 0:
            raise SceneError("blend_k must be positive")
        if not self.gamma > 0:
            raise SceneError("gamma must be positive")

    @property
    def dim(self) -> int:
        return self.primitives[0].dim

    def evaluate(self, points, order: int = 1):
        """``(h, grad_h, hess_h)`` for a batch of points (see ``Primitive.evaluate``)."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        h = grad = hess = None
        for prim in self.primitives:
            sig, g, H = prim.evaluate(p, order)
            if prim.polarity == CONTAIN:
                sig = -sig
                g = None if g is None else -g
                H = None if H is None else -H
            if h is None:
                h, grad, hess = sig, g, H
                continue
            value, w1, w2, curv = smooth_min_partials(h, sig, self.blend_k)
            if order >= 2:
                diff = grad - g
                hess = (
                    w1[:, None, None] * hess
                    + w2[:, None, None] * H
                    - curv[:, None, None] * diff[:, :, None] * diff[:, None, :]
                )
            if order >= 1:
                grad = w1[:, None] * grad + w2[:, None] * g
            h = value
        if single:
            h = h[0]
            grad = None if grad is None else grad[0]
            hess = None if hess is None else hess[0]
        return h, grad, hess

    def h(self, points):
        return self.evaluate(points, order=0)[0]


def zbf_eval(scene: SafetyScene, point):
    """Barrier value and gradient at ``point``."""
    h, grad, _ = scene.evaluate(point, order=1)
    return h, grad


def zbf_residual(scene: SafetyScene, y, ydot):
    """``grad_h(y) . ydot + gamma * h(y)``; nonnegative where the barrier inequality holds.

    Works on single points or ``(P, d)`` batches.
    """
    y = np.asarray(y, dtype=float)
    ydot = np.asarray(ydot, dtype=float)
    if y.shape != ydot.shape:
        raise SceneError(f"position {y.shape} and velocity {ydot.shape} shapes differ")
    h, grad, _ = scene.evaluate(y, order=1)
    return np.sum(grad * ydot, axis=-1) + scene.gamma * h


def make_scene(primitives: Sequence[Primitive], blend_k=DEFAULT_BLEND_K, gamma=1.0, apf=None):
    return SafetyScene(tuple(primitives), blend_k=blend_k, gamma=gamma, apf=apf)
