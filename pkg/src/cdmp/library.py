"""Named regression scenes and the analytic demonstrations that go with them.

Every scene ships as ``scenes/<name>.json`` with a matching demonstration
``scenes/<name>.csv``.  All dimensions are synthetic desk-scale values.
The files are regenerated from :func:`build_scene` and :func:`build_demo`
by :func:`write_library`.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .dmp import Demonstration
from .sdf import CONTAIN, Box, Capsule, Cone, Halfspace, SafetyScene, Sphere, make_scene

SCENE_NAMES = ("wall-jump", "disc-midpath", "apf-trap", "cone-contain", "chessboard-block")

DEMO_SAMPLES = 200


class LibraryError(KeyError):
    pass


def minimum_jerk(samples: int = DEMO_SAMPLES, duration: float = 1.0):
    """Times and the minimum-jerk blend ``10u^3 - 15u^4 + 6u^5`` on ``[0, 1]``."""
    t = np.linspace(0.0, duration, samples)
    u = t / duration
    return t, 10 * u**3 - 15 * u**4 + 6 * u**5


def minimum_jerk_demo(start, goal, samples: int = DEMO_SAMPLES, duration: float = 1.0) -> Demonstration:
    """Straight-line minimum-jerk motion from ``start`` to ``goal``."""
    start = np.atleast_1d(np.asarray(start, dtype=float))
    goal = np.atleast_1d(np.asarray(goal, dtype=float))
    t, u = minimum_jerk(samples, duration)
    return Demonstration.from_times(t, start + u[:, None] * (goal - start))


def helix_demo(turns: float = 1.0, radius: float = 0.2, height: float = 0.3,
               samples: int = DEMO_SAMPLES, duration: float = 1.0) -> Demonstration:
    """3-D helix about the z axis, timed with a minimum-jerk phase."""
    t, u = minimum_jerk(samples, duration)
    ang = 2 * np.pi * turns * u
    pos = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), height * u])
    return Demonstration.from_times(t, pos)


def _arc_spheres(center_x, arc_radius, ball_radius, degrees):
    ang = np.radians(degrees)
    return [
        Sphere([center_x + arc_radius * np.cos(a), arc_radius * np.sin(a)], ball_radius)
        for a in ang
    ]


def build_scene(name: str) -> SafetyScene:
    """Construct a library scene from its defining parameters."""
    if name == "wall-jump":
        # thin wall rising from below, its tip just above the straight path
        return make_scene([Capsule([0.5, -0.4], [0.5, -0.01], 0.03)], gamma=5.0)
    if name == "disc-midpath":
        return make_scene([Sphere([0.5, -0.01], 0.2)], gamma=5.0)
    if name == "apf-trap":
        # small cup of balls opening towards the start
        prims = _arc_spheres(0.5, 0.1, 0.045, np.linspace(-70.0, 70.0, 5))
        apf = {"lambda": 1.0, "beta": 2.0, "points_per_primitive": 32}
        return make_scene(prims, gamma=5.0, apf=apf)
    if name == "cone-contain":
        return make_scene([Cone([0.0, 0.0, -0.1], [0.0, 0.0, 1.0], 0.5, polarity=CONTAIN)], gamma=5.0)
    if name == "chessboard-block":
        prims = [
            Halfspace([0.0, 0.0, 1.0], 0.0),
            Capsule([0.3, 0.25, 0.0], [0.3, 0.25, 0.14], 0.035),
            Box([0.2, 0.32, 0.05], [0.025, 0.025, 0.05]),
        ]
        return make_scene(prims, gamma=5.0)
    raise LibraryError(f"unknown library scene {name!r}; choose from {', '.join(SCENE_NAMES)}")


def build_demo(name: str) -> Demonstration:
    """The demonstration that the scene's regression runs fit."""
    if name in ("wall-jump", "disc-midpath", "apf-trap"):
        return minimum_jerk_demo([0.0, 0.0], [1.0, 0.0])
    if name == "cone-contain":
        # bulges sideways out of the cone half way up
        t, u = minimum_jerk()
        start, goal = np.array([0.0, 0.0, 0.2]), np.array([0.05, 0.0, 0.8])
        pos = start + u[:, None] * (goal - start)
        pos[:, 0] += 0.4 * np.sin(np.pi * u)
        return Demonstration.from_times(t, pos)
    if name == "chessboard-block":
        # low carry over the board
        t, u = minimum_jerk()
        start, goal = np.array([0.1, 0.1, 0.06]), np.array([0.5, 0.4, 0.06])
        pos = start + u[:, None] * (goal - start)
        pos[:, 2] += 0.06 * np.sin(np.pi * u)
        return Demonstration.from_times(t, pos)
    raise LibraryError(f"unknown library scene {name!r}; choose from {', '.join(SCENE_NAMES)}")


def _scene_file(name, suffix):
    if name not in SCENE_NAMES:
        raise LibraryError(f"unknown library scene {name!r}; choose from {', '.join(SCENE_NAMES)}")
    return resources.files("cdmp") / "scenes" / f"{name}{suffix}"


def load_library_scene(name: str) -> SafetyScene:
    from .io import scene_from_dict

    ref = _scene_file(name, ".json")
    return scene_from_dict(json.loads(ref.read_text()), source=f"lib:{name}")


def load_library_demo(name: str) -> Demonstration:
    from .io import read_demo

    with resources.as_file(_scene_file(name, ".csv")) as path:
        return read_demo(path)


def library_path(name: str, suffix: str = ".json") -> Path:
    """Filesystem path of a shipped scene (``.json``) or demo (``.csv``) file."""
    ref = _scene_file(name, suffix)
    return Path(str(ref))


def write_library(directory) -> list:
    """Write every scene and demo file into ``directory``; returns the paths."""
    from .io import save_scene, write_demo

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in SCENE_NAMES:
        save_scene(out / f"{name}.json", build_scene(name))
        write_demo(out / f"{name}.csv", build_demo(name))
        written += [out / f"{name}.json", out / f"{name}.csv"]
    return written
