"""JSON and CSV formats for models, scenes, demonstrations and trajectories.

Floats are written with ``repr`` (shortest round-trip representation), so
``parse(serialize(x)) == x`` holds exactly.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .dmp import CanonicalSystem, Demonstration, DmpError, DmpModel, ForcingTerm, Trajectory
from .sdf import AVOID, PRIMITIVES, SafetyScene, SceneError

MODEL_FIELDS = ("alpha_s", "tau", "alpha_z", "beta_z", "y0", "g", "centers", "widths", "weights")

SHAPE_FIELDS = {
    "sphere": ("center", "radius"),
    "box": ("center", "half_extents"),
    "halfspace": ("normal", "offset"),
    "capsule": ("a", "b", "radius"),
    "cone": ("apex", "axis", "slope"),
}

_SCALARS = {"radius", "offset", "slope"}


class FormatError(ValueError):
    """Malformed input file.  ``line`` is 1-based when known."""

    def __init__(self, message: str, source=None, line=None):
        where = ""
        if source is not None:
            where = f"{source}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.source = source
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"field {name!r} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise FormatError(f"field {name!r} must be finite")
    return float(value)


def _vector(value, name):
    if not isinstance(value, list) or not value:
        raise FormatError(f"field {name!r} must be a non-empty list of numbers")
    return np.array([_number(v, f"{name}[{i}]") for i, v in enumerate(value)])


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(str(exc), source=path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, source=path, line=exc.lineno) from exc


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# -- models -----------------------------------------------------------------


def model_to_dict(model: DmpModel) -> dict:
    return {
        "alpha_s": float(model.canonical.alpha_s),
        "tau": float(model.tau),
        "alpha_z": float(model.alpha_z),
        "beta_z": float(model.beta_z),
        "y0": model.y0.tolist(),
        "g": model.g.tolist(),
        "centers": model.forcing.centers.tolist(),
        "widths": model.forcing.widths.tolist(),
        "weights": model.weights.ravel().tolist(),
    }


def model_from_dict(doc: dict, source=None) -> DmpModel:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object", source)
    missing = [k for k in MODEL_FIELDS if k not in doc]
    if missing:
        raise FormatError(f"model is missing fields {missing}", source)
    try:
        y0 = _vector(doc["y0"], "y0")
        g = _vector(doc["g"], "g")
        centers = _vector(doc["centers"], "centers")
        widths = _vector(doc["widths"], "widths")
        flat = _vector(doc["weights"], "weights")
        if flat.size != y0.size * centers.size:
            raise FormatError(
                f"weights has {flat.size} entries, expected {y0.size} x {centers.size}"
            )
        return DmpModel(
            canonical=CanonicalSystem(
                alpha_s=_number(doc["alpha_s"], "alpha_s"), tau=_number(doc["tau"], "tau")
            ),
            forcing=ForcingTerm(centers, widths, flat.reshape(y0.size, centers.size)),
            y0=y0,
            g=g,
            alpha_z=_number(doc["alpha_z"], "alpha_z"),
            beta_z=_number(doc["beta_z"], "beta_z"),
        )
    except FormatError as exc:
        if source is not None and exc.source is None:
            raise FormatError(str(exc), source) from exc
        raise
    except DmpError as exc:
        raise FormatError(str(exc), source) from exc


def save_model(path, model: DmpModel):
    _write_json(path, model_to_dict(model))


def load_model(path) -> DmpModel:
    return model_from_dict(_read_json(path), source=path)


# -- scenes -----------------------------------------------------------------


def primitive_to_dict(prim) -> dict:
    doc = {"shape": prim.shape, "polarity": prim.polarity}
    for name in SHAPE_FIELDS[prim.shape]:
        value = getattr(prim, name)
        doc[name] = float(value) if name in _SCALARS else np.asarray(value).tolist()
    return doc


def primitive_from_dict(doc: dict, index: int = 0):
    if not isinstance(doc, dict):
        raise FormatError(f"primitive {index} must be a JSON object")
    shape = doc.get("shape")
    if shape not in PRIMITIVES:
        raise FormatError(f"primitive {index}: unknown shape {shape!r}")
    fields = SHAPE_FIELDS[shape]
    missing = [f for f in fields if f not in doc]
    if missing:
        raise FormatError(f"primitive {index} ({shape}) is missing fields {missing}")
    kwargs = {
        f: (_number(doc[f], f) if f in _SCALARS else _vector(doc[f], f)) for f in fields
    }
    kwargs["polarity"] = doc.get("polarity", AVOID)
    try:
        return PRIMITIVES[shape](**kwargs)
    except SceneError as exc:
        raise FormatError(f"primitive {index} ({shape}): {exc}") from exc


def scene_to_dict(scene: SafetyScene) -> dict:
    doc = {
        "gamma": float(scene.gamma),
        "blend_k": float(scene.blend_k),
        "primitives": [primitive_to_dict(p) for p in scene.primitives],
    }
    if scene.apf is not None:
        doc["apf"] = dict(scene.apf)
    return doc


def scene_from_dict(doc: dict, source=None) -> SafetyScene:
    if not isinstance(doc, dict):
        raise FormatError("scene document must be a JSON object", source)
    try:
        prims = doc.get("primitives")
        if not isinstance(prims, list) or not prims:
            raise FormatError("scene needs a non-empty 'primitives' list")
        primitives = [primitive_from_dict(p, i) for i, p in enumerate(prims)]
        apf = doc.get("apf")
        if apf is not None:
            if not isinstance(apf, dict):
                raise FormatError("'apf' must be an object")
            apf = {k: _number(v, f"apf.{k}") for k, v in apf.items()}
            if "points_per_primitive" in apf:
                apf["points_per_primitive"] = int(apf["points_per_primitive"])
        return SafetyScene(
            tuple(primitives),
            blend_k=_number(doc.get("blend_k", 0.1), "blend_k"),
            gamma=_number(doc.get("gamma", 1.0), "gamma"),
            apf=apf,
        )
    except FormatError as exc:
        if source is not None and exc.source is None:
            raise FormatError(str(exc), source) from exc
        raise
    except SceneError as exc:
        raise FormatError(str(exc), source) from exc


def save_scene(path, scene: SafetyScene):
    _write_json(path, scene_to_dict(scene))


def load_scene(path) -> SafetyScene:
    """Read a scene file; ``lib:NAME`` loads a shipped library scene."""
    if str(path).startswith("lib:"):
        from .library import load_library_scene

        return load_library_scene(str(path)[4:])
    return scene_from_dict(_read_json(path), source=path)


# -- CSV ----------------------------------------------------------------------


def _read_rows(path, expected_header):
    """Parse a numeric CSV, checking the header; returns ``(header, array)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(str(exc), source=path) from exc
    reader = csv.reader(_io.StringIO(text))
    rows = []
    header = None
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if header is None:
            header = [c.strip() for c in row]
            problem = expected_header(header)
            if problem:
                raise FormatError(problem, source=path, line=lineno)
            continue
        if len(row) != len(header):
            raise FormatError(
                f"expected {len(header)} columns, found {len(row)}", source=path, line=lineno
            )
        try:
            values = [float(c) for c in row]
        except ValueError:
            raise FormatError(f"non-numeric value in {row!r}", source=path, line=lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError("non-finite value", source=path, line=lineno)
        rows.append(values)
    if header is None:
        raise FormatError("empty file", source=path)
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _demo_header(header):
    d = len(header) - 1
    if d < 1 or header != ["t"] + [f"y{i + 1}" for i in range(d)]:
        return f"header must be t,y1[,y2,...], got {','.join(header)}"
    return None


def _traj_header(header):
    if len(header) < 4 or (len(header) - 2) % 2:
        return f"header must be t,s,z1..zd,y1..yd, got {','.join(header)}"
    d = (len(header) - 2) // 2
    want = ["t", "s"] + [f"z{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)]
    if header != want:
        return f"header must be {','.join(want)}, got {','.join(header)}"
    return None


def read_demo(path) -> Demonstration:
    _, data = _read_rows(path, _demo_header)
    try:
        return Demonstration.from_times(data[:, 0], data[:, 1:])
    except DmpError as exc:
        raise FormatError(str(exc), source=path) from exc


def write_demo(path, demo: Demonstration):
    d = demo.dim
    lines = [",".join(["t"] + [f"y{i + 1}" for i in range(d)])]
    for t, y in zip(demo.times, demo.positions):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in y]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory(path, traj: Trajectory):
    d = traj.dim
    header = ["t", "s"] + [f"z{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)]
    lines = [",".join(header)]
    for k in range(len(traj)):
        vals = [traj.times[k], traj.phase[k], *traj.z[k], *traj.y[k]]
        lines.append(",".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> Trajectory:
    header, data = _read_rows(path, _traj_header)
    if data.shape[0] < 1:
        raise FormatError("trajectory has no samples", source=path)
    d = (len(header) - 2) // 2
    try:
        return Trajectory(data[:, 0], data[:, 1], data[:, 2:2 + d], data[:, 2 + d:])
    except DmpError as exc:
        raise FormatError(str(exc), source=path) from exc


__all__ = [
    "FormatError", "model_to_dict", "model_from_dict", "save_model", "load_model",
    "primitive_to_dict", "primitive_from_dict", "scene_to_dict", "scene_from_dict",
    "save_scene", "load_scene", "read_demo", "write_demo", "read_trajectory",
    "write_trajectory",
]
