"""Analytic scene geometry: placed primitives, containment, ray stepping.

A scene is a list of non-overlapping bodies (cylinder, sphere, box) in an
ambient material.  Each body carries a rigid transform given as a
translation and extrinsic XYZ Euler angles in degrees (world rotation
R = Rz @ Ry @ Rx applied to local coordinates, then translated).

The transport loop only ever needs two queries: which material and patient
flag apply at a point, and how far a ray can advance before the set of
containing bodies can change.  Both work on world points; bodies transform
them into their local frame where the primitive tests are axis-aligned.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import MaterialError, SceneError
from .materials import Material, get_material

_EPS = 1e-12
# nudge past a boundary before asking who contains the point; well below
# voxel scale, well above f64 noise on metre-scale coordinates
BOUNDARY_NUDGE = 1e-9

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def rotation_matrix_deg(rx: float, ry: float, rz: float) -> np.ndarray:
    ax, ay, az = math.radians(rx), math.radians(ry), math.radians(rz)
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rmx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rmy = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rmz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rmz @ rmy @ rmx


def _slab_interval(origin: float, direction: float, lo: float, hi: float,
                   t0: float, t1: float) -> Tuple[float, float]:
    # clip [t0,t1] to lo <= origin + t*direction <= hi
    if abs(direction) < _EPS:
        if lo <= origin <= hi:
            return t0, t1
        return 1.0, 0.0
    ta = (lo - origin) / direction
    tb = (hi - origin) / direction
    if ta > tb:
        ta, tb = tb, ta
    return max(t0, ta), min(t1, tb)


class Shape:
    def contains_local(self, p: np.ndarray) -> bool:
        raise NotImplementedError

    def ray_interval_local(self, o: np.ndarray, d: np.ndarray) -> Optional[Tuple[float, float]]:
        """Parameter interval [t0, t1] of o + t*d inside the shape, or None."""
        raise NotImplementedError

    def bounding_radius(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Shape):
    radius_m: float

    def contains_local(self, p):
        return float(p @ p) <= self.radius_m ** 2

    def ray_interval_local(self, o, d):
        b = float(o @ d)
        c = float(o @ o) - self.radius_m ** 2
        disc = b * b - c
        if disc <= 0.0:
            return None
        root = math.sqrt(disc)
        return -b - root, -b + root

    def bounding_radius(self):
        return self.radius_m


@dataclass(frozen=True)
class Box(Shape):
    half_extents_m: Tuple[float, float, float]

    def contains_local(self, p):
        h = self.half_extents_m
        return abs(p[0]) <= h[0] and abs(p[1]) <= h[1] and abs(p[2]) <= h[2]

    def ray_interval_local(self, o, d):
        t0, t1 = -math.inf, math.inf
        for k in range(3):
            h = self.half_extents_m[k]
            t0, t1 = _slab_interval(o[k], d[k], -h, h, t0, t1)
            if t0 >= t1:
                return None
        return t0, t1

    def bounding_radius(self):
        return math.sqrt(sum(h * h for h in self.half_extents_m))


@dataclass(frozen=True)
class Cylinder(Shape):
    """Finite cylinder along one local coordinate axis, centered at origin."""
    radius_m: float
    height_m: float
    axis: int  # 0, 1, 2

    def contains_local(self, p):
        k = self.axis
        i, j = (k + 1) % 3, (k + 2) % 3
        if abs(p[k]) > 0.5 * self.height_m:
            return False
        return p[i] ** 2 + p[j] ** 2 <= self.radius_m ** 2

    def ray_interval_local(self, o, d):
        k = self.axis
        i, j = (k + 1) % 3, (k + 2) % 3
        t0, t1 = _slab_interval(o[k], d[k], -0.5 * self.height_m, 0.5 * self.height_m,
                                -math.inf, math.inf)
        if t0 >= t1:
            return None
        a = d[i] ** 2 + d[j] ** 2
        b = o[i] * d[i] + o[j] * d[j]
        c = o[i] ** 2 + o[j] ** 2 - self.radius_m ** 2
        if a < _EPS:
            if c > 0.0:
                return None
        else:
            disc = b * b - a * c
            if disc <= 0.0:
                return None
            root = math.sqrt(disc)
            t0 = max(t0, (-b - root) / a)
            t1 = min(t1, (-b + root) / a)
            if t0 >= t1:
                return None
        return t0, t1

    def bounding_radius(self):
        return math.hypot(self.radius_m, 0.5 * self.height_m)


@dataclass(frozen=True)
class Body:
    shape: Shape
    rotation: np.ndarray      # local -> world
    translation_m: np.ndarray
    material: Material
    is_patient: bool

    def to_local(self, p: np.ndarray) -> np.ndarray:
        return self.rotation.T @ (p - self.translation_m)

    def contains(self, p: np.ndarray) -> bool:
        return self.shape.contains_local(self.to_local(p))

    def ray_interval(self, origin: np.ndarray, direction: np.ndarray):
        o = self.rotation.T @ (origin - self.translation_m)
        d = self.rotation.T @ direction
        return self.shape.ray_interval_local(o, d)

    def aabb(self) -> Tuple[np.ndarray, np.ndarray]:
        r = self.shape.bounding_radius()
        return self.translation_m - r, self.translation_m + r


class Scene:
    """Bodies plus ambient material; overlap-checked at construction."""

    def __init__(self, bodies: Sequence[Body], ambient: Material,
                 overlap_samples: int = 10_000):
        self.bodies: List[Body] = list(bodies)
        self.ambient = ambient
        self.patient_bodies = [b for b in self.bodies if b.is_patient]
        if len(self.bodies) > 1 and overlap_samples > 0:
            self._check_overlap(overlap_samples)

    def _check_overlap(self, n: int) -> None:
        los, his = zip(*(b.aabb() for b in self.bodies))
        lo = np.min(np.array(los), axis=0)
        hi = np.max(np.array(his), axis=0)
        rng = np.random.default_rng(0xC0FFEE)  # fixed: the check is part of the contract
        pts = rng.uniform(lo, hi, size=(n, 3))
        for p in pts:
            owners = [i for i, b in enumerate(self.bodies) if b.contains(p)]
            if len(owners) > 1:
                raise SceneError(
                    f"bodies {owners[0]} and {owners[1]} overlap "
                    f"(point {p.tolist()} inside both)")

    def material_at(self, p: np.ndarray) -> Material:
        for b in self.bodies:
            if b.contains(p):
                return b.material
        return self.ambient

    def body_index_at(self, p: np.ndarray) -> int:
        """Index of the containing body, -1 for ambient."""
        for i, b in enumerate(self.bodies):
            if b.contains(p):
                return i
        return -1

    def inside_patient(self, p: np.ndarray) -> bool:
        return any(b.contains(p) for b in self.patient_bodies)

    def boundary_distance(self, origin: np.ndarray, direction: np.ndarray,
                          t_max: float) -> float:
        """Distance to the nearest body surface ahead, capped at t_max.

        Between 0 and the returned value the set of containing bodies is
        constant, so the material along that stretch is whatever it is at
        the origin."""
        t_best = t_max
        for b in self.bodies:
            interval = b.ray_interval(origin, direction)
            if interval is None:
                continue
            for t in interval:
                if _EPS < t < t_best:
                    t_best = t
        return t_best


def _parse_vec3(raw, what: str) -> np.ndarray:
    if (not isinstance(raw, (list, tuple))) or len(raw) != 3:
        raise SceneError(f"{what} must be a 3-element array, got {raw!r}")
    try:
        v = np.array([float(x) for x in raw], dtype=np.float64)
    except (TypeError, ValueError):
        raise SceneError(f"{what} must contain numbers, got {raw!r}") from None
    if not np.all(np.isfinite(v)):
        raise SceneError(f"{what} contains non-finite values: {raw!r}")
    return v


def _parse_shape(raw, where: str) -> Shape:
    if not isinstance(raw, dict) or "type" not in raw:
        raise SceneError(f"{where}: shape must be an object with a 'type' key")
    kind = raw["type"]
    try:
        if kind == "cylinder":
            axis = raw.get("axis", "z")
            if axis not in _AXIS_INDEX:
                raise SceneError(f"{where}: cylinder axis must be one of x, y, z, got {axis!r}")
            r, h = float(raw["radius_m"]), float(raw["height_m"])
            if r <= 0 or h <= 0:
                raise SceneError(f"{where}: cylinder radius/height must be positive")
            return Cylinder(r, h, _AXIS_INDEX[axis])
        if kind == "sphere":
            r = float(raw["radius_m"])
            if r <= 0:
                raise SceneError(f"{where}: sphere radius must be positive")
            return Sphere(r)
        if kind == "box":
            h = _parse_vec3(raw["half_extents_m"], f"{where}: box half_extents_m")
            if np.any(h <= 0):
                raise SceneError(f"{where}: box half extents must be positive")
            return Box(tuple(h))
    except KeyError as e:
        raise SceneError(f"{where}: shape '{kind}' missing field {e}") from None
    except (TypeError, ValueError):
        raise SceneError(f"{where}: shape '{kind}' has a non-numeric field") from None
    raise SceneError(f"{where}: unknown shape type '{kind}'")


def scene_from_dict(doc: dict) -> Scene:
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")
    ambient_name = doc.get("ambient", "air")
    if not isinstance(ambient_name, str):
        raise SceneError(f"scene 'ambient' must be a material name, got {ambient_name!r}")
    try:
        ambient = get_material(ambient_name)
    except MaterialError as e:
        raise SceneError(f"scene ambient: {e}") from None
    bodies_raw = doc.get("bodies", [])
    if not isinstance(bodies_raw, list):
        raise SceneError("scene 'bodies' must be an array")
    bodies = []
    for i, braw in enumerate(bodies_raw):
        where = f"body {i}"
        if not isinstance(braw, dict):
            raise SceneError(f"{where}: must be an object")
        shape = _parse_shape(braw.get("shape"), where)
        translation = _parse_vec3(braw.get("translation_m", [0, 0, 0]),
                                  f"{where}: translation_m")
        rot = _parse_vec3(braw.get("rotation_deg", [0, 0, 0]), f"{where}: rotation_deg")
        material_name = braw.get("material")
        if not isinstance(material_name, str):
            raise SceneError(f"{where}: 'material' must be a material name")
        try:
            material = get_material(material_name)
        except MaterialError as e:
            raise SceneError(f"{where}: {e}") from None
        is_patient = braw.get("is_patient", False)
        if not isinstance(is_patient, bool):
            raise SceneError(f"{where}: 'is_patient' must be true or false")
        bodies.append(Body(shape=shape, rotation=rotation_matrix_deg(*rot),
                           translation_m=translation, material=material,
                           is_patient=is_patient))
    return Scene(bodies, ambient)


def load_scene(path) -> Scene:
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise SceneError(f"cannot open scene file '{path}': {e}") from None
    except json.JSONDecodeError as e:
        raise SceneError(f"scene file '{path}' is not valid JSON: {e}") from None
    try:
        return scene_from_dict(doc)
    except SceneError as e:
        raise SceneError(f"scene file '{path}': {e}") from None


def world_bounds(scene: Scene, grid_lo: np.ndarray, grid_hi: np.ndarray,
                 source_pos: np.ndarray, margin_m: float = 0.1
                 ) -> Tuple[np.ndarray, np.ndarray]:
    """Axis-aligned world box: grid, source, and every body, plus margin.
    Photons leaving it are terminated as exits."""
    lo = np.minimum(np.asarray(grid_lo, dtype=np.float64), source_pos)
    hi = np.maximum(np.asarray(grid_hi, dtype=np.float64), source_pos)
    for b in scene.bodies:
        blo, bhi = b.aabb()
        lo = np.minimum(lo, blo)
        hi = np.maximum(hi, bhi)
    return lo - margin_m, hi + margin_m
