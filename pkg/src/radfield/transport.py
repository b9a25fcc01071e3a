"""Photon transport: emission, free paths, Compton scattering, tracking.

The physics model is deliberately small: photoelectric absorption ends a
track, incoherent (Compton) scattering deflects it and degrades its energy,
nothing else happens.  Electrons deposit locally and are never followed.
Tracks terminate on absorption, on leaving the world box, or when the
energy drops below CUTOFF_KEV.

Segment consumers receive every straight flight between events, so a sink
sees the full polyline of each track with per-segment classification.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import MaterialError
from .geometry import BOUNDARY_NUDGE, Scene
from .materials import Material
from .model import ConeShape, PyramidShape
from .spectrum import Spectrum

ELECTRON_REST_KEV = 511.0
CUTOFF_KEV = 1.0
MAX_STEPS = 10_000


class Component(IntEnum):
    BEAM = 0
    PATIENT = 1
    SCATTER = 2


class Termination(IntEnum):
    ABSORBED = 0
    EXITED = 1
    CUTOFF = 2
    CAPPED = 3


@dataclass
class SourceConfig:
    position_m: np.ndarray
    direction: np.ndarray
    shape: object  # ConeShape or PyramidShape
    spectrum: Spectrum

    def __post_init__(self):
        self.position_m = np.asarray(self.position_m, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if not (abs(n - 1.0) < 1e-6):
            raise ValueError(f"source direction must be a unit vector, |d| = {n}")
        self.direction = d / n
        if not isinstance(self.shape, (ConeShape, PyramidShape)):
            raise TypeError(f"unsupported field shape {type(self.shape).__name__}")


@dataclass
class PhotonState:
    position_m: np.ndarray
    direction: np.ndarray
    energy_kev: float
    scatter_count: int = 0

    @property
    def component(self) -> Component:
        return Component.BEAM if self.scatter_count == 0 else Component.SCATTER


def _orthonormal_frame(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # Gram-Schmidt against a fixed helper: for an axis near +z this yields
    # e1 ~ +x and e2 ~ +y, so pyramid width/height land where expected
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - float(helper @ axis) * axis
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def cone_direction(axis: np.ndarray, opening_angle_deg: float,
                   u1: float, u2: float) -> np.ndarray:
    """Uniform over the spherical cap of half-angle opening/2 around axis."""
    half = math.radians(opening_angle_deg) * 0.5
    cos_theta = 1.0 - u1 * (1.0 - math.cos(half))
    sin_theta = math.sqrt(max(0.0, 1.0 - cos_theta * cos_theta))
    phi = 2.0 * math.pi * u2
    e1, e2 = _orthonormal_frame(axis)
    d = (cos_theta * axis
         + sin_theta * (math.cos(phi) * e1 + math.sin(phi) * e2))
    return d / np.linalg.norm(d)


def pyramid_direction(axis: np.ndarray, shape: PyramidShape,
                      u1: float, u2: float) -> np.ndarray:
    """Through a point uniform on the target rectangle seen from the apex."""
    e1, e2 = _orthonormal_frame(axis)
    x = (u1 - 0.5) * shape.rect_w_m
    y = (u2 - 0.5) * shape.rect_h_m
    d = shape.at_distance_m * axis + x * e1 + y * e2
    return d / np.linalg.norm(d)


def emit_primary(source: SourceConfig, rng: np.random.Generator) -> PhotonState:
    u = rng.random(3)
    if isinstance(source.shape, ConeShape):
        direction = cone_direction(source.direction, source.shape.opening_angle_deg,
                                   u[0], u[1])
    else:
        direction = pyramid_direction(source.direction, source.shape, u[0], u[1])
    energy = source.spectrum.sample(u[2])
    return PhotonState(position_m=source.position_m.copy(), direction=direction,
                       energy_kev=energy, scatter_count=0)


def sample_free_path(material: Material, energy_kev: float, u: float) -> float:
    lo = material.energies_kev[0]
    hi = material.energies_kev[-1]
    if not (lo <= energy_kev <= hi):
        raise MaterialError(
            f"energy {energy_kev} keV outside '{material.name}' table range [{lo}, {hi}] keV")
    mu = material.mu_total_per_m(energy_kev)
    return -math.log1p(-u) / mu


def compton_scatter(energy_kev: float, rng: np.random.Generator
                    ) -> Tuple[float, float]:
    """Kahn's rejection sampler for the Klein-Nishina angular distribution.

    Returns the degraded energy and the polar scattering angle.  x denotes
    the energy ratio E/E'; the two proposal branches mix a 1/x tail with a
    uniform one, which covers the distribution at any energy."""
    alpha = energy_kev / ELECTRON_REST_KEV
    while True:
        r1, r2, r3 = rng.random(3)
        if r1 * (2.0 * alpha + 9.0) <= 2.0 * alpha + 1.0:
            x = 1.0 + 2.0 * alpha * r2
            if r3 <= 4.0 * (x - 1.0) / (x * x):
                break
        else:
            x = (1.0 + 2.0 * alpha) / (1.0 + 2.0 * alpha * r2)
            cos_theta = 1.0 - (x - 1.0) / alpha
            if r3 <= 0.5 * (cos_theta * cos_theta + 1.0 / x):
                break
    cos_theta = 1.0 - (x - 1.0) / alpha
    cos_theta = min(1.0, max(-1.0, cos_theta))
    return energy_kev / x, math.acos(cos_theta)


def deflect(direction: np.ndarray, theta: float, phi: float) -> np.ndarray:
    e1, e2 = _orthonormal_frame(direction)
    d = (math.cos(theta) * direction
         + math.sin(theta) * (math.cos(phi) * e1 + math.sin(phi) * e2))
    return d / np.linalg.norm(d)


def classify_segment(photon: PhotonState, inside_patient: bool) -> Component:
    if photon.scatter_count == 0:
        return Component.BEAM
    return Component.PATIENT if inside_patient else Component.SCATTER


def _exit_distance(pos: np.ndarray, direction: np.ndarray,
                   lo: np.ndarray, hi: np.ndarray) -> float:
    t = math.inf
    for k in range(3):
        d = direction[k]
        if d > 1e-300:
            t = min(t, (hi[k] - pos[k]) / d)
        elif d < -1e-300:
            t = min(t, (lo[k] - pos[k]) / d)
    return max(t, 0.0)


SegmentSink = Callable[[np.ndarray, np.ndarray, float, Component], None]


def trace_photon(photon: PhotonState, scene: Scene, world_lo: np.ndarray,
                 world_hi: np.ndarray, sink: Optional[SegmentSink],
                 rng: np.random.Generator) -> Termination:
    """Track one photon to termination, feeding straight segments to sink.

    Each sink call carries (start, end, entrance energy, component); a
    straight flight crossing material boundaries is reported as one segment
    per homogeneous stretch, all sharing the flight's energy and component.
    """
    pos = photon.position_m.astype(np.float64).copy()
    direction = photon.direction.astype(np.float64).copy()
    energy = float(photon.energy_kev)

    for _ in range(MAX_STEPS):
        probe = pos + BOUNDARY_NUDGE * direction
        material = scene.material_at(probe)
        component = classify_segment(photon, scene.inside_patient(probe))

        # distances are measured from pos itself: measuring from the nudged
        # probe would land each crossing short of the surface and leave the
        # next probe sitting exactly on it
        t_exit = _exit_distance(pos, direction, world_lo, world_hi)
        t_boundary = scene.boundary_distance(pos, direction, t_exit)
        free = sample_free_path(material, energy, rng.random())

        if free < t_boundary:
            # interaction inside the current material stretch
            end = pos + free * direction
            if sink is not None:
                sink(pos, end, energy, component)
            pos = end
            pe_prob = material.photoelectric_fraction(energy)
            if rng.random() < pe_prob:
                return Termination.ABSORBED
            energy, _theta = compton_scatter(energy, rng)
            phi = 2.0 * math.pi * rng.random()
            direction = deflect(direction, _theta, phi)
            photon.scatter_count += 1
            photon.position_m = pos
            photon.direction = direction
            photon.energy_kev = energy
            if energy < CUTOFF_KEV:
                return Termination.CUTOFF
            continue

        # no interaction before the next surface: emit the homogeneous
        # stretch and step across the boundary (or out of the world)
        end = pos + t_boundary * direction
        if sink is not None:
            sink(pos, end, energy, component)
        pos = end
        photon.position_m = pos
        if t_boundary >= t_exit * (1.0 - 1e-12):
            return Termination.EXITED
    return Termination.CAPPED
