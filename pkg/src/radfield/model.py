"""In-memory model of a voxelized radiation field.

A RadiationField is a regular 3D grid with an energy binning, a metadata
record, and an ordered set of named channels; each channel holds named
layers of per-voxel data.  Layer data is stored flat, row-major with x
fastest: flat index of voxel (ix, iy, iz) is ((iz*ny + iy)*nx + ix)*arity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, Tuple, Union

import numpy as np

from .errors import InvalidFieldError

Vec3 = Tuple[float, float, float]

# element kinds and their storage dtypes (little-endian on disk)
KIND_SCALAR_F32 = "scalar-f32"
KIND_SCALAR_F64 = "scalar-f64"
KIND_VECTOR_F32 = "vector-f32"
KIND_HISTOGRAM_F32 = "histogram-f32"

ELEMENT_KINDS = (KIND_SCALAR_F32, KIND_SCALAR_F64, KIND_VECTOR_F32, KIND_HISTOGRAM_F32)

KIND_DTYPES = {
    KIND_SCALAR_F32: np.dtype("<f4"),
    KIND_SCALAR_F64: np.dtype("<f8"),
    KIND_VECTOR_F32: np.dtype("<f4"),
    KIND_HISTOGRAM_F32: np.dtype("<f4"),
}


def _as_vec3(v) -> Vec3:
    t = tuple(float(x) for x in v)
    if len(t) != 3:
        raise InvalidFieldError(f"expected a 3-vector, got length {len(t)}")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel grid: extents and voxel sizes in meters, counts per axis,
    and the world position of the minimum corner."""

    extent_m: Vec3
    voxel_m: Vec3
    counts: Tuple[int, int, int]
    origin_m: Vec3

    def __post_init__(self):
        object.__setattr__(self, "extent_m", _as_vec3(self.extent_m))
        object.__setattr__(self, "voxel_m", _as_vec3(self.voxel_m))
        object.__setattr__(self, "origin_m", _as_vec3(self.origin_m))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        for i in range(3):
            e, w, c = self.extent_m[i], self.voxel_m[i], self.counts[i]
            if not (math.isfinite(e) and e > 0 and math.isfinite(w) and w > 0):
                raise InvalidFieldError(f"grid axis {i}: extents and voxel sizes must be positive, got extent={e} voxel={w}")
            if c < 1:
                raise InvalidFieldError(f"grid axis {i}: counts must be >= 1, got {c}")
            if c != int(math.floor(e / w + 0.5)):
                raise InvalidFieldError(
                    f"grid axis {i}: counts={c} inconsistent with round(extent/voxel)={e / w:.6g}")
        if not all(math.isfinite(o) for o in self.origin_m):
            raise InvalidFieldError("grid origin must be finite")

    @classmethod
    def from_extent(cls, extent_m, voxel_m, origin_m=(0.0, 0.0, 0.0)) -> "GridSpec":
        extent = _as_vec3(extent_m)
        voxel = _as_vec3(voxel_m)
        counts = tuple(max(1, int(math.floor(e / w + 0.5))) for e, w in zip(extent, voxel))
        return cls(extent, voxel, counts, _as_vec3(origin_m))

    @property
    def nvox(self) -> int:
        nx, ny, nz = self.counts
        return nx * ny * nz

    def flat_index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, nz = self.counts
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            raise IndexError(f"voxel index ({ix},{iy},{iz}) outside counts {self.counts}")
        return (iz * ny + iy) * nx + ix

    def voxel_centers_axis(self, axis: int) -> np.ndarray:
        n = self.counts[axis]
        w = self.voxel_m[axis]
        return self.origin_m[axis] + (np.arange(n) + 0.5) * w


@dataclass(frozen=True)
class EnergyBinning:
    """Uniform energy binning from 0 to bin_count*bin_width_keV."""

    bin_count: int
    bin_width_keV: float

    def __post_init__(self):
        object.__setattr__(self, "bin_count", int(self.bin_count))
        object.__setattr__(self, "bin_width_keV", float(self.bin_width_keV))
        if self.bin_count < 1:
            raise InvalidFieldError(f"bin_count must be positive, got {self.bin_count}")
        if not (math.isfinite(self.bin_width_keV) and self.bin_width_keV > 0):
            raise InvalidFieldError(f"bin_width_keV must be positive, got {self.bin_width_keV}")

    @property
    def max_energy_keV(self) -> float:
        return self.bin_count * self.bin_width_keV

    def bin_index(self, energy_keV):
        """floor(E/width), clamped to [0, bin_count-1]; works elementwise."""
        idx = np.floor(np.asarray(energy_keV, dtype=np.float64) / self.bin_width_keV).astype(np.int64)
        return np.clip(idx, 0, self.bin_count - 1)

    def bin_centers_keV(self) -> np.ndarray:
        return (np.arange(self.bin_count) + 0.5) * self.bin_width_keV


@dataclass
class Layer:
    """One per-voxel quantity: a flat data array plus unit and error labels."""

    name: str
    unit: str
    statistical_error: float
    element_kind: str
    arity: int
    data: np.ndarray

    def __post_init__(self):
        if self.element_kind not in ELEMENT_KINDS:
            raise InvalidFieldError(f"layer '{self.name}': unknown element kind '{self.element_kind}'")
        self.arity = int(self.arity)
        dtype = KIND_DTYPES[self.element_kind]
        self.data = np.ascontiguousarray(np.asarray(self.data).reshape(-1), dtype=dtype)

    def validate(self, grid: GridSpec, binning: EnergyBinning) -> None:
        err = float(self.statistical_error)
        if not (math.isfinite(err) and 0.0 <= err <= 1.0):
            raise InvalidFieldError(f"layer '{self.name}': statistical_error {err} outside [0,1]")
        if self.element_kind in (KIND_SCALAR_F32, KIND_SCALAR_F64):
            if self.arity != 1:
                raise InvalidFieldError(f"layer '{self.name}': scalar layers require arity 1, got {self.arity}")
        elif self.element_kind == KIND_HISTOGRAM_F32:
            if self.arity != binning.bin_count:
                raise InvalidFieldError(
                    f"layer '{self.name}': histogram arity {self.arity} != bin_count {binning.bin_count}")
        elif self.arity < 1:
            raise InvalidFieldError(f"layer '{self.name}': vector arity must be >= 1, got {self.arity}")
        expected = grid.nvox * self.arity
        if self.data.size != expected:
            raise InvalidFieldError(
                f"layer '{self.name}': data length {self.data.size} != counts*arity = {expected}")
        if self.element_kind == KIND_HISTOGRAM_F32:
            sums = self.data.reshape(grid.nvox, self.arity).sum(axis=1, dtype=np.float64)
            bad = ~(np.isclose(sums, 1.0, rtol=0.0, atol=1e-6) | (sums == 0.0))
            if np.any(bad):
                raise InvalidFieldError(
                    f"layer '{self.name}': histogram voxel {int(np.argmax(bad))} sums to "
                    f"{sums[np.argmax(bad)]:.9g}, expected 1 +- 1e-6 or all-zero")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Layer):
            return NotImplemented
        return (self.name == other.name and self.unit == other.unit
                and float(self.statistical_error) == float(other.statistical_error)
                and self.element_kind == other.element_kind and self.arity == other.arity
                and self.data.tobytes() == other.data.tobytes())


@dataclass
class Channel:
    """Named container of layers."""

    name: str
    layers: Dict[str, Layer] = dc_field(default_factory=dict)

    def add_layer(self, layer: Layer) -> "Channel":
        if layer.name in self.layers:
            raise InvalidFieldError(f"channel '{self.name}': duplicate layer name '{layer.name}'")
        self.layers[layer.name] = layer
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, Channel):
            return NotImplemented
        return self.name == other.name and self.layers == other.layers


@dataclass(frozen=True)
class ConeShape:
    opening_angle_deg: float

    def __post_init__(self):
        a = float(self.opening_angle_deg)
        if not (0.0 < a < 180.0):
            raise InvalidFieldError(f"cone opening angle must be in (0, 180), got {a}")


@dataclass(frozen=True)
class PyramidShape:
    rect_w_m: float
    rect_h_m: float
    at_distance_m: float

    def __post_init__(self):
        if not (self.rect_w_m > 0 and self.rect_h_m > 0 and self.at_distance_m > 0):
            raise InvalidFieldError("pyramid rectangle and distance must be positive")


FieldShape = Union[ConeShape, PyramidShape]

DynamicValue = Union[int, float, str, Vec3]


@dataclass
class FieldMetadata:
    """Reproducibility record serialized with every field file.

    The fixed block is mandatory and ordered; the dynamic map takes
    int64 / float64 / utf-8 string / 3-vector float64 values.
    """

    software_name: str
    software_version: str
    physics_model_id: str
    scene_digest: str
    tube_position_m: Vec3
    tube_direction: Vec3
    field_shape: FieldShape
    spectrum_id: str
    primary_count: int
    rng_seed: int
    epsilon_rel_achieved: float
    timestamp_utc: str
    dynamic: Dict[str, DynamicValue] = dc_field(default_factory=dict)

    def __post_init__(self):
        self.tube_position_m = _as_vec3(self.tube_position_m)
        self.tube_direction = _as_vec3(self.tube_direction)
        self.primary_count = int(self.primary_count)
        self.rng_seed = int(self.rng_seed)
        self.epsilon_rel_achieved = float(self.epsilon_rel_achieved)

    def validate(self) -> None:
        for label in ("software_name", "software_version", "physics_model_id",
                      "scene_digest", "spectrum_id", "timestamp_utc"):
            if not isinstance(getattr(self, label), str):
                raise InvalidFieldError(f"metadata field '{label}' must be a string")
        if not isinstance(self.field_shape, (ConeShape, PyramidShape)):
            raise InvalidFieldError("metadata field_shape must be a cone or pyramid shape")
        if self.primary_count < 0 or self.rng_seed < 0:
            raise InvalidFieldError("primary_count and rng_seed must be non-negative")
        n = math.sqrt(sum(c * c for c in self.tube_direction))
        if abs(n - 1.0) > 1e-6:
            raise InvalidFieldError(f"tube_direction must be a unit vector, |d| = {n:.9g}")
        for key, value in self.dynamic.items():
            if not isinstance(key, str):
                raise InvalidFieldError("dynamic metadata keys must be strings")
            if isinstance(value, (bool,)):
                raise InvalidFieldError(f"dynamic metadata '{key}': booleans are not a supported value type")
            if isinstance(value, (int, float, str)):
                continue
            try:
                _as_vec3(value)
            except Exception:
                raise InvalidFieldError(
                    f"dynamic metadata '{key}': values must be int, float, str, or 3-vector") from None


@dataclass
class RadiationField:
    """Grid + binning + metadata + channels; the codec's in-memory form."""

    grid: GridSpec
    binning: EnergyBinning
    metadata: FieldMetadata
    channels: Dict[str, Channel] = dc_field(default_factory=dict)

    def add_channel(self, channel: Channel) -> "RadiationField":
        if channel.name in self.channels:
            raise InvalidFieldError(f"duplicate channel name '{channel.name}'")
        self.channels[channel.name] = channel
        return self

    def validate(self) -> None:
        self.metadata.validate()
        for cname, channel in self.channels.items():
            if channel.name != cname:
                raise InvalidFieldError(f"channel key '{cname}' != channel.name '{channel.name}'")
            for lname, layer in channel.layers.items():
                if layer.name != lname:
                    raise InvalidFieldError(
                        f"channel '{cname}': layer key '{lname}' != layer.name '{layer.name}'")
                layer.validate(self.grid, self.binning)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RadiationField):
            return NotImplemented
        return (self.grid == other.grid and self.binning == other.binning
                and self.metadata == other.metadata and self.channels == other.channels)


def voxel_at(layer: Layer, grid: GridSpec, ix: int, iy: int, iz: int) -> np.ndarray:
    """Element of one voxel: view of length `arity` starting at the flat offset
    ((iz*ny + iy)*nx + ix)*arity."""
    flat = grid.flat_index(ix, iy, iz)
    return layer.data[flat * layer.arity:(flat + 1) * layer.arity]
