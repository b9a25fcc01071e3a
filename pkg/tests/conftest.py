"""Shared builders for the test suite."""
import math

import numpy as np
import pytest

from radfield.model import (Channel, ConeShape, EnergyBinning, FieldMetadata,
                            GridSpec, Layer, RadiationField)


def make_metadata(**overrides) -> FieldMetadata:
    base = dict(
        software_name="radfield",
        software_version="0.1.0",
        physics_model_id="photon-pe-kn-v1",
        scene_digest="0" * 64,
        tube_position_m=(0.0, 0.0, 0.0),
        tube_direction=(0.0, 0.0, 1.0),
        field_shape=ConeShape(opening_angle_deg=20.0),
        spectrum_id="test",
        primary_count=1000,
        rng_seed=42,
        epsilon_rel_achieved=0.05,
        timestamp_utc="2026-01-01T00:00:00Z",
        dynamic={},
    )
    base.update(overrides)
    return FieldMetadata(**base)


def make_grid(counts=(2, 2, 2), voxel=0.01, origin=(0.0, 0.0, 0.0)) -> GridSpec:
    extent = tuple(c * voxel for c in counts)
    return GridSpec(extent, (voxel, voxel, voxel), tuple(counts), origin)


def scalar_layer(name: str, grid: GridSpec, values=None, kind="scalar-f32") -> Layer:
    if values is None:
        values = np.arange(grid.nvox, dtype=np.float64)
    return Layer(name=name, unit="1", statistical_error=0.0,
                 element_kind=kind, arity=1, data=np.asarray(values))


def histogram_layer(name: str, grid: GridSpec, binning: EnergyBinning,
                    rng: np.random.Generator) -> Layer:
    raw = rng.random((grid.nvox, binning.bin_count))
    probs = raw / raw.sum(axis=1, keepdims=True)
    probs[rng.random(grid.nvox) < 0.2] = 0.0  # some never-hit voxels
    return Layer(name=name, unit="probability", statistical_error=0.1,
                 element_kind="histogram-f32", arity=binning.bin_count, data=probs)


def make_field(counts=(2, 2, 2), bin_count=4, seed=0) -> RadiationField:
    rng = np.random.default_rng(seed)
    grid = make_grid(counts)
    binning = EnergyBinning(bin_count=bin_count, bin_width_keV=4.68)
    field = RadiationField(grid=grid, binning=binning, metadata=make_metadata())
    ch = Channel("beam")
    ch.add_layer(scalar_layer("hits", grid, rng.random(grid.nvox)))
    ch.add_layer(histogram_layer("spectrum", grid, binning, rng))
    field.add_channel(ch)
    ch2 = Channel("scatter")
    ch2.add_layer(scalar_layer("hits", grid, rng.random(grid.nvox)))
    field.add_channel(ch2)
    return field


def dda_chords(start, end, grid: GridSpec):
    """Independent traversal oracle: exact voxel chords for a segment.

    Clips the segment's parameter interval against the grid box, splits it
    at every axis-plane crossing, and assigns each sub-interval to the voxel
    containing its midpoint.  Returns {(ix,iy,iz): chord_length_m} for the
    portion of the segment inside the grid, in traversal order (dicts keep
    insertion order).  A zero-length segment inside the grid maps its single
    point to chord 0.
    """
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    d = end - start
    length = float(np.linalg.norm(d))
    origin = np.asarray(grid.origin_m, dtype=np.float64)
    voxel = np.asarray(grid.voxel_m, dtype=np.float64)
    top = origin + np.asarray(grid.counts) * voxel

    def locate(p):
        rel = (p - origin) / voxel
        idx = tuple(int(math.floor(rel[ax])) for ax in range(3))
        if all(0 <= idx[ax] < grid.counts[ax] for ax in range(3)):
            return idx
        return None

    if length == 0.0:
        idx = locate(start)
        return {idx: 0.0} if idx is not None else {}

    t0, t1 = 0.0, 1.0
    for ax in range(3):
        if d[ax] == 0.0:
            # half-open membership matches the floor convention
            if not (origin[ax] <= start[ax] < top[ax]):
                return {}
        else:
            ta = (origin[ax] - start[ax]) / d[ax]
            tb = (top[ax] - start[ax]) / d[ax]
            t0 = max(t0, min(ta, tb))
            t1 = min(t1, max(ta, tb))
    if t0 >= t1:
        return {}

    cuts = {t0, t1}
    for ax in range(3):
        if d[ax] == 0.0:
            continue
        for k in range(grid.counts[ax] + 1):
            t = (origin[ax] + k * voxel[ax] - start[ax]) / d[ax]
            if t0 < t < t1:
                cuts.add(t)
    ts = sorted(cuts)

    chords = {}
    for a, b in zip(ts[:-1], ts[1:]):
        mid = start + (0.5 * (a + b)) * d
        idx = locate(mid)
        if idx is not None:
            chords[idx] = chords.get(idx, 0.0) + (b - a) * length
    return chords


@pytest.fixture
def rng():
    return np.random.default_rng(0xA5A5)
