"""Voxel scoring: traversal point sampling, accumulators, convergence.

This module is the reference (scalar, per-voxel-object) implementation of
the scoring semantics.  The production engine vectorizes the same rules
over dense arrays; an equivalence test keeps the two in lockstep, so any
behavior question should be answered by reading this file.

Scoring rules, in one place:
  - A straight photon flight is point-sampled at spacing s = half the
    smallest voxel edge, plus both endpoints.  One contiguous run of
    samples inside a voxel = one entrance (the run's first sample).
  - An entrance records the flight's energy bin and direction, bumps the
    voxel's hit count, and every 50th entrance to that voxel flushes a
    variance checkpoint: the current normalized bin probabilities are fed
    to per-bin Welford streams.
  - A voxel's relative error is the mean over bins of (population
    variance / 0.25), clamped to [0,1]; 0.25 is the variance ceiling for
    values confined to [0,1].  A voxel with no checkpoints yet reports 1.
  - The field converges when the 95th-percentile (nearest-rank, over
    voxels hit at least once) relative error drops to the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import welford
from .errors import ScoringError
from .model import (Channel, EnergyBinning, FieldMetadata, GridSpec, Layer,
                    RadiationField)
from .transport import Component

CHECKPOINT_EVERY = 50
GLOBAL_EVAL_EVERY = 50_000
VARIANCE_CEILING = 0.25

COMPONENT_CHANNELS = {Component.BEAM: "beam", Component.PATIENT: "patient",
                      Component.SCATTER: "scatter"}


class VoxelAccumulator:
    """Per-voxel tallies for one component channel."""

    __slots__ = ("bin_count", "hits", "bin_counts", "direction_sum",
                 "photons_since_checkpoint", "w_n", "w_mean", "w_m2")

    def __init__(self, bin_count: int):
        self.bin_count = bin_count
        self.hits = 0
        self.bin_counts = np.zeros(bin_count, dtype=np.uint64)
        self.direction_sum = np.zeros(3, dtype=np.float64)
        self.photons_since_checkpoint = 0
        self.w_n = np.zeros(bin_count, dtype=np.uint64)
        self.w_mean = np.zeros(bin_count, dtype=np.float64)
        self.w_m2 = np.zeros(bin_count, dtype=np.float64)

    def copy(self) -> "VoxelAccumulator":
        out = VoxelAccumulator(self.bin_count)
        out.hits = self.hits
        out.bin_counts = self.bin_counts.copy()
        out.direction_sum = self.direction_sum.copy()
        out.photons_since_checkpoint = self.photons_since_checkpoint
        out.w_n = self.w_n.copy()
        out.w_mean = self.w_mean.copy()
        out.w_m2 = self.w_m2.copy()
        return out


def score_entrance(acc: VoxelAccumulator, energy_kev: float,
                   direction: np.ndarray, binning: EnergyBinning) -> VoxelAccumulator:
    acc.hits += 1
    acc.bin_counts[binning.bin_index(energy_kev)] += 1
    acc.direction_sum += direction
    acc.photons_since_checkpoint += 1
    if acc.photons_since_checkpoint >= CHECKPOINT_EVERY:
        welford_checkpoint(acc)
        acc.photons_since_checkpoint = 0
    return acc


def welford_checkpoint(acc: VoxelAccumulator) -> VoxelAccumulator:
    if acc.hits == 0:
        raise ScoringError("checkpoint on a voxel with zero hits")
    snapshot = acc.bin_counts.astype(np.float64) / acc.hits
    welford.observe(acc.w_n, acc.w_mean, acc.w_m2, snapshot)
    return acc


def epsilon_rel(acc: VoxelAccumulator) -> float:
    if not np.any(acc.w_n > 0):
        return 1.0  # never checkpointed: report fully unconverged
    variances = welford.population_variance(acc.w_n, acc.w_m2)
    value = float(np.mean(variances / VARIANCE_CEILING))
    return min(1.0, max(0.0, value))


def merge(acc_a: VoxelAccumulator, acc_b: VoxelAccumulator) -> VoxelAccumulator:
    if acc_a.bin_count != acc_b.bin_count:
        raise ScoringError(
            f"cannot merge accumulators with bin counts {acc_a.bin_count} != {acc_b.bin_count}")
    out = acc_a.copy()
    out.hits += acc_b.hits
    out.bin_counts += acc_b.bin_counts
    out.direction_sum += acc_b.direction_sum
    out.photons_since_checkpoint += acc_b.photons_since_checkpoint
    welford.merge_into(out.w_n, out.w_mean, out.w_m2,
                       acc_b.w_n, acc_b.w_mean, acc_b.w_m2)
    return out


# ---------------------------------------------------------------------------
# traversal

def traverse_segment(start_m, end_m, grid: GridSpec
                     ) -> List[Tuple[Tuple[int, int, int], np.ndarray]]:
    """Voxels a segment enters, in order, with their entrance points.

    Sample points sit at multiples of s = 0.5*min(voxel edge) from the
    start, plus both endpoints; samples outside the grid are dropped; each
    contiguous run of samples in one voxel yields that voxel once, tagged
    with the run's first sample position.
    """
    start = np.asarray(start_m, dtype=np.float64)
    end = np.asarray(end_m, dtype=np.float64)
    seg = end - start
    length = float(np.linalg.norm(seg))
    s = 0.5 * min(grid.voxel_m)
    ts = [m * s for m in range(int(math.floor(length / s)) + 1)]
    if not ts or ts[-1] < length:
        ts.append(length)

    origin = np.asarray(grid.origin_m)
    voxel = np.asarray(grid.voxel_m)
    counts = grid.counts
    direction = seg / length if length > 0 else seg

    out: List[Tuple[Tuple[int, int, int], np.ndarray]] = []
    prev: Optional[Tuple[int, int, int]] = None
    for t in ts:
        p = start + t * direction if length > 0 else start
        rel = (p - origin) / voxel
        ix, iy, iz = int(math.floor(rel[0])), int(math.floor(rel[1])), int(math.floor(rel[2]))
        if not (0 <= ix < counts[0] and 0 <= iy < counts[1] and 0 <= iz < counts[2]):
            prev = None  # leaving the grid ends the current run
            continue
        key = (ix, iy, iz)
        if key != prev:
            out.append((key, p))
            prev = key
    return out


# ---------------------------------------------------------------------------
# grid-level state

@dataclass
class ScoringGrid:
    grid: GridSpec
    binning: EnergyBinning
    primaries_traced: int = 0
    # sparse: only voxels that were actually entered carry an accumulator
    accumulators: Dict[Tuple[int, int], VoxelAccumulator] = dc_field(default_factory=dict)

    def accumulator(self, component: Component, flat: int) -> VoxelAccumulator:
        key = (int(component), flat)
        acc = self.accumulators.get(key)
        if acc is None:
            acc = VoxelAccumulator(self.binning.bin_count)
            self.accumulators[key] = acc
        return acc

    def peek(self, component: Component, flat: int) -> Optional[VoxelAccumulator]:
        return self.accumulators.get((int(component), flat))

    def score_flight(self, start_m, end_m, energy_kev: float, direction,
                     scatter_count: int, inside_patient_fn) -> None:
        """Score one straight flight: traverse once, classify each entrance
        by its own position (unscattered flights always to Beam)."""
        d = np.asarray(direction, dtype=np.float64)
        for (ix, iy, iz), point in traverse_segment(start_m, end_m, self.grid):
            if scatter_count == 0:
                component = Component.BEAM
            elif inside_patient_fn(point):
                component = Component.PATIENT
            else:
                component = Component.SCATTER
            acc = self.accumulator(component, self.grid.flat_index(ix, iy, iz))
            score_entrance(acc, energy_kev, d, self.binning)

    def voxels_hit(self) -> List[int]:
        flats = {flat for (_c, flat), acc in self.accumulators.items() if acc.hits > 0}
        return sorted(flats)


@dataclass
class ConvergenceState:
    epsilon_per_voxel: Dict[int, float] = dc_field(default_factory=dict)
    field_epsilon: float = 1.0
    photons_since_global_eval: int = 0


def percentile_rank(n: int) -> int:
    """1-based nearest rank of the 95th percentile: min(n, floor(0.95n)+1)."""
    return min(n, int(math.floor(0.95 * n)) + 1)


def evaluate_termination(state: ConvergenceState, scoring: ScoringGrid,
                         threshold: float) -> bool:
    """Recompute voxel errors and decide; True means stop.

    A voxel's error is the worst over the component channels that hit it;
    voxels never hit by anything are left out entirely (a beam-shadow voxel
    would otherwise hold the field at 1 forever).
    """
    per_voxel: Dict[int, float] = {}
    for (component, flat), acc in scoring.accumulators.items():
        if acc.hits == 0:
            continue
        eps = epsilon_rel(acc)
        if eps > per_voxel.get(flat, -1.0):
            per_voxel[flat] = eps
    state.epsilon_per_voxel = per_voxel
    state.photons_since_global_eval = 0
    if not per_voxel:
        state.field_epsilon = 1.0
        return False
    values = sorted(per_voxel.values())
    state.field_epsilon = values[percentile_rank(len(values)) - 1]
    return state.field_epsilon <= threshold


def finalize(scoring: ScoringGrid, metadata: FieldMetadata,
             field_epsilon: float) -> RadiationField:
    """Bake accumulators into a field: per channel a normalized spectrum
    histogram, a hit fraction, and a mean entrance direction."""
    if scoring.primaries_traced <= 0:
        raise ScoringError("cannot finalize a run with zero primaries traced")
    nvox = scoring.grid.nvox
    bins = scoring.binning.bin_count
    fld = RadiationField(grid=scoring.grid, binning=scoring.binning, metadata=metadata)
    for component, channel_name in COMPONENT_CHANNELS.items():
        spectrum = np.zeros((nvox, bins), dtype=np.float64)
        hits = np.zeros(nvox, dtype=np.float64)
        direction = np.zeros((nvox, 3), dtype=np.float64)
        for (comp, flat), acc in scoring.accumulators.items():
            if comp != int(component) or acc.hits == 0:
                continue
            spectrum[flat] = acc.bin_counts.astype(np.float64) / acc.hits
            hits[flat] = acc.hits / scoring.primaries_traced
            norm = float(np.linalg.norm(acc.direction_sum))
            if norm > 0:
                direction[flat] = acc.direction_sum / norm
        channel = Channel(channel_name)
        channel.add_layer(Layer(name="spectrum", unit="probability",
                                statistical_error=field_epsilon,
                                element_kind="histogram-f32", arity=bins,
                                data=spectrum.astype(np.float32).ravel()))
        channel.add_layer(Layer(name="hits", unit="fraction",
                                statistical_error=field_epsilon,
                                element_kind="scalar-f32", arity=1,
                                data=hits.astype(np.float32)))
        channel.add_layer(Layer(name="direction", unit="unit-vector",
                                statistical_error=field_epsilon,
                                element_kind="vector-f32", arity=3,
                                data=direction.astype(np.float32).ravel()))
        fld.add_channel(channel)
    return fld
