"""Production simulation engine: batched tracing, slot scoring, convergence.

The scalar modules (transport, scoring) define the semantics; this engine
reproduces them at speed with a fixed-parallelism scheme that makes output
bytes independent of the thread count:

  - Work is split over W_STREAMS logical streams, each owning a persistent
    counter-based RNG keyed by (seed, stream id).  A stream's entire history
    of draws depends only on the seed and the round sizes, never on thread
    scheduling, so any number of executor threads produces the same numbers.
  - Photons advance in rounds of GLOBAL_EVAL_EVERY primaries.  Within a
    round each stream traces its share with vectorized event stepping,
    collecting one record per straight flight, then converts flights to
    voxel-entrance records (point sampling at half the minimal voxel edge)
    and applies them sequentially in a compiled kernel.  Entrance order is
    a pure function of the stream's trace, so per-voxel checkpoint cadence
    is reproducible.
  - Accumulator state is slot-based: a dense voxel->slot map per (stream,
    channel) plus growable per-slot arrays, so memory follows the number of
    voxels actually hit.
  - Streams merge (Welford parallel combination) in stream-id order at
    every evaluation point and at the end; merge order is fixed, so the
    floating-point results are reproducible bit for bit.
"""
from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numba
import numpy as np

from .errors import ConfigError
from .geometry import BOUNDARY_NUDGE, Body, Box, Cylinder, Scene, Sphere, world_bounds
from .model import (Channel, ConeShape, EnergyBinning, FieldMetadata, GridSpec,
                    Layer, RadiationField)
from .scoring import (CHECKPOINT_EVERY, GLOBAL_EVAL_EVERY, VARIANCE_CEILING,
                      percentile_rank)
from .transport import CUTOFF_KEV, ELECTRON_REST_KEV, MAX_STEPS, SourceConfig

W_STREAMS = 4
_EPS = 1e-12
_CHANNELS = ("beam", "patient", "scatter")


# ---------------------------------------------------------------------------
# vectorized scene queries

class _VecScene:
    """Array-shaped mirror of a Scene for batched containment/intersection."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.bodies: List[Body] = scene.bodies
        self.rots = [b.rotation for b in self.bodies]
        self.trans = [b.translation_m for b in self.bodies]
        self.patient_idx = [i for i, b in enumerate(self.bodies) if b.is_patient]
        # material slot 0 is the ambient; bodies map to slots 1.. by identity
        self.materials = [scene.ambient]
        self.body_slot = np.empty(len(self.bodies), dtype=np.int64)
        for i, b in enumerate(self.bodies):
            for j, m in enumerate(self.materials):
                if m is b.material:
                    self.body_slot[i] = j
                    break
            else:
                self.materials.append(b.material)
                self.body_slot[i] = len(self.materials) - 1

    def _local(self, i: int, pts: np.ndarray) -> np.ndarray:
        return (pts - self.trans[i]) @ self.rots[i]

    def _contains(self, i: int, pts: np.ndarray) -> np.ndarray:
        local = self._local(i, pts)
        shape = self.bodies[i].shape
        if isinstance(shape, Sphere):
            return np.einsum("ij,ij->i", local, local) <= shape.radius_m ** 2
        if isinstance(shape, Box):
            he = np.asarray(shape.half_extents_m)
            return np.all(np.abs(local) <= he, axis=1)
        k = shape.axis
        a, b = (k + 1) % 3, (k + 2) % 3
        return ((np.abs(local[:, k]) <= 0.5 * shape.height_m)
                & (local[:, a] ** 2 + local[:, b] ** 2 <= shape.radius_m ** 2))

    def material_slot_at(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[0], dtype=np.int64)
        claimed = np.zeros(pts.shape[0], dtype=bool)
        for i in range(len(self.bodies)):
            mask = ~claimed & self._contains(i, pts)
            out[mask] = self.body_slot[i]
            claimed |= mask
        return out

    def inside_patient(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[0], dtype=bool)
        for i in self.patient_idx:
            out |= self._contains(i, pts)
        return out

    def _interval(self, i: int, o: np.ndarray, d: np.ndarray):
        """Per-ray [t0, t1] interval inside body i, plus validity mask."""
        lo_cl = self._local(i, o)
        d_cl = d @ self.rots[i]
        shape = self.bodies[i].shape
        n = o.shape[0]
        if isinstance(shape, Sphere):
            b = np.einsum("ij,ij->i", lo_cl, d_cl)
            c = np.einsum("ij,ij->i", lo_cl, lo_cl) - shape.radius_m ** 2
            disc = b * b - c
            valid = disc > 0
            root = np.sqrt(np.where(valid, disc, 0.0))
            return -b - root, -b + root, valid
        t0 = np.full(n, -np.inf)
        t1 = np.full(n, np.inf)
        valid = np.ones(n, dtype=bool)
        if isinstance(shape, Box):
            axes = ((0, shape.half_extents_m[0]), (1, shape.half_extents_m[1]),
                    (2, shape.half_extents_m[2]))
        else:
            axes = ((shape.axis, 0.5 * shape.height_m),)
        for k, h in axes:
            dk = d_cl[:, k]
            ok = lo_cl[:, k]
            parallel = np.abs(dk) < _EPS
            valid &= ~parallel | (np.abs(ok) <= h)
            dk_safe = np.where(parallel, 1.0, dk)
            ta = (-h - ok) / dk_safe
            tb = (h - ok) / dk_safe
            swap = ta > tb
            ta2 = np.where(swap, tb, ta)
            tb2 = np.where(swap, ta, tb)
            t0 = np.where(parallel, t0, np.maximum(t0, ta2))
            t1 = np.where(parallel, t1, np.minimum(t1, tb2))
        if isinstance(shape, Cylinder):
            k = shape.axis
            ia, ib = (k + 1) % 3, (k + 2) % 3
            a = d_cl[:, ia] ** 2 + d_cl[:, ib] ** 2
            b = lo_cl[:, ia] * d_cl[:, ia] + lo_cl[:, ib] * d_cl[:, ib]
            c = lo_cl[:, ia] ** 2 + lo_cl[:, ib] ** 2 - shape.radius_m ** 2
            parallel = a < _EPS
            valid &= ~parallel | (c <= 0)
            disc = b * b - a * c
            valid &= parallel | (disc > 0)
            a_safe = np.where(parallel, 1.0, a)
            root = np.sqrt(np.where(disc > 0, disc, 0.0))
            q0 = (-b - root) / a_safe
            q1 = (-b + root) / a_safe
            t0 = np.where(parallel, t0, np.maximum(t0, q0))
            t1 = np.where(parallel, t1, np.minimum(t1, q1))
        valid &= t0 < t1
        return t0, t1, valid

    def boundary_distance(self, o: np.ndarray, d: np.ndarray,
                          t_cap: np.ndarray) -> np.ndarray:
        t_best = t_cap.copy()
        for i in range(len(self.bodies)):
            t0, t1, valid = self._interval(i, o, d)
            for t in (t0, t1):
                hit = valid & (t > _EPS) & (t < t_best)
                t_best = np.where(hit, t, t_best)
        return t_best


# ---------------------------------------------------------------------------
# vectorized emission and scattering

def _frames(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # vectorized mirror of transport._orthonormal_frame
    helper = np.where(np.abs(d[:, :1]) < 0.9,
                      np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    e1 = helper - np.sum(helper * d, axis=1, keepdims=True) * d
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return e1, np.cross(d, e1)


def _emit_batch(source: SourceConfig, rng: np.random.Generator, n: int):
    u = rng.random((n, 3))
    axis = np.broadcast_to(source.direction, (n, 3))
    e1, e2 = _frames(axis)
    if isinstance(source.shape, ConeShape):
        half = math.radians(source.shape.opening_angle_deg) * 0.5
        cos_t = 1.0 - u[:, 0] * (1.0 - math.cos(half))
        sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
        phi = 2.0 * math.pi * u[:, 1]
        d = (cos_t[:, None] * axis
             + sin_t[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))
    else:
        x = (u[:, 0] - 0.5) * source.shape.rect_w_m
        y = (u[:, 1] - 0.5) * source.shape.rect_h_m
        d = source.shape.at_distance_m * axis + x[:, None] * e1 + y[:, None] * e2
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    energies = source.spectrum.sample(u[:, 2])
    pos = np.broadcast_to(source.position_m, (n, 3)).copy()
    return pos, d, np.asarray(energies, dtype=np.float64)


def _kn_batch(rng: np.random.Generator, energies: np.ndarray
              ) -> Tuple[np.ndarray, np.ndarray]:
    """Batched Kahn rejection sampling; returns (new energies, cos theta)."""
    alpha = energies / ELECTRON_REST_KEV
    x = np.empty_like(energies)
    pending = np.arange(energies.size)
    while pending.size:
        u = rng.random((pending.size, 3))
        a = alpha[pending]
        two_a = 2.0 * a
        branch1 = u[:, 0] * (two_a + 9.0) <= two_a + 1.0
        cand = np.where(branch1,
                        1.0 + two_a * u[:, 1],
                        (1.0 + two_a) / (1.0 + two_a * u[:, 1]))
        cos_t = 1.0 - (cand - 1.0) / a
        accept = np.where(branch1,
                          u[:, 2] <= 4.0 * (cand - 1.0) / (cand * cand),
                          u[:, 2] <= 0.5 * (cos_t * cos_t + 1.0 / cand))
        x[pending[accept]] = cand[accept]
        pending = pending[~accept]
    cos_t = np.clip(1.0 - (x - 1.0) / alpha, -1.0, 1.0)
    return energies / x, cos_t


def _deflect_batch(d: np.ndarray, cos_t: np.ndarray, phi: np.ndarray) -> np.ndarray:
    e1, e2 = _frames(d)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    out = (cos_t[:, None] * d
           + sin_t[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))
    return out / np.linalg.norm(out, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# flight tracing

@dataclass
class _Flights:
    start: np.ndarray      # (n, 3)
    direction: np.ndarray  # (n, 3) unit
    length: np.ndarray     # (n,)
    energy: np.ndarray     # (n,)
    scatters: np.ndarray   # (n,) int64, count at flight time


def _trace_round(vscene: _VecScene, source: SourceConfig,
                 rng: np.random.Generator, n: int, world_lo: np.ndarray,
                 world_hi: np.ndarray) -> Tuple[_Flights, int]:
    """Trace n primaries; returns their flights in a fixed order and the
    number of tracks cut off by the step cap."""
    pos, direction, energy = _emit_batch(source, rng, n)
    nscat = np.zeros(n, dtype=np.int64)
    flight_start = pos.copy()

    alive = energy >= CUTOFF_KEV
    pos, direction, energy = pos[alive], direction[alive], energy[alive]
    nscat, flight_start = nscat[alive], flight_start[alive]

    parts: List[Tuple[np.ndarray, ...]] = []
    capped = 0

    for _step in range(MAX_STEPS):
        k = pos.shape[0]
        if k == 0:
            break
        probe = pos + BOUNDARY_NUDGE * direction

        slots = vscene.material_slot_at(probe)
        mu = np.empty(k, dtype=np.float64)
        for s in np.unique(slots):
            mask = slots == s
            mu[mask] = vscene.materials[s].mu_total_per_m(energy[mask])

        t_exit = np.full(k, np.inf)
        for ax in range(3):
            dk = direction[:, ax]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_hi = (world_hi[ax] - pos[:, ax]) / dk
                t_lo = (world_lo[ax] - pos[:, ax]) / dk
            t_exit = np.where(dk > _EPS, np.minimum(t_exit, t_hi), t_exit)
            t_exit = np.where(dk < -_EPS, np.minimum(t_exit, t_lo), t_exit)
        t_exit = np.maximum(t_exit, 0.0)

        # distances from pos, not the probe: a probe-based distance lands the
        # crossing a nudge short of the surface and the next probe exactly on
        # it, flipping the material of everything downstream
        t_boundary = vscene.boundary_distance(pos, direction, t_exit)
        free = -np.log1p(-rng.random(k)) / mu

        interacting = free < t_boundary
        exiting = ~interacting & (t_boundary >= t_exit * (1.0 - 1e-12))
        advance = np.where(interacting, free, t_boundary)
        end = pos + advance[:, None] * direction

        ended = interacting | exiting
        if np.any(ended):
            seg = end[ended] - flight_start[ended]
            parts.append((flight_start[ended].copy(), direction[ended].copy(),
                          np.linalg.norm(seg, axis=1), energy[ended].copy(),
                          nscat[ended].copy()))

        pos = end
        survivors = ~exiting

        if np.any(interacting):
            idx = np.nonzero(interacting)[0]
            pe_prob = np.empty(idx.size, dtype=np.float64)
            islots = slots[idx]
            for s in np.unique(islots):
                mask = islots == s
                pe_prob[mask] = vscene.materials[s].photoelectric_fraction(energy[idx][mask])
            absorbed = rng.random(idx.size) < pe_prob
            scatter_idx = idx[~absorbed]
            survivors[idx[absorbed]] = False
            if scatter_idx.size:
                new_e, cos_t = _kn_batch(rng, energy[scatter_idx])
                phi = 2.0 * math.pi * rng.random(scatter_idx.size)
                direction[scatter_idx] = _deflect_batch(direction[scatter_idx], cos_t, phi)
                energy[scatter_idx] = new_e
                nscat[scatter_idx] += 1
                flight_start[scatter_idx] = pos[scatter_idx]
                survivors[scatter_idx] &= new_e >= CUTOFF_KEV

        pos, direction, energy = pos[survivors], direction[survivors], energy[survivors]
        nscat, flight_start = nscat[survivors], flight_start[survivors]
    else:
        capped = pos.shape[0]

    if parts:
        flights = _Flights(
            start=np.concatenate([p[0] for p in parts]),
            direction=np.concatenate([p[1] for p in parts]),
            length=np.concatenate([p[2] for p in parts]),
            energy=np.concatenate([p[3] for p in parts]),
            scatters=np.concatenate([p[4] for p in parts]))
    else:
        flights = _Flights(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
                           np.zeros(0), np.zeros(0, dtype=np.int64))
    return flights, capped


# ---------------------------------------------------------------------------
# flights -> voxel entrance records

def _flights_to_entrances(flights: _Flights, grid: GridSpec,
                          binning: EnergyBinning, vscene: _VecScene):
    """Point-sample flights on the grid and dedup contiguous voxel runs.

    Sampling sits at multiples of s = 0.5*min(voxel edge) from the flight
    start plus the flight end point, restricted up front to the parameter
    window where the flight overlaps the grid box; that is exactly the
    sample set the scalar traversal keeps after discarding outside points.
    """
    nf = flights.length.size
    empty = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
             np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    if nf == 0:
        return empty
    origin = np.asarray(grid.origin_m)
    voxel = np.asarray(grid.voxel_m)
    counts = np.asarray(grid.counts, dtype=np.int64)
    lo = origin
    hi = origin + counts * voxel
    s = 0.5 * float(np.min(voxel))

    t_a = np.zeros(nf)
    t_b = flights.length.copy()
    for ax in range(3):
        dk = flights.direction[:, ax]
        ok = flights.start[:, ax]
        parallel = np.abs(dk) < _EPS
        inside = (ok >= lo[ax]) & (ok <= hi[ax])
        dk_safe = np.where(parallel, 1.0, dk)
        ta = (lo[ax] - ok) / dk_safe
        tb = (hi[ax] - ok) / dk_safe
        swap = ta > tb
        ta2 = np.where(swap, tb, ta)
        tb2 = np.where(swap, ta, tb)
        t_a = np.where(parallel, np.where(inside, t_a, 1.0), np.maximum(t_a, ta2))
        t_b = np.where(parallel, np.where(inside, t_b, 0.0), np.minimum(t_b, tb2))

    tiny = 1e-9 * np.maximum(1.0, flights.length)
    valid = t_a <= t_b + tiny
    m_lo = np.ceil(np.maximum(t_a, 0.0) / s - 1e-9).astype(np.int64)
    m_hi = np.floor(np.minimum(t_b, flights.length) / s + 1e-9).astype(np.int64)
    base = np.where(valid, np.maximum(m_hi - m_lo + 1, 0), 0)
    end_extra = (valid & (t_b >= flights.length - tiny)).astype(np.int64)
    counts_per = base + end_extra
    total = int(counts_per.sum())
    if total == 0:
        return empty

    offsets = np.concatenate(([0], np.cumsum(counts_per)))
    fidx = np.repeat(np.arange(nf), counts_per)
    r = np.arange(total, dtype=np.int64) - offsets[fidx]
    is_end = r == base[fidx]
    t = np.where(is_end, flights.length[fidx], (m_lo[fidx] + r) * s)
    pts = flights.start[fidx] + t[:, None] * flights.direction[fidx]

    idx3 = np.floor((pts - origin) / voxel).astype(np.int64)
    inside = np.all((idx3 >= 0) & (idx3 < counts), axis=1)
    flat = (idx3[:, 2] * counts[1] + idx3[:, 1]) * counts[0] + idx3[:, 0]

    first = r == 0
    prev_inside = np.concatenate(([False], inside[:-1]))
    prev_flat = np.concatenate(([-1], flat[:-1]))
    entrance = inside & (first | ~prev_inside | (flat != prev_flat))

    e_flat = flat[entrance]
    e_fidx = fidx[entrance]
    e_pts = pts[entrance]
    e_bins = binning.bin_index(flights.energy[e_fidx]).astype(np.int64)
    e_dirs = flights.direction[e_fidx]

    channel = np.zeros(e_flat.size, dtype=np.int64)
    scattered = flights.scatters[e_fidx] > 0
    if np.any(scattered):
        pat = vscene.inside_patient(e_pts[scattered])
        channel[scattered] = np.where(pat, 1, 2)
    return e_flat, e_bins, e_dirs, channel


# ---------------------------------------------------------------------------
# slot-state scoring

@numba.njit(cache=True, nogil=True)
def _apply_kernel(voxels, bin_idx, dirx, diry, dirz, start, slot_map, size_box,
                  hits, since, bins, dsum, wn, wmean, wm2, nbins, checkpoint_every):
    cap = hits.shape[0]
    for i in range(start, voxels.shape[0]):
        v = voxels[i]
        slot = slot_map[v]
        if slot < 0:
            if size_box[0] >= cap:
                return i
            slot = size_box[0]
            slot_map[v] = slot
            size_box[0] = slot + 1
        hits[slot] += 1
        bins[slot, bin_idx[i]] += 1
        dsum[slot, 0] += dirx[i]
        dsum[slot, 1] += diry[i]
        dsum[slot, 2] += dirz[i]
        since[slot] += 1
        if since[slot] >= checkpoint_every:
            h = hits[slot]
            n1 = wn[slot] + 1
            for b in range(nbins):
                x = bins[slot, b] / h
                delta = x - wmean[slot, b]
                m = wmean[slot, b] + delta / n1
                wmean[slot, b] = m
                wm2[slot, b] += delta * (x - m)
            wn[slot] = n1
            since[slot] = 0
    return voxels.shape[0]


class _SlotState:
    """Growable accumulator pool for one (stream, channel) pair."""

    def __init__(self, nvox: int, nbins: int, capacity: int = 4096):
        self.nbins = nbins
        self.slot_map = np.full(nvox, -1, dtype=np.int64)
        self.size_box = np.zeros(1, dtype=np.int64)
        self.hits = np.zeros(capacity, dtype=np.int64)
        self.since = np.zeros(capacity, dtype=np.int64)
        self.bins = np.zeros((capacity, nbins), dtype=np.int64)
        self.dsum = np.zeros((capacity, 3), dtype=np.float64)
        self.wn = np.zeros(capacity, dtype=np.int64)
        self.wmean = np.zeros((capacity, nbins), dtype=np.float64)
        self.wm2 = np.zeros((capacity, nbins), dtype=np.float64)

    def _grow(self) -> None:
        def dbl(a):
            out = np.zeros((a.shape[0] * 2,) + a.shape[1:], dtype=a.dtype)
            out[:a.shape[0]] = a
            return out
        self.hits = dbl(self.hits)
        self.since = dbl(self.since)
        self.bins = dbl(self.bins)
        self.dsum = dbl(self.dsum)
        self.wn = dbl(self.wn)
        self.wmean = dbl(self.wmean)
        self.wm2 = dbl(self.wm2)

    def apply(self, voxels: np.ndarray, bin_idx: np.ndarray, dirs: np.ndarray) -> None:
        dirx = np.ascontiguousarray(dirs[:, 0])
        diry = np.ascontiguousarray(dirs[:, 1])
        dirz = np.ascontiguousarray(dirs[:, 2])
        done = 0
        while done < voxels.shape[0]:
            done = _apply_kernel(voxels, bin_idx, dirx, diry, dirz, done,
                                 self.slot_map, self.size_box, self.hits,
                                 self.since, self.bins, self.dsum, self.wn,
                                 self.wmean, self.wm2, self.nbins, CHECKPOINT_EVERY)
            if done < voxels.shape[0]:
                self._grow()

    def used_voxels(self) -> np.ndarray:
        return np.nonzero(self.slot_map >= 0)[0]


# ---------------------------------------------------------------------------
# stream merging and evaluation

def _merge_rows(n_a, mean_a, m2_a, n_b, mean_b, m2_b):
    """Chan combination on (rows, bins) arrays with per-row counts; mirrors
    welford.merge_into so op-level and engine merges agree bitwise."""
    n = n_a + n_b
    safe = np.where(n > 0, n, 1).astype(np.float64)
    delta = mean_b - mean_a
    nb_frac = np.where(n > 0, n_b / safe, 0.0)
    mean = mean_a + delta * nb_frac[:, None]
    m2 = m2_a + m2_b + delta * delta * (n_a * nb_frac)[:, None]
    return n, mean, m2


class _MergedChannel:
    def __init__(self, nvox: int, nbins: int, want_bins: bool):
        self.hits = np.zeros(nvox, dtype=np.int64)
        self.wn = np.zeros(nvox, dtype=np.int64)
        self.wmean = np.zeros((nvox, nbins), dtype=np.float64)
        self.wm2 = np.zeros((nvox, nbins), dtype=np.float64)
        self.bins = np.zeros((nvox, nbins), dtype=np.int64) if want_bins else None
        self.dsum = np.zeros((nvox, 3), dtype=np.float64) if want_bins else None

    def absorb(self, st: _SlotState) -> None:
        ids = st.used_voxels()
        if ids.size == 0:
            return
        sl = st.slot_map[ids]
        self.hits[ids] += st.hits[sl]
        if self.bins is not None:
            self.bins[ids] += st.bins[sl]
            self.dsum[ids] += st.dsum[sl]
        n, mean, m2 = _merge_rows(self.wn[ids], self.wmean[ids], self.wm2[ids],
                                  st.wn[sl], st.wmean[sl], st.wm2[sl])
        self.wn[ids] = n
        self.wmean[ids] = mean
        self.wm2[ids] = m2


def _merge_channel(states: Sequence[_SlotState], nvox: int, nbins: int,
                   want_bins: bool) -> _MergedChannel:
    merged = _MergedChannel(nvox, nbins, want_bins)
    for st in states:  # stream-id order: fixed merge order
        merged.absorb(st)
    return merged


def _channel_epsilon(merged: _MergedChannel) -> np.ndarray:
    """Per-voxel relative error for one channel; voxels hit but never
    checkpointed report the unconverged sentinel 1."""
    nvox = merged.hits.shape[0]
    eps = np.full(nvox, np.nan)
    hit = merged.hits > 0
    eps[hit] = 1.0
    rows = np.nonzero(hit & (merged.wn > 0))[0]
    if rows.size:
        var = merged.wm2[rows] / merged.wn[rows, None]
        eps[rows] = np.clip(np.mean(var / VARIANCE_CEILING, axis=1), 0.0, 1.0)
    return eps


# ---------------------------------------------------------------------------
# top-level driver

@dataclass
class SimulationResult:
    field: RadiationField
    converged: bool
    primaries_traced: int
    field_epsilon: float
    capped_tracks: int
    evaluations: int
    wall_seconds: float


def _round_shares(total: int) -> List[int]:
    base = total // W_STREAMS
    rem = total % W_STREAMS
    return [base + (1 if i < rem else 0) for i in range(W_STREAMS)]


def simulate(scene: Scene, source: SourceConfig, grid: GridSpec,
             binning: EnergyBinning, epsilon_threshold: float, max_photons: int,
             seed: int, workers: int, metadata: FieldMetadata) -> SimulationResult:
    """Run the full simulation and return the finalized field.

    `metadata` supplies the descriptive fields; primary_count, rng_seed,
    epsilon_rel_achieved, and the `converged` dynamic entry are overwritten
    with run results.
    """
    if not (0.0 < epsilon_threshold < 1.0):
        raise ConfigError(f"epsilon threshold must be in (0,1), got {epsilon_threshold}")
    if max_photons < GLOBAL_EVAL_EVERY:
        raise ConfigError(
            f"max_photons must be at least {GLOBAL_EVAL_EVERY} so one evaluation can run")
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    table_max = float(min(m.energies_kev[-1] for m in
                          [scene.ambient] + [b.material for b in scene.bodies]))
    if source.spectrum.max_energy_kev > table_max:
        raise ConfigError(
            f"spectrum reaches {source.spectrum.max_energy_kev} keV but attenuation "
            f"tables end at {table_max} keV")

    started = time.monotonic()
    nvox = grid.nvox
    nbins = binning.bin_count
    vscene = _VecScene(scene)
    grid_lo = np.asarray(grid.origin_m)
    grid_hi = grid_lo + np.asarray(grid.counts) * np.asarray(grid.voxel_m)
    world_lo, world_hi = world_bounds(scene, grid_lo, grid_hi, source.position_m)

    rngs = [np.random.Generator(np.random.Philox(key=[seed, sid]))
            for sid in range(W_STREAMS)]
    states = [[_SlotState(nvox, nbins) for _ in _CHANNELS] for _ in range(W_STREAMS)]

    capped_total = 0
    primaries = 0
    since_eval = 0
    evaluations = 0
    converged = False
    field_epsilon = 1.0

    def stream_task(sid: int, count: int) -> int:
        flights, capped = _trace_round(vscene, source, rngs[sid], count,
                                       world_lo, world_hi)
        flat, bins_idx, dirs, channel = _flights_to_entrances(
            flights, grid, binning, vscene)
        for c in range(len(_CHANNELS)):
            mask = channel == c
            if np.any(mask):
                states[sid][c].apply(np.ascontiguousarray(flat[mask]),
                                     np.ascontiguousarray(bins_idx[mask]),
                                     dirs[mask])
        return capped

    def evaluate() -> Tuple[float, bool]:
        per_channel_eps = []
        any_hit = np.zeros(nvox, dtype=bool)
        for c in range(len(_CHANNELS)):
            merged = _merge_channel([states[sid][c] for sid in range(W_STREAMS)],
                                    nvox, nbins, want_bins=False)
            per_channel_eps.append(_channel_epsilon(merged))
            any_hit |= merged.hits > 0
        if not np.any(any_hit):
            return 1.0, False
        # restrict to ever-hit voxels first: every remaining column has at
        # least one non-NaN channel value, so nanmax stays warning-free
        stacked = np.stack(per_channel_eps)[:, any_hit]
        values = np.sort(np.nanmax(stacked, axis=0))
        eps = float(values[percentile_rank(values.size) - 1])
        return eps, True

    with ThreadPoolExecutor(max_workers=workers) as pool:
        remaining = max_photons
        while remaining > 0:
            this_round = min(remaining, GLOBAL_EVAL_EVERY)
            shares = _round_shares(this_round)
            futures = [pool.submit(stream_task, sid, shares[sid])
                       for sid in range(W_STREAMS) if shares[sid] > 0]
            for fut in futures:
                capped_total += fut.result()
            primaries += this_round
            remaining -= this_round
            since_eval += this_round
            if since_eval >= GLOBAL_EVAL_EVERY:
                since_eval = 0
                evaluations += 1
                field_epsilon, _ = evaluate()
                if field_epsilon <= epsilon_threshold:
                    converged = True
                    break

    # achieved error reported in metadata reflects the final state even if
    # the budget ran out between evaluation points
    field_epsilon, _ = evaluate()
    converged = converged or field_epsilon <= epsilon_threshold

    final_meta = dataclasses.replace(
        metadata, primary_count=primaries, rng_seed=seed,
        epsilon_rel_achieved=field_epsilon,
        dynamic={**metadata.dynamic, "converged": 1 if converged else 0})

    fld = RadiationField(grid=grid, binning=binning, metadata=final_meta)
    for c, channel_name in enumerate(_CHANNELS):
        merged = _merge_channel([states[sid][c] for sid in range(W_STREAMS)],
                                nvox, nbins, want_bins=True)
        hit = merged.hits > 0
        spectrum = np.zeros((nvox, nbins), dtype=np.float64)
        spectrum[hit] = merged.bins[hit].astype(np.float64) / merged.hits[hit, None]
        hits_layer = np.zeros(nvox, dtype=np.float64)
        hits_layer[hit] = merged.hits[hit] / primaries
        direction = np.zeros((nvox, 3), dtype=np.float64)
        norms = np.linalg.norm(merged.dsum, axis=1)
        ok = norms > 0
        direction[ok] = merged.dsum[ok] / norms[ok, None]
        channel = Channel(channel_name)
        channel.add_layer(Layer(name="spectrum", unit="probability",
                                statistical_error=field_epsilon,
                                element_kind="histogram-f32", arity=nbins,
                                data=spectrum.astype(np.float32).ravel()))
        channel.add_layer(Layer(name="hits", unit="fraction",
                                statistical_error=field_epsilon,
                                element_kind="scalar-f32", arity=1,
                                data=hits_layer.astype(np.float32)))
        channel.add_layer(Layer(name="direction", unit="unit-vector",
                                statistical_error=field_epsilon,
                                element_kind="vector-f32", arity=3,
                                data=direction.astype(np.float32).ravel()))
        fld.add_channel(channel)

    return SimulationResult(field=fld, converged=converged,
                            primaries_traced=primaries,
                            field_epsilon=field_epsilon,
                            capped_tracks=capped_total,
                            evaluations=evaluations,
                            wall_seconds=time.monotonic() - started)
