"""Relative air-kerma post-processing and measurement comparison.

The chain: a simulated field's per-voxel spectra and hit fractions are
collapsed into a relative kerma value per voxel (midpoint sum over energy
bins weighted by the air energy-transfer coefficient), a circle of that
tensor is extracted as a polar curve, a measured curve calibrates it by
the ratio of the two curve integrals, and relative point errors of the
calibrated curve are summarized.

Floating-point accumulation order in the kerma sum is fixed and part of
the contract: channels in argument order, bins ascending, one running f64
total per voxel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import tables
from .errors import DosimetryError, OutOfBoundsError, UnknownNameError
from .model import GridSpec, RadiationField

_PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
_ANGLE_DECIMALS = 6  # angles are matched after rounding to this precision


@dataclass(frozen=True)
class TransmissionTable:
    """Air mass energy-transfer coefficients, log-log interpolated."""
    energies_kev: np.ndarray
    mu_tr_cm2_g: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=np.float64)
        c = np.asarray(self.mu_tr_cm2_g, dtype=np.float64)
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "mu_tr_cm2_g", c)
        if e.ndim != 1 or e.shape != c.shape or e.size < 2:
            raise DosimetryError("transmission table needs matching 1D arrays, >= 2 points")
        if np.any(np.diff(e) <= 0):
            raise DosimetryError("transmission table energies must be strictly increasing")
        if np.any(c <= 0):
            raise DosimetryError("transmission table coefficients must be positive")

    def lookup(self, energy_kev):
        e = np.asarray(energy_kev, dtype=np.float64)
        if np.any(e < self.energies_kev[0]) or np.any(e > self.energies_kev[-1]):
            raise DosimetryError(
                f"energy outside transmission table range "
                f"[{self.energies_kev[0]}, {self.energies_kev[-1]}] keV")
        out = np.exp(np.interp(np.log(e), np.log(self.energies_kev),
                               np.log(self.mu_tr_cm2_g)))
        if np.ndim(energy_kev) == 0:
            return float(out)
        return out


def air_transmission_table() -> TransmissionTable:
    return TransmissionTable(np.asarray(tables.ENERGIES_KEV),
                             np.asarray(tables.MUEN_AIR))


@dataclass(frozen=True)
class KermaTensor:
    grid: GridSpec
    values: np.ndarray  # flat, length nvox, relative units per primary


@dataclass(frozen=True)
class PolarScanCurve:
    center_m: Tuple[float, float, float]
    radius_m: float
    plane: str
    angles_deg: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles_deg, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "angles_deg", a)
        object.__setattr__(self, "values", v)
        if a.shape != v.shape or a.ndim != 1:
            raise DosimetryError("curve angles and values must be matching 1D arrays")
        if self.radius_m <= 0:
            raise DosimetryError("curve radius must be positive")
        if a.size and (np.any(np.diff(a) <= 0) or a[0] < 0 or a[-1] >= 360):
            raise DosimetryError("curve angles must be strictly increasing within [0, 360)")


@dataclass(frozen=True)
class ErrorStats:
    median_rel: float
    mean_rel: float
    std_rel: float
    excluded_angles: List[float] = dc_field(default_factory=list)


def kerma_tensor(field: RadiationField, channels: Sequence[str],
                 table: TransmissionTable) -> KermaTensor:
    """Collapse spectrum x hits into relative air kerma per voxel.

    Per voxel: sum over the named channels, bins ascending, of
    p_b * hits * (mu_tr(center_b) * center_b)."""
    binning = field.binning
    centers = binning.bin_centers_keV()
    weights = table.lookup(centers) * centers  # f64, shared by all voxels
    nvox = field.grid.nvox
    total = np.zeros(nvox, dtype=np.float64)
    for cname in channels:
        channel = field.channels.get(cname)
        if channel is None:
            raise UnknownNameError(
                f"no channel '{cname}' in field; available: {', '.join(field.channels) or '<none>'}")
        for lname in ("spectrum", "hits"):
            if lname not in channel.layers:
                raise UnknownNameError(f"channel '{cname}' has no '{lname}' layer")
        p = channel.layers["spectrum"].data.astype(np.float64).reshape(nvox, binning.bin_count)
        hits = channel.layers["hits"].data.astype(np.float64)
        for b in range(binning.bin_count):
            total += (p[:, b] * hits) * weights[b]
    return KermaTensor(grid=field.grid, values=total)


def _trilinear(grid: GridSpec, values: np.ndarray, point: np.ndarray) -> float:
    # coordinates in units of voxel index relative to voxel centers
    rel = (point - np.asarray(grid.origin_m)) / np.asarray(grid.voxel_m) - 0.5
    nx, ny, nz = grid.counts
    # clamp so the +1 corner stays in range when the point sits exactly on
    # the hull boundary (and against one-ulp excursions just outside it)
    i0 = np.clip(np.floor(rel).astype(int), 0,
                 np.maximum(np.asarray(grid.counts) - 2, 0))
    frac = np.clip(rel - i0, 0.0, 1.0)
    acc = 0.0
    for corner in range(8):
        dx, dy, dz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        # upper-corner index clamps on single-voxel axes, where its weight is 0
        ix = min(i0[0] + dx, nx - 1)
        iy = min(i0[1] + dy, ny - 1)
        iz = min(i0[2] + dz, nz - 1)
        w = ((frac[0] if dx else 1.0 - frac[0])
             * (frac[1] if dy else 1.0 - frac[1])
             * (frac[2] if dz else 1.0 - frac[2]))
        acc += w * values[(iz * ny + iy) * nx + ix]
    return acc


def _nearest(grid: GridSpec, values: np.ndarray, point: np.ndarray) -> float:
    rel = (point - np.asarray(grid.origin_m)) / np.asarray(grid.voxel_m)
    idx = np.floor(rel).astype(int)
    nx, ny, nz = grid.counts
    return float(values[(idx[2] * ny + idx[1]) * nx + idx[0]])


def polar_scan(tensor: KermaTensor, center_m, radius_m: float, plane: str,
               step_deg: float, method: str = "trilinear") -> PolarScanCurve:
    """Sample the tensor on a circle; angles 0, step, ... below 360.

    Interpolation needs a full voxel-center neighborhood, so every circle
    point must stay inside the hull of voxel centers; the first angle that
    leaves it is reported.
    """
    if plane not in _PLANES:
        raise DosimetryError(f"unknown scan plane '{plane}', expected one of {sorted(_PLANES)}")
    if step_deg <= 0 or step_deg > 360:
        raise DosimetryError(f"step must be in (0, 360], got {step_deg}")
    if method not in ("trilinear", "nearest"):
        raise DosimetryError(f"unknown sampling method '{method}'")
    grid = tensor.grid
    center = np.asarray(center_m, dtype=np.float64)
    ax_a, ax_b = _PLANES[plane]
    origin = np.asarray(grid.origin_m)
    voxel = np.asarray(grid.voxel_m)
    counts = np.asarray(grid.counts)
    # hull of voxel centers, the valid domain for both sampling methods
    lo = origin + 0.5 * voxel
    hi = origin + (counts - 0.5) * voxel

    angles = np.arange(0.0, 360.0, step_deg)
    values = np.empty(angles.size, dtype=np.float64)
    for i, angle in enumerate(angles):
        rad = math.radians(angle)
        point = center.copy()
        point[ax_a] += radius_m * math.cos(rad)
        point[ax_b] += radius_m * math.sin(rad)
        if np.any(point < lo) or np.any(point > hi):
            raise OutOfBoundsError(
                f"scan circle leaves the grid at angle {angle:g} deg "
                f"(point {point.tolist()})")
        if method == "trilinear":
            values[i] = _trilinear(grid, tensor.values, point)
        else:
            values[i] = _nearest(grid, tensor.values, point)
    return PolarScanCurve(center_m=tuple(center), radius_m=radius_m, plane=plane,
                          angles_deg=angles, values=values)


def _common_angles(a: PolarScanCurve, b: PolarScanCurve):
    ka = np.round(a.angles_deg, _ANGLE_DECIMALS)
    kb = np.round(b.angles_deg, _ANGLE_DECIMALS)
    common, ia, ib = np.intersect1d(ka, kb, return_indices=True)
    return common, ia, ib


def conversion_factor(measured: PolarScanCurve, simulated: PolarScanCurve) -> float:
    """Ratio of trapezoidal curve integrals over the common angle support."""
    common, ia, ib = _common_angles(measured, simulated)
    if common.size == 0:
        raise DosimetryError("curves share no angles")
    if common.size < 2:
        raise DosimetryError("curves share only one angle; cannot integrate")
    num = np.trapezoid(measured.values[ia], common)
    den = np.trapezoid(simulated.values[ib], common)
    if den <= 0:
        raise DosimetryError(f"simulated curve integral is not positive ({den})")
    return float(num / den)


def error_stats(measured: PolarScanCurve, simulated_scaled: PolarScanCurve,
                excluded_angles: Sequence[float] = ()) -> ErrorStats:
    """Relative point errors |m - s|/m over matched, non-excluded angles."""
    common, ia, ib = _common_angles(measured, simulated_scaled)
    if common.size == 0:
        raise DosimetryError("curves share no angles")
    excluded = set(np.round(np.asarray(list(excluded_angles), dtype=np.float64),
                            _ANGLE_DECIMALS).tolist())
    keep = np.array([angle not in excluded for angle in common])
    if not np.any(keep):
        raise DosimetryError("all common angles are excluded")
    m = measured.values[ia][keep]
    s = simulated_scaled.values[ib][keep]
    if np.any(m <= 0):
        bad = common[keep][np.argmax(m <= 0)]
        raise DosimetryError(f"measured value not positive at included angle {bad:g} deg")
    e = np.abs(m - s) / m
    return ErrorStats(median_rel=float(np.median(e)), mean_rel=float(np.mean(e)),
                      std_rel=float(np.std(e)),  # population std, ddof 0
                      excluded_angles=list(excluded_angles))


# ---------------------------------------------------------------------------
# curve CSV formats

def load_curve_csv(path) -> PolarScanCurve:
    """Measured-curve ingestion: header `angle_deg,value`, one angle per row."""
    angles: List[float] = []
    values: List[float] = []
    try:
        fh = open(path, "r", newline="")
    except OSError as e:
        raise DosimetryError(f"cannot open curve file '{path}': {e}") from None
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["angle_deg", "value"]:
            raise DosimetryError(
                f"curve file '{path}': header must be 'angle_deg,value'")
        for lineno, row in enumerate(rows, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise DosimetryError(
                    f"curve file '{path}' line {lineno}: expected 2 columns, got {len(row)}")
            try:
                angles.append(float(row[0]))
                values.append(float(row[1]))
            except ValueError:
                raise DosimetryError(
                    f"curve file '{path}' line {lineno}: non-numeric value in {row!r}") from None
    try:
        return PolarScanCurve(center_m=(0.0, 0.0, 0.0), radius_m=1.0, plane="xy",
                              angles_deg=np.asarray(angles), values=np.asarray(values))
    except DosimetryError as e:
        raise DosimetryError(f"curve file '{path}': {e}") from None


def write_curve_csv(path, curve: PolarScanCurve) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["angle_deg", "value"])
        for angle, value in zip(curve.angles_deg, curve.values):
            out.writerow([f"{angle:g}", repr(float(value))])


def write_comparison_csv(path, angles: np.ndarray, measured: np.ndarray,
                         simulated_scaled: np.ndarray, e_rel: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["angle_deg", "measured", "simulated_scaled", "e_rel"])
        for row in zip(angles, measured, simulated_scaled, e_rel):
            out.writerow([f"{row[0]:g}"] + [repr(float(x)) for x in row[1:]])
