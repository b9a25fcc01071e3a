"""Energy spectra: CSV ingestion and inverse-CDF sampling.

The CSV shape is two columns with a mandatory header line
``energy_keV,relative_intensity``, one knot per row, energies strictly
increasing.  Interval masses are trapezoids over the knots; sampling picks
the interval by cumulative mass and interpolates the energy linearly inside
it, so a given u always maps to the same energy.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import SpectrumError

CSV_HEADER = ("energy_keV", "relative_intensity")


@dataclass(frozen=True)
class Spectrum:
    energies_kev: np.ndarray
    intensities: np.ndarray
    # cumulative mass at each knot, cdf[0] = 0, cdf[-1] = 1
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        e = np.asarray(self.energies_kev, dtype=np.float64)
        w = np.asarray(self.intensities, dtype=np.float64)
        object.__setattr__(self, "energies_kev", e)
        object.__setattr__(self, "intensities", w)
        if e.ndim != 1 or e.shape != w.shape:
            raise SpectrumError("energies and intensities must be 1D arrays of equal length")
        if e.size < 2:
            raise SpectrumError(f"spectrum needs at least 2 points, got {e.size}")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(w))):
            raise SpectrumError("spectrum contains non-finite values")
        if np.any(np.diff(e) <= 0):
            raise SpectrumError("spectrum energies must be strictly increasing")
        if np.any(e <= 0):
            raise SpectrumError("spectrum energies must be positive")
        if np.any(w < 0):
            raise SpectrumError("spectrum intensities must be non-negative")
        masses = 0.5 * (w[1:] + w[:-1]) * np.diff(e)
        total = masses.sum()
        if total <= 0:
            raise SpectrumError("spectrum has zero total intensity")
        cdf = np.concatenate(([0.0], np.cumsum(masses) / total))
        cdf[-1] = 1.0
        object.__setattr__(self, "cdf", cdf)

    @property
    def max_energy_kev(self) -> float:
        return float(self.energies_kev[-1])

    def sample(self, u):
        """Map uniform u in [0,1) to energies; vectorized, deterministic."""
        uu = np.asarray(u, dtype=np.float64)
        idx = np.searchsorted(self.cdf, uu, side="right") - 1
        idx = np.clip(idx, 0, self.energies_kev.size - 2)
        lo, hi = self.cdf[idx], self.cdf[idx + 1]
        span = hi - lo
        frac = np.where(span > 0, (uu - lo) / np.where(span > 0, span, 1.0), 0.0)
        e = self.energies_kev[idx] + frac * (self.energies_kev[idx + 1] - self.energies_kev[idx])
        if np.isscalar(u) or np.ndim(u) == 0:
            return float(e)
        return e


def sample_energy(spectrum: Spectrum, u: float) -> float:
    return spectrum.sample(u)


def load_spectrum_csv(path) -> Spectrum:
    energies = []
    intensities = []
    try:
        fh = open(path, "r", newline="")
    except OSError as e:
        raise SpectrumError(f"cannot open spectrum file '{path}': {e}") from None
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise SpectrumError(f"spectrum file '{path}' is empty")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise SpectrumError(
                f"spectrum file '{path}': header must be "
                f"'{','.join(CSV_HEADER)}', got '{','.join(header)}'")
        for lineno, row in enumerate(rows, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise SpectrumError(
                    f"spectrum file '{path}' line {lineno}: expected 2 columns, got {len(row)}")
            try:
                energies.append(float(row[0]))
                intensities.append(float(row[1]))
            except ValueError:
                raise SpectrumError(
                    f"spectrum file '{path}' line {lineno}: non-numeric value in {row!r}") from None
    try:
        return Spectrum(np.asarray(energies), np.asarray(intensities))
    except SpectrumError as e:
        raise SpectrumError(f"spectrum file '{path}': {e}") from None
