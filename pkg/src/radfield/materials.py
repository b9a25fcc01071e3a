"""Material registry and attenuation lookups.

Lookups interpolate log(mu/rho) linearly in log(E) between table points and
clamp to the end values outside the tabulated 1..150 keV range.  Linear
attenuation is mu[1/m] = density[g/cm^3] * (mu/rho)[cm^2/g] * 100.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from . import tables
from .errors import MaterialError

_CM_PER_M = 100.0


def _loglog_interp(energy_kev, grid_kev: np.ndarray, values: np.ndarray):
    e = np.clip(np.asarray(energy_kev, dtype=np.float64), grid_kev[0], grid_kev[-1])
    out = np.exp(np.interp(np.log(e), np.log(grid_kev), np.log(values)))
    if np.isscalar(energy_kev) or np.ndim(energy_kev) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Material:
    """One homogeneous material: density plus mass-attenuation columns.

    The photoelectric and incoherent columns drive interaction-type
    selection; the total column drives free-path sampling.
    """
    name: str
    density_g_cm3: float
    electron_density_per_g: float
    energies_kev: np.ndarray = field(repr=False)
    total_cm2_g: np.ndarray = field(repr=False)
    photoelectric_cm2_g: np.ndarray = field(repr=False)
    compton_cm2_g: np.ndarray = field(repr=False)

    def mass_attenuation(self, energy_kev):
        return _loglog_interp(energy_kev, self.energies_kev, self.total_cm2_g)

    def mu_total_per_m(self, energy_kev):
        return self.density_g_cm3 * self.mass_attenuation(energy_kev) * _CM_PER_M

    def mu_photoelectric_per_m(self, energy_kev):
        mu_rho = _loglog_interp(energy_kev, self.energies_kev, self.photoelectric_cm2_g)
        return self.density_g_cm3 * mu_rho * _CM_PER_M

    def mu_compton_per_m(self, energy_kev):
        mu_rho = _loglog_interp(energy_kev, self.energies_kev, self.compton_cm2_g)
        return self.density_g_cm3 * mu_rho * _CM_PER_M

    def photoelectric_fraction(self, energy_kev):
        """Probability that a collision is photoelectric rather than a
        scatter, from the two partial coefficients renormalized."""
        pe = _loglog_interp(energy_kev, self.energies_kev, self.photoelectric_cm2_g)
        co = _loglog_interp(energy_kev, self.energies_kev, self.compton_cm2_g)
        return pe / (pe + co)


def _make(name: str, density: float, electron_density: float,
          total: Sequence[float], pe: Sequence[float], compton: Sequence[float]) -> Material:
    return Material(
        name=name, density_g_cm3=density, electron_density_per_g=electron_density,
        energies_kev=np.asarray(tables.ENERGIES_KEV, dtype=np.float64),
        total_cm2_g=np.asarray(total, dtype=np.float64),
        photoelectric_cm2_g=np.asarray(pe, dtype=np.float64),
        compton_cm2_g=np.asarray(compton, dtype=np.float64),
    )


_REGISTRY: Dict[str, Material] = {
    "air": _make("air", tables.DENSITY_G_CM3["air"],
                 tables.ELECTRON_DENSITY_PER_G["air"],
                 tables.TOTAL_AIR, tables.PE_AIR, tables.COMPTON_AIR),
    "water": _make("water", tables.DENSITY_G_CM3["water"],
                   tables.ELECTRON_DENSITY_PER_G["water"],
                   tables.TOTAL_WATER, tables.PE_WATER, tables.COMPTON_WATER),
    "soft_tissue": _make("soft_tissue", tables.DENSITY_G_CM3["soft_tissue"],
                         tables.ELECTRON_DENSITY_PER_G["soft_tissue"],
                         tables.TOTAL_TISSUE, tables.PE_TISSUE, tables.COMPTON_TISSUE),
    # numerically transparent stand-in: the air columns at a density so low
    # that the expected free path exceeds any scene by many orders
    "vacuum": _make("vacuum", 1e-20, tables.ELECTRON_DENSITY_PER_G["air"],
                    tables.TOTAL_AIR, tables.PE_AIR, tables.COMPTON_AIR),
}


def get_material(name: str) -> Material:
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise MaterialError(f"unknown material '{name}'; known materials: {known}") from None


def material_names():
    return sorted(_REGISTRY)
