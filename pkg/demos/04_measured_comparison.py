"""
Calibrating against a measured polar scan
=========================================

Simulated fields are in per-primary units; chamber measurements come in
dose rate. The comparison workflow finds the single scale factor that
matches curve integrals, then reports per-angle relative errors. Here
the "measurement" is synthesized from a simulation, scaled, noised, and
given one broken angle so the exclusion path has something to do.
"""
from pathlib import Path
import tempfile

import numpy as np

import radfield
from radfield.dosimetry import (PolarScanCurve, air_transmission_table,
                                conversion_factor, error_stats, kerma_tensor,
                                polar_scan, write_comparison_csv)
from radfield.engine import simulate
from radfield.geometry import Body, Cylinder, Scene, rotation_matrix_deg
from radfield.materials import get_material
from radfield.model import ConeShape, EnergyBinning, FieldMetadata, GridSpec
from radfield.spectrum import load_spectrum_csv
from radfield.transport import SourceConfig

grid = GridSpec((1.0, 1.0, 1.0), (0.04, 0.04, 0.04), (25, 25, 25), (0.0, 0.0, 0.0))
spectrum = load_spectrum_csv(Path(radfield.__file__).parent / "data" / "demo_100kv.csv")
source = SourceConfig(position_m=(-0.1, 0.5, 0.5), direction=(1.0, 0.0, 0.0),
                      shape=ConeShape(opening_angle_deg=10.0), spectrum=spectrum)
phantom = Body(shape=Cylinder(radius_m=0.1, height_m=0.2, axis=2),
               rotation=rotation_matrix_deg(0, 0, 0),
               translation_m=np.array([0.5, 0.5, 0.5]),
               material=get_material("water"), is_patient=True)
metadata = FieldMetadata(
    software_name="radfield", software_version="0.1.0",
    physics_model_id="photon-pe-kn-v1", scene_digest="0" * 64,
    tube_position_m=source.position_m, tube_direction=source.direction,
    field_shape=source.shape, spectrum_id="demo_100kv",
    primary_count=0, rng_seed=0, epsilon_rel_achieved=1.0,
    timestamp_utc="2026-01-01T00:00:00Z", dynamic={})

print("simulating ...")
result = simulate(Scene([phantom], get_material("air")), source, grid,
                  EnergyBinning(32, 4.68), epsilon_threshold=1e-9,
                  max_photons=300_000, seed=31, workers=4, metadata=metadata)

simulated = polar_scan(
    kerma_tensor(result.field, ("patient", "scatter"), air_transmission_table()),
    center_m=(0.5, 0.5, 0.5), radius_m=0.3, plane="xy", step_deg=15.0)

# Fake a chamber scan: true scale 5.3e8, 3% noise, angle 90 ruined by
# (say) a cable in the beam.
rng = np.random.default_rng(8)
values = simulated.values * 5.3e8 * (1.0 + 0.03 * rng.standard_normal(24))
values[6] *= 2.5
measured = PolarScanCurve(center_m=simulated.center_m, radius_m=0.3, plane="xy",
                          angles_deg=simulated.angles_deg, values=values)

s_c = conversion_factor(measured, simulated)
print(f"\nconversion factor: {s_c:.6g}  (true scale was 5.3e8)")

scaled = PolarScanCurve(center_m=simulated.center_m, radius_m=0.3, plane="xy",
                        angles_deg=simulated.angles_deg,
                        values=simulated.values * s_c)

everything = error_stats(measured, scaled)
print(f"all angles:  median {everything.median_rel:.2%}, "
      f"mean {everything.mean_rel:.2%}, std {everything.std_rel:.2%}")

trimmed = error_stats(measured, scaled, excluded_angles=[90.0])
print(f"minus 90:    median {trimmed.median_rel:.2%}, "
      f"mean {trimmed.mean_rel:.2%}, std {trimmed.std_rel:.2%}")

out = Path(tempfile.mkdtemp()) / "comparison.csv"
e_rel = np.abs(measured.values - scaled.values) / measured.values
write_comparison_csv(out, measured.angles_deg, measured.values, scaled.values, e_rel)
print(f"\nper-angle table written to {out}")
