"""
Writing and reading field files
===============================

Run a small simulation in memory, store the result, then reopen it two
ways: the lazy reader that pulls single layers, and the full parse used
when every channel is needed anyway.
"""
import tempfile
from pathlib import Path

import numpy as np

from radfield.codec import open_field, read_field, write_field
from radfield.engine import simulate
from radfield.geometry import Body, Scene, Sphere, rotation_matrix_deg
from radfield.materials import get_material
from radfield.model import ConeShape, EnergyBinning, FieldMetadata, GridSpec
from radfield.spectrum import Spectrum
from radfield.transport import SourceConfig

# A tissue ball in air, lit from the left by a wide cone.
scene = Scene(
    [Body(shape=Sphere(radius_m=0.06),
          rotation=rotation_matrix_deg(0, 0, 0),
          translation_m=np.array([0.2, 0.15, 0.15]),
          material=get_material("soft_tissue"),
          is_patient=True)],
    ambient=get_material("air"))

source = SourceConfig(
    position_m=(-0.05, 0.15, 0.15),
    direction=(1.0, 0.0, 0.0),
    shape=ConeShape(opening_angle_deg=40.0),
    spectrum=Spectrum([20.0, 60.0, 100.0], [0.5, 2.0, 0.2]))

grid = GridSpec((0.3, 0.3, 0.3), (0.03, 0.03, 0.03), (10, 10, 10), (0.0, 0.0, 0.0))

metadata = FieldMetadata(
    software_name="radfield", software_version="0.1.0",
    physics_model_id="photon-pe-kn-v1", scene_digest="0" * 64,
    tube_position_m=source.position_m, tube_direction=source.direction,
    field_shape=source.shape, spectrum_id="three-line-demo",
    primary_count=0, rng_seed=0, epsilon_rel_achieved=1.0,
    timestamp_utc="2026-01-01T00:00:00Z", dynamic={"purpose": "demo"})

print("simulating 100k photons ...")
result = simulate(scene, source, grid, EnergyBinning(32, 4.68),
                  epsilon_threshold=0.2, max_photons=100_000,
                  seed=1, workers=4, metadata=metadata)
print(f"  traced {result.primaries_traced} primaries, "
      f"epsilon {result.field_epsilon:.3f}, converged={result.converged}")

path = Path(tempfile.mkdtemp()) / "demo.rf3d"
with open(path, "wb") as fh:
    n = write_field(result.field, fh)
print(f"  wrote {n} bytes to {path}")

# Lazy access: the header is parsed up front, data blocks on demand.
reader = open_field(path)
print("\nchannels and layers:")
for channel, layers in reader.channels().items():
    print(f"  {channel}: {', '.join(layers)}")

hits = reader.layer_array("beam", "hits")
busiest = tuple(int(i) for i in np.unravel_index(hits.argmax(), hits.shape))
print(f"\nbeam hit fractions, shape {hits.shape}, "
      f"busiest voxel {hits.max():.4f} at {busiest}")

spec = reader.layer_array("patient", "spectrum")
occupied = spec.sum(axis=3) > 0
print(f"patient spectra occupy {occupied.sum()} of {occupied.size} voxels; "
      f"normalization spread {np.abs(spec.sum(axis=3)[occupied] - 1).max():.2e}")

# Full parse gives the same values.
with open(path, "rb") as fh:
    field = read_field(fh)
same = np.array_equal(
    field.channels["beam"].layers["hits"].data,
    hits.transpose(2, 1, 0).reshape(-1))
print(f"\nfull parse matches lazy reader bit for bit: {same}")
print(f"metadata seed={field.metadata.rng_seed}, "
      f"epsilon={field.metadata.epsilon_rel_achieved:.3f}, "
      f"dynamic={field.metadata.dynamic}")
