"""
Vacuum falloff check
====================

With nothing to absorb or scatter, the hit fraction on the beam axis has
to drop with the square of the distance to the focal spot. This is the
cheapest end-to-end sanity check the engine has: it exercises emission,
flight clipping, traversal, and scoring, and the answer is known.
"""
import numpy as np

from radfield.engine import simulate
from radfield.geometry import Scene
from radfield.materials import get_material
from radfield.model import ConeShape, EnergyBinning, FieldMetadata, GridSpec
from radfield.spectrum import Spectrum
from radfield.transport import SourceConfig

grid = GridSpec((1.0, 1.0, 1.0), (0.04, 0.04, 0.04), (25, 25, 25), (0.0, 0.0, 0.0))

# source on the grid face, aimed straight down the x axis
source = SourceConfig(
    position_m=(0.0, 0.5, 0.5),
    direction=(1.0, 0.0, 0.0),
    shape=ConeShape(opening_angle_deg=24.0),
    spectrum=Spectrum([30.0, 60.0, 100.0], [1.0, 2.0, 0.5]))

metadata = FieldMetadata(
    software_name="radfield", software_version="0.1.0",
    physics_model_id="photon-pe-kn-v1", scene_digest="0" * 64,
    tube_position_m=source.position_m, tube_direction=source.direction,
    field_shape=source.shape, spectrum_id="three-line-demo",
    primary_count=0, rng_seed=0, epsilon_rel_achieved=1.0,
    timestamp_utc="2026-01-01T00:00:00Z", dynamic={})

print("simulating 400k photons in vacuum ...")
result = simulate(Scene([], get_material("vacuum")), source, grid,
                  EnergyBinning(32, 4.68), epsilon_threshold=1e-9,
                  max_photons=400_000, seed=99, workers=4, metadata=metadata)

hits = result.field.channels["beam"].layers["hits"].data
nx = ny = nz = 25
mid = 12  # the voxel row containing y = z = 0.5

print(f"\n{'r [m]':>8} {'F':>10} {'F * r^2':>10}")
products = []
for ix in range(6, 24):
    r = 0.02 + 0.04 * ix
    f = float(hits[(mid * ny + mid) * nx + ix])
    products.append(f * r * r)
    print(f"{r:8.2f} {f:10.5f} {f * r * r:10.5f}")

products = np.array(products)
spread = products.max() / products.min() - 1.0
print(f"\nF * r^2 spread over the window: {100 * spread:.1f}% "
      "(statistical noise plus voxel averaging)")
