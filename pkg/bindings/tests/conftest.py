import json
import subprocess
import sys

import pytest

SPECTRUM_CSV = "energy_keV,relative_intensity\n30,1\n60,2\n100,0.5\n"

SCENE = {
    "ambient": "air",
    "bodies": [
        {"shape": {"type": "sphere", "radius_m": 0.15},
         "translation_m": [0.5, 0.5, 0.5],
         "material": "water",
         "is_patient": True}
    ],
}


@pytest.fixture(scope="session")
def field_file(tmp_path_factory):
    """Paper-default 50^3 field produced through the simulator's CLI."""
    root = tmp_path_factory.mktemp("fixture")
    (root / "scene.json").write_text(json.dumps(SCENE))
    (root / "spec.csv").write_text(SPECTRUM_CSV)
    out = root / "field.rf3d"
    config = {
        "scene_path": str(root / "scene.json"),
        "spectrum_path": str(root / "spec.csv"),
        "output_path": str(out),
        "grid": {"extent_m": [1.0, 1.0, 1.0], "voxel_m": [0.02, 0.02, 0.02],
                 "origin_m": [0.0, 0.0, 0.0]},
        "binning": {"bin_count": 32, "bin_width_keV": 4.68},
        "source": {"shape": {"type": "cone", "opening_angle_deg": 20.0},
                   "position_m": [0.0, 0.5, 0.5],
                   "direction": [1.0, 0.0, 0.0]},
        "epsilon_threshold": 1e-9,
        "max_photons": 60000,
        "seed": 7,
        "workers": 2,
        "timestamp_utc": "2026-01-01T00:00:00Z",
        "metadata": {"origin": "bindings-fixture"},
    }
    (root / "run.json").write_text(json.dumps(config))
    proc = subprocess.run(
        [sys.executable, "-m", "radfield.cli", "simulate", "--config",
         str(root / "run.json")],
        capture_output=True, text=True)
    # 3 = photon budget exhausted, which still writes the field
    assert proc.returncode in (0, 3), proc.stderr
    assert out.exists()
    return out
