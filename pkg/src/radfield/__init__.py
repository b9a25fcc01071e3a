"""radfield: Monte-Carlo X-ray field simulation on voxel grids.

Simulates photon transport (photoelectric absorption + incoherent
scattering) from cone or pyramid sources through analytic scenes, scores
per-voxel energy spectra, hit fractions, and mean directions in three
track-component channels, tracks statistical convergence online, and
stores results in a compact chunked binary format with lazy layer access.
Post-processing converts fields to relative air kerma and calibrates
polar scan curves against measured data.
"""

__version__ = "0.1.0"

from .codec import FieldReader, open_field, read_field, read_layer, write_field
from .dosimetry import (ErrorStats, KermaTensor, PolarScanCurve, TransmissionTable,
                        air_transmission_table, conversion_factor, error_stats,
                        kerma_tensor, load_curve_csv, polar_scan)
from .engine import SimulationResult, simulate
from .errors import (BadMagicError, ChecksumError, ConfigError, DosimetryError,
                     FormatError, InvalidFieldError, LayoutError, MaterialError,
                     OutOfBoundsError, RadfieldError, SceneError, ScoringError,
                     SpectrumError, TruncatedError, UnknownNameError,
                     UnsupportedVersionError)
from .geometry import Scene, load_scene
from .materials import Material, get_material, material_names
from .model import (Channel, ConeShape, EnergyBinning, FieldMetadata, GridSpec,
                    Layer, PyramidShape, RadiationField, voxel_at)
from .spectrum import Spectrum, load_spectrum_csv, sample_energy
from .transport import (Component, PhotonState, SourceConfig, Termination,
                        classify_segment, compton_scatter, emit_primary,
                        sample_free_path, trace_photon)

__all__ = [
    "FieldReader", "open_field", "read_field", "read_layer", "write_field",
    "ErrorStats", "KermaTensor", "PolarScanCurve", "TransmissionTable",
    "air_transmission_table", "conversion_factor", "error_stats", "kerma_tensor",
    "load_curve_csv", "polar_scan",
    "SimulationResult", "simulate",
    "BadMagicError", "ChecksumError", "ConfigError", "DosimetryError",
    "FormatError", "InvalidFieldError", "LayoutError", "MaterialError",
    "OutOfBoundsError", "RadfieldError", "SceneError", "ScoringError",
    "SpectrumError", "TruncatedError", "UnknownNameError", "UnsupportedVersionError",
    "Scene", "load_scene",
    "Material", "get_material", "material_names",
    "Channel", "ConeShape", "EnergyBinning", "FieldMetadata", "GridSpec",
    "Layer", "PyramidShape", "RadiationField", "voxel_at",
    "Spectrum", "load_spectrum_csv", "sample_energy",
    "Component", "PhotonState", "SourceConfig", "Termination",
    "classify_segment", "compton_scatter", "emit_primary", "sample_free_path",
    "trace_photon",
    "__version__",
]
