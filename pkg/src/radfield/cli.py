"""Command line interface.

Subcommands: simulate (run a config), inspect (summarize a field file),
scan (extract a polar kerma curve), compare (calibrate against a measured
curve and report errors).

Exit codes: 0 success/converged; 2 configuration, argument, or file-format
problems; 3 photon budget exhausted before convergence (the field file is
still written, flagged via the `converged` metadata entry); 4 I/O failures.
Every failure prints a single `error[tag]: message` line to stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__, codec, dosimetry, engine
from .errors import (ConfigError, DosimetryError, FormatError, InvalidFieldError,
                     MaterialError, OutOfBoundsError, SceneError, SpectrumError,
                     UnknownNameError)
from .geometry import load_scene
from .model import ConeShape, EnergyBinning, FieldMetadata, GridSpec, PyramidShape
from .spectrum import load_spectrum_csv
from .transport import SourceConfig

PHYSICS_MODEL_ID = "photon-pe-kn-v1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_IO = 4


def _fail(tag: str, message: str, code: int) -> int:
    first_line = str(message).splitlines()[0] if str(message) else "unknown error"
    print(f"error[{tag}]: {first_line}", file=sys.stderr)
    return code


def _vec3(raw, what: str):
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise ConfigError(f"{what} must be a 3-element array")
    try:
        return tuple(float(x) for x in raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must contain numbers") from None


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where} is missing required key '{key}'")
    return doc[key]


def _parse_field_shape(raw) -> object:
    if not isinstance(raw, dict) or "type" not in raw:
        raise ConfigError("source.shape must be an object with a 'type' key")
    kind = raw["type"]
    try:
        if kind == "cone":
            return ConeShape(float(_require(raw, "opening_angle_deg", "source.shape")))
        if kind == "pyramid":
            return PyramidShape(float(_require(raw, "rect_w_m", "source.shape")),
                                float(_require(raw, "rect_h_m", "source.shape")),
                                float(_require(raw, "at_distance_m", "source.shape")))
    except (TypeError, ValueError):
        raise ConfigError(f"source.shape '{kind}' has a non-numeric field") from None
    except InvalidFieldError as e:
        raise ConfigError(str(e)) from None
    raise ConfigError(f"unknown source.shape type '{kind}' (expected cone or pyramid)")


def _scene_digest(path: str) -> str:
    with open(path, "rb") as fh:
        doc = json.load(fh)
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _worker_count(config_value: int) -> int:
    env = os.environ.get("RADFIELD_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"RADFIELD_THREADS must be an integer, got '{env}'") from None
        if value < 1:
            raise ConfigError(f"RADFIELD_THREADS must be positive, got {value}")
        return value
    return config_value


def cmd_simulate(args) -> int:
    try:
        with open(args.config, "r") as fh:
            doc = json.load(fh)
    except OSError as e:
        return _fail("io", f"cannot read config '{args.config}': {e}", EXIT_IO)
    except json.JSONDecodeError as e:
        return _fail("config", f"config '{args.config}' is not valid JSON: {e}", EXIT_CONFIG)

    try:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        scene_path = str(_require(doc, "scene_path", "config"))
        spectrum_path = str(_require(doc, "spectrum_path", "config"))
        output_path = str(_require(doc, "output_path", "config"))
        grid_doc = _require(doc, "grid", "config")
        grid = GridSpec.from_extent(
            _vec3(_require(grid_doc, "extent_m", "config.grid"), "grid.extent_m"),
            _vec3(_require(grid_doc, "voxel_m", "config.grid"), "grid.voxel_m"),
            _vec3(_require(grid_doc, "origin_m", "config.grid"), "grid.origin_m"))
        binning_doc = _require(doc, "binning", "config")
        binning = EnergyBinning(
            int(_require(binning_doc, "bin_count", "config.binning")),
            float(_require(binning_doc, "bin_width_keV", "config.binning")))
        source_doc = _require(doc, "source", "config")
        shape = _parse_field_shape(_require(source_doc, "shape", "config.source"))
        position = _vec3(_require(source_doc, "position_m", "config.source"),
                         "source.position_m")
        direction = _vec3(_require(source_doc, "direction", "config.source"),
                          "source.direction")
        epsilon_threshold = float(_require(doc, "epsilon_threshold", "config"))
        if not (0.0 < epsilon_threshold < 1.0):
            raise ConfigError(f"epsilon_threshold must be in (0,1), got {epsilon_threshold}")
        max_photons = int(_require(doc, "max_photons", "config"))
        seed = int(_require(doc, "seed", "config"))
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        workers = int(doc.get("workers", 1))
        if workers < 1:
            raise ConfigError(f"workers must be positive, got {workers}")
        workers = _worker_count(workers)

        dynamic = doc.get("metadata", {})
        if not isinstance(dynamic, dict):
            raise ConfigError("config 'metadata' must be an object")
        timestamp = doc.get("timestamp_utc")
        if timestamp is None:
            timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")

        scene = load_scene(scene_path)
        spectrum = load_spectrum_csv(spectrum_path)
        source = SourceConfig(position_m=np.asarray(position),
                              direction=np.asarray(direction),
                              shape=shape, spectrum=spectrum)
        spectrum_id = doc.get("spectrum_id",
                              os.path.splitext(os.path.basename(spectrum_path))[0])
        metadata = FieldMetadata(
            software_name="radfield", software_version=__version__,
            physics_model_id=PHYSICS_MODEL_ID,
            scene_digest=_scene_digest(scene_path),
            tube_position_m=position, tube_direction=tuple(source.direction),
            field_shape=shape, spectrum_id=str(spectrum_id),
            primary_count=0, rng_seed=seed, epsilon_rel_achieved=1.0,
            timestamp_utc=str(timestamp), dynamic=dict(dynamic))
    except (ConfigError, SceneError, SpectrumError, MaterialError,
            InvalidFieldError, ValueError, TypeError) as e:
        return _fail("config", str(e), EXIT_CONFIG)

    try:
        result = engine.simulate(scene=scene, source=source, grid=grid,
                                 binning=binning,
                                 epsilon_threshold=epsilon_threshold,
                                 max_photons=max_photons, seed=seed,
                                 workers=workers, metadata=metadata)
    except ConfigError as e:
        return _fail("config", str(e), EXIT_CONFIG)

    try:
        with open(output_path, "wb") as fh:
            written = codec.write_field(result.field, fh)
    except OSError as e:
        return _fail("io", f"cannot write output '{output_path}': {e}", EXIT_IO)

    print(f"primaries traced: {result.primaries_traced}")
    print(f"field epsilon achieved: {result.field_epsilon:.6g} "
          f"(threshold {epsilon_threshold:g})")
    print(f"evaluations: {result.evaluations}, capped tracks: {result.capped_tracks}")
    print(f"wall time: {result.wall_seconds:.2f} s")
    print(f"wrote {written} bytes to {output_path}")
    if not result.converged:
        print("photon budget exhausted before convergence", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        reader = codec.open_field(args.field)
    except OSError as e:
        return _fail("io", f"cannot open '{args.field}': {e}", EXIT_IO)
    except FormatError as e:
        return _fail("format", str(e), EXIT_CONFIG)

    g = reader.grid
    m = reader.metadata
    print(f"file: {args.field}")
    print(f"grid: counts {g.counts}, voxel_m {g.voxel_m}, extent_m {g.extent_m}, "
          f"origin_m {g.origin_m}")
    print(f"binning: {reader.binning.bin_count} bins x "
          f"{reader.binning.bin_width_keV:g} keV "
          f"(top {reader.binning.max_energy_keV:g} keV)")
    print(f"software: {m.software_name} {m.software_version} "
          f"(physics {m.physics_model_id})")
    print(f"scene digest: {m.scene_digest}")
    print(f"tube position_m: {m.tube_position_m}, direction: {m.tube_direction}")
    if isinstance(m.field_shape, ConeShape):
        print(f"field shape: cone, opening angle {m.field_shape.opening_angle_deg:g} deg")
    else:
        print(f"field shape: pyramid, {m.field_shape.rect_w_m:g} m x "
              f"{m.field_shape.rect_h_m:g} m at {m.field_shape.at_distance_m:g} m")
    print(f"spectrum: {m.spectrum_id}")
    print(f"primaries: {m.primary_count}, seed: {m.rng_seed}, "
          f"epsilon achieved: {m.epsilon_rel_achieved:.6g}")
    print(f"timestamp: {m.timestamp_utc}")
    if m.dynamic:
        print("dynamic metadata:")
        for key, value in m.dynamic.items():
            print(f"  {key} = {value!r}")
    print("layers:")
    for channel, layer, unit, err, kind, arity, nbytes in reader.layer_table():
        print(f"  {channel}/{layer}: unit '{unit}', kind {kind}, arity {arity}, "
              f"stat_error {err:.6g}, {nbytes} bytes")
    return EXIT_OK


def _load_field(path):
    with open(path, "rb") as fh:
        return codec.read_field(fh)


def _parse_channels(raw: str):
    channels = [c.strip() for c in raw.split(",") if c.strip()]
    if not channels:
        raise ConfigError("at least one channel name is required")
    return channels


def _scan_curve(field, channels, center, radius, step, plane, method):
    tensor = dosimetry.kerma_tensor(field, channels, dosimetry.air_transmission_table())
    return dosimetry.polar_scan(tensor, center, radius, plane, step, method=method)


def cmd_scan(args) -> int:
    try:
        channels = _parse_channels(args.channels)
        center = _vec3([float(x) for x in args.center.split(",")], "--center")
    except (ConfigError, ValueError) as e:
        return _fail("args", str(e), EXIT_CONFIG)
    try:
        field = _load_field(args.field)
    except OSError as e:
        return _fail("io", f"cannot open '{args.field}': {e}", EXIT_IO)
    except FormatError as e:
        return _fail("format", str(e), EXIT_CONFIG)
    try:
        curve = _scan_curve(field, channels, center, args.radius, args.step,
                            args.plane, args.method)
    except (UnknownNameError, OutOfBoundsError, DosimetryError) as e:
        return _fail("data", str(e), EXIT_CONFIG)
    try:
        dosimetry.write_curve_csv(args.out, curve)
    except OSError as e:
        return _fail("io", f"cannot write '{args.out}': {e}", EXIT_IO)
    print(f"wrote {curve.angles_deg.size} angles to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        channels = _parse_channels(args.channels)
        center = _vec3([float(x) for x in args.center.split(",")], "--center")
        excluded = ([float(x) for x in args.exclude.split(",") if x.strip()]
                    if args.exclude else [])
    except (ConfigError, ValueError) as e:
        return _fail("args", str(e), EXIT_CONFIG)
    try:
        measured = dosimetry.load_curve_csv(args.measured)
    except DosimetryError as e:
        return _fail("data", str(e), EXIT_CONFIG)
    try:
        field = _load_field(args.field)
    except OSError as e:
        return _fail("io", f"cannot open '{args.field}': {e}", EXIT_IO)
    except FormatError as e:
        return _fail("format", str(e), EXIT_CONFIG)

    try:
        simulated = _scan_curve(field, channels, center, args.radius, args.step,
                                args.plane, args.method)
        s_c = dosimetry.conversion_factor(measured, simulated)
        scaled = dosimetry.PolarScanCurve(
            center_m=simulated.center_m, radius_m=simulated.radius_m,
            plane=simulated.plane, angles_deg=simulated.angles_deg,
            values=simulated.values * s_c)
        stats_all = dosimetry.error_stats(measured, scaled, [])
        stats_excl = (dosimetry.error_stats(measured, scaled, excluded)
                      if excluded else None)
    except (UnknownNameError, OutOfBoundsError, DosimetryError) as e:
        return _fail("data", str(e), EXIT_CONFIG)

    common, ia, ib = dosimetry._common_angles(measured, scaled)
    m_vals = measured.values[ia]
    s_vals = scaled.values[ib]
    e_rel = np.abs(m_vals - s_vals) / m_vals
    try:
        dosimetry.write_comparison_csv(args.out, common, m_vals, s_vals, e_rel)
    except OSError as e:
        return _fail("io", f"cannot write '{args.out}': {e}", EXIT_IO)

    print(f"conversion factor S_c: {s_c:.9g}")
    print(f"matched angles: {common.size}")
    print(f"all angles:      median {stats_all.median_rel:.4%}, "
          f"mean {stats_all.mean_rel:.4%}, std {stats_all.std_rel:.4%}")
    if stats_excl is not None:
        print(f"with exclusions: median {stats_excl.median_rel:.4%}, "
              f"mean {stats_excl.mean_rel:.4%}, std {stats_excl.std_rel:.4%} "
              f"(excluded: {', '.join(f'{a:g}' for a in excluded)})")
    print(f"wrote per-angle table to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radfield",
        description="Monte-Carlo photon field simulation and field-file tools.",
        epilog="exit codes: 0 ok/converged, 2 config or format error, "
               "3 photon budget exhausted, 4 I/O error")
    parser.add_argument("--version", action="version", version=f"radfield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a simulation from a JSON config")
    p_sim.add_argument("--config", required=True, help="path to run config JSON")
    p_sim.set_defaults(fn=cmd_simulate)

    p_ins = sub.add_parser("inspect", help="print a field file summary")
    p_ins.add_argument("field", help="field file path")
    p_ins.set_defaults(fn=cmd_inspect)

    def add_scan_args(p):
        p.add_argument("--channels", required=True,
                       help="comma-separated channel names, e.g. scatter,beam")
        p.add_argument("--center", required=True, help="circle center as x,y,z in m")
        p.add_argument("--radius", required=True, type=float, help="circle radius in m")
        p.add_argument("--step", required=True, type=float, help="angle step in deg")
        p.add_argument("--plane", default="xy", choices=["xy", "xz", "yz"],
                       help="scan plane (default xy)")
        p.add_argument("--method", default="trilinear",
                       choices=["trilinear", "nearest"],
                       help="circle sampling method (default trilinear)")

    p_scan = sub.add_parser("scan", help="extract a polar kerma curve to CSV")
    p_scan.add_argument("field", help="field file path")
    add_scan_args(p_scan)
    p_scan.add_argument("--out", required=True, help="output CSV path")
    p_scan.set_defaults(fn=cmd_scan)

    p_cmp = sub.add_parser("compare",
                           help="calibrate a simulated curve against measurements")
    p_cmp.add_argument("--measured", required=True, help="measured curve CSV")
    p_cmp.add_argument("--field", required=True, help="simulated field file")
    add_scan_args(p_cmp)
    p_cmp.add_argument("--exclude", default="",
                       help="comma-separated angles to exclude from the edge-free stats")
    p_cmp.add_argument("--out", required=True, help="output per-angle CSV path")
    p_cmp.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
