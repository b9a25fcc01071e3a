"""Standalone parser for radiation field files.

This module re-implements the read side of the file format from its
byte-level description and deliberately does not import the simulation
package: array pipelines should be able to consume field files with
nothing but numpy installed. Error messages mirror the writer's reader
verbatim so logs stay greppable across both.

Layout recap (little-endian throughout, strings are u16 length + UTF-8):

    magic "RF3DFLD\\0", version u16
    grid: 3*f64 extent, 3*f64 voxel, 3*u32 counts, 3*f64 origin
    binning: u32 bin count, f64 bin width
    fixed metadata fields, then u32-counted dynamic key/value entries
    table of contents: u32-counted channels, each with u32-counted
        layer entries carrying unit, stat error, kind tag, arity,
        absolute data offset, byte length, crc32
    data blocks at their declared offsets
"""
from __future__ import annotations

import struct
import zlib
from typing import Any, BinaryIO, Dict, List, Tuple

import numpy as np

MAGIC = b"RF3DFLD\x00"
VERSION = 1

_KINDS = ("scalar-f32", "scalar-f64", "vector-f32", "histogram-f32")
_DTYPES = {
    "scalar-f32": np.dtype("<f4"),
    "scalar-f64": np.dtype("<f8"),
    "vector-f32": np.dtype("<f4"),
    "histogram-f32": np.dtype("<f4"),
}

_MIN_DYN_ENTRY = 2 + 1 + 2
_MIN_LAYER_ENTRY = 2 + 2 + 8 + 1 + 4 + 8 + 8 + 4
_MIN_CHANNEL_ENTRY = 2 + 4


class BindingError(Exception):
    """Base for every failure this package raises on purpose."""


class FormatError(BindingError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class UnknownNameError(BindingError):
    pass


class _Cursor:
    def __init__(self, source: BinaryIO):
        self.source = source
        source.seek(0, 2)
        self.size = source.tell()
        source.seek(0)

    def remaining(self) -> int:
        return self.size - self.source.tell()

    def read_exact(self, n: int, what: str) -> bytes:
        if n > self.remaining():
            raise TruncatedError(
                f"truncated stream: need {n} bytes for {what}, {self.remaining()} left")
        raw = self.source.read(n)
        if len(raw) != n:
            raise TruncatedError(f"truncated stream while reading {what}")
        return raw

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read_exact(struct.calcsize(fmt), what))

    def read_str(self, what: str) -> str:
        (n,) = self.unpack("<H", f"{what} length")
        raw = self.read_exact(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"invalid UTF-8 in {what}: {e}") from None


class _Entry:
    __slots__ = ("channel", "name", "unit", "statistical_error", "element_kind",
                 "arity", "offset", "length", "crc32")

    def __init__(self, channel, name, unit, statistical_error, element_kind,
                 arity, offset, length, crc32):
        self.channel = channel
        self.name = name
        self.unit = unit
        self.statistical_error = statistical_error
        self.element_kind = element_kind
        self.arity = arity
        self.offset = offset
        self.length = length
        self.crc32 = crc32


def _parse_header(c: _Cursor) -> Tuple[Tuple[int, int, int], Dict[str, Any],
                                       List[str], List[_Entry]]:
    magic = c.read_exact(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = c.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}, expected {VERSION}")

    ex, ey, ez, vx, vy, vz = c.unpack("<6d", "grid extents")
    extent, voxel = (ex, ey, ez), (vx, vy, vz)
    counts = c.unpack("<3I", "grid counts")
    origin = c.unpack("<3d", "grid origin")
    if min(counts) < 1:
        raise FormatError(f"grid counts must be positive, got {counts}")

    bin_count, bin_width = c.unpack("<Id", "binning")
    if bin_count < 1:
        raise FormatError(f"bin count must be positive, got {bin_count}")

    meta: Dict[str, Any] = {
        "software_name": c.read_str("software_name"),
        "software_version": c.read_str("software_version"),
        "physics_model_id": c.read_str("physics_model_id"),
        "scene_digest": c.read_str("scene_digest"),
        "tube_position_m": c.unpack("<3d", "tube_position_m"),
        "tube_direction": c.unpack("<3d", "tube_direction"),
    }
    (shape_tag,) = c.unpack("<B", "field_shape tag")
    if shape_tag == 0:
        (angle,) = c.unpack("<d", "cone opening angle")
        meta["field_shape"] = {"type": "cone", "opening_angle_deg": angle}
    elif shape_tag == 1:
        w, h, d = c.unpack("<3d", "pyramid payload")
        meta["field_shape"] = {"type": "pyramid", "rect_w_m": w, "rect_h_m": h,
                               "at_distance_m": d}
    else:
        raise FormatError(f"unknown field_shape tag {shape_tag}")
    meta["spectrum_id"] = c.read_str("spectrum_id")
    meta["primary_count"], meta["rng_seed"] = c.unpack("<QQ", "primary_count/rng_seed")
    (meta["epsilon_rel_achieved"],) = c.unpack("<d", "epsilon_rel_achieved")
    meta["timestamp_utc"] = c.read_str("timestamp_utc")
    meta["grid"] = {"extent_m": extent, "voxel_m": voxel, "counts": counts,
                    "origin_m": origin}
    meta["binning"] = {"bin_count": bin_count, "bin_width_keV": bin_width}

    (dyn_count,) = c.unpack("<I", "dynamic metadata count")
    if dyn_count * _MIN_DYN_ENTRY > c.remaining():
        raise FormatError(
            f"dynamic metadata count {dyn_count} exceeds remaining stream size")
    dynamic: Dict[str, Any] = {}
    for _ in range(dyn_count):
        key = c.read_str("dynamic metadata key")
        if key in dynamic:
            raise FormatError(f"duplicate dynamic metadata key '{key}'")
        (tag,) = c.unpack("<b", f"dynamic tag for '{key}'")
        if tag == 0:
            (value,) = c.unpack("<q", f"dynamic i64 '{key}'")
        elif tag == 1:
            (value,) = c.unpack("<d", f"dynamic f64 '{key}'")
        elif tag == 2:
            value = c.read_str(f"dynamic str '{key}'")
        elif tag == 3:
            value = c.unpack("<3d", f"dynamic vec3 '{key}'")
        else:
            raise FormatError(f"unknown dynamic metadata tag {tag} for key '{key}'")
        dynamic[key] = value
    meta["dynamic"] = dynamic

    (channel_count,) = c.unpack("<I", "channel count")
    if channel_count * _MIN_CHANNEL_ENTRY > c.remaining():
        raise FormatError(f"channel count {channel_count} exceeds remaining stream size")
    channel_names: List[str] = []
    entries: List[_Entry] = []
    for _ in range(channel_count):
        cname = c.read_str("channel name")
        if cname in channel_names:
            raise FormatError(f"duplicate channel name '{cname}'")
        channel_names.append(cname)
        (layer_count,) = c.unpack("<I", f"layer count of channel '{cname}'")
        if layer_count * _MIN_LAYER_ENTRY > c.remaining():
            raise FormatError(
                f"layer count {layer_count} of channel '{cname}' exceeds remaining stream size")
        seen = set()
        for _ in range(layer_count):
            lname = c.read_str(f"layer name in channel '{cname}'")
            if lname in seen:
                raise FormatError(f"duplicate layer name '{lname}' in channel '{cname}'")
            seen.add(lname)
            unit = c.read_str(f"unit of layer '{cname}/{lname}'")
            (stat_err,) = c.unpack("<d", f"statistical_error of '{cname}/{lname}'")
            kind_tag, arity = c.unpack("<BI", f"element kind of '{cname}/{lname}'")
            if not 0 <= kind_tag < len(_KINDS):
                raise FormatError(f"unknown element kind tag {kind_tag} for '{cname}/{lname}'")
            offset, length, crc = c.unpack("<QQI", f"TOC entry of '{cname}/{lname}'")
            entries.append(_Entry(cname, lname, unit, stat_err, _KINDS[kind_tag],
                                  arity, offset, length, crc))
    return counts, meta, channel_names, entries


class FieldHandle:
    """Read-only view of one field file.

    The header and table of contents are parsed when the handle is
    created; layer blocks are read, checksum-verified, and copied out on
    each layer() call. Not thread-safe: open one handle per thread.
    """

    def __init__(self, source: BinaryIO):
        self._cursor = _Cursor(source)
        (self.counts, self._metadata, self._channel_names,
         self._entries) = _parse_header(self._cursor)
        self.bin_count = self._metadata["binning"]["bin_count"]

    def channels(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {name: [] for name in self._channel_names}
        for e in self._entries:
            out[e.channel].append(e.name)
        return out

    def metadata(self) -> Dict[str, Any]:
        """Header fields as one plain mapping; a fresh copy per call."""
        out = dict(self._metadata)
        out["dynamic"] = dict(self._metadata["dynamic"])
        return out

    def layer_info(self, channel: str, name: str) -> Dict[str, Any]:
        e = self._find(channel, name)
        return {"unit": e.unit, "statistical_error": e.statistical_error,
                "element_kind": e.element_kind, "arity": e.arity,
                "byte_length": e.length}

    def layer(self, channel: str, name: str) -> np.ndarray:
        """Layer data shaped (nx, ny, nz) or (nx, ny, nz, arity), x fastest
        in the underlying bytes. Always a fresh copy."""
        e = self._find(channel, name)
        full = f"{e.channel}/{e.name}"

        if not (0.0 <= e.statistical_error <= 1.0):
            raise FormatError(
                f"layer '{full}': statistical_error {e.statistical_error!r} outside [0,1]")
        if e.element_kind in ("scalar-f32", "scalar-f64"):
            if e.arity != 1:
                raise FormatError(f"layer '{full}': scalar arity {e.arity} != 1")
        elif e.element_kind == "histogram-f32":
            if e.arity != self.bin_count:
                raise FormatError(
                    f"layer '{full}': histogram arity {e.arity} != bin_count {self.bin_count}")
        elif e.arity < 1:
            raise FormatError(f"layer '{full}': vector arity must be >= 1")

        dtype = _DTYPES[e.element_kind]
        nx, ny, nz = self.counts
        expected = nx * ny * nz * e.arity * dtype.itemsize
        if e.length != expected:
            raise FormatError(
                f"layer '{full}': declared length {e.length} inconsistent with grid "
                f"(counts*arity*itemsize = {expected})")
        if e.offset + e.length > self._cursor.size:
            raise TruncatedError(
                f"truncated stream: layer '{full}' declares bytes "
                f"[{e.offset}, {e.offset + e.length}) but stream has {self._cursor.size}")

        self._cursor.source.seek(e.offset)
        raw = self._cursor.read_exact(e.length, f"data of layer '{full}'")
        crc = zlib.crc32(raw) & 0xFFFFFFFF
        if crc != e.crc32:
            raise ChecksumError(
                f"checksum mismatch in layer '{full}': stored {e.crc32:#010x}, "
                f"computed {crc:#010x}")

        flat = np.frombuffer(raw, dtype=dtype)
        cube = flat.reshape(nz, ny, nx, e.arity).transpose(2, 1, 0, 3)
        if e.arity == 1:
            cube = cube[..., 0]
        return np.ascontiguousarray(cube)

    def close(self) -> None:
        self._cursor.source.close()

    def __enter__(self) -> "FieldHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _find(self, channel: str, name: str) -> _Entry:
        for e in self._entries:
            if e.channel == channel and e.name == name:
                return e
        available = ", ".join(f"{e.channel}/{e.name}" for e in self._entries) or "<none>"
        raise UnknownNameError(f"no layer '{channel}/{name}' in file; available: {available}")


def open_field(path) -> FieldHandle:
    return FieldHandle(open(path, "rb"))
