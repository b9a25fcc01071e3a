"""Bit-exact binary codec for radiation field files.

File layout (all integers little-endian, all strings u16 length prefix +
UTF-8 bytes, no terminator):

    magic               8 bytes ASCII "RF3DFLD\\0"
    version             u16, currently 1
    grid                3*f64 extent_m, 3*f64 voxel_m, 3*u32 counts, 3*f64 origin_m
    binning             u32 bin_count, f64 bin_width_keV
    fixed metadata      in this exact order:
                          software_name      str
                          software_version   str
                          physics_model_id   str
                          scene_digest       str
                          tube_position_m    3*f64
                          tube_direction     3*f64
                          field_shape        u8 tag: 0 = cone,    payload f64 opening_angle_deg
                                                     1 = pyramid, payload f64 w, f64 h, f64 distance
                          spectrum_id        str
                          primary_count      u64
                          rng_seed           u64
                          epsilon_rel_achieved f64
                          timestamp_utc      str
    dynamic metadata    u32 entry count, then per entry:
                          key str, type tag u8, payload
                          tags: 0 = i64, 1 = f64, 2 = str, 3 = 3*f64
    table of contents   u32 channel count; per channel:
                          name str, u32 layer count; per layer:
                            name str, unit str, f64 statistical_error,
                            u8 element kind tag, u32 arity,
                            u64 absolute byte offset, u64 byte length, u32 crc32
                          kind tags: 0 = scalar-f32, 1 = scalar-f64,
                                     2 = vector-f32, 3 = histogram-f32
    data blocks         raw little-endian arrays at their declared offsets,
                        in TOC order, contiguous

The table of contents carries absolute byte offsets and a CRC32 per data
block, so any single layer can be read by seeking without touching the
other blocks.  Two writes of the same field produce identical bytes.

Readers never trust declared sizes: every count and length is checked
against the remaining stream size before memory is allocated, so arbitrary
malformed input of bounded size fails with a typed FormatError instead of
crashing or over-allocating.
"""
from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO, Dict, List, Tuple, Union

import numpy as np

from .errors import (BadMagicError, ChecksumError, InvalidFieldError, LayoutError,
                     TruncatedError, UnknownNameError, UnsupportedVersionError)
from .model import (ELEMENT_KINDS, KIND_DTYPES, Channel, ConeShape, EnergyBinning,
                    FieldMetadata, GridSpec, Layer, PyramidShape, RadiationField)

MAGIC = b"RF3DFLD\x00"
VERSION = 1

_KIND_TAGS = {kind: tag for tag, kind in enumerate(ELEMENT_KINDS)}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}

_SHAPE_CONE = 0
_SHAPE_PYRAMID = 1

_DYN_I64 = 0
_DYN_F64 = 1
_DYN_STR = 2
_DYN_VEC3 = 3

# smallest possible encodings, used to bound declared counts against the
# remaining stream size before any allocation happens
_MIN_DYN_ENTRY = 2 + 1 + 2   # empty key + tag + shortest payload (empty str)
_MIN_LAYER_ENTRY = 2 + 2 + 8 + 1 + 4 + 8 + 8 + 4
_MIN_CHANNEL_ENTRY = 2 + 4


# ---------------------------------------------------------------------------
# writing

def _pack_str(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvalidFieldError(f"string too long for u16 length prefix ({len(raw)} bytes)")
    out += struct.pack("<H", len(raw))
    out += raw


def _pack_vec3(out: bytearray, v) -> None:
    out += struct.pack("<3d", *[float(x) for x in v])


def _dynamic_payload(out: bytearray, value) -> None:
    if isinstance(value, bool):
        raise InvalidFieldError("dynamic metadata booleans are not supported")
    if isinstance(value, int):
        out += struct.pack("<b", _DYN_I64)
        out += struct.pack("<q", value)
    elif isinstance(value, float):
        out += struct.pack("<b", _DYN_F64)
        out += struct.pack("<d", value)
    elif isinstance(value, str):
        out += struct.pack("<b", _DYN_STR)
        _pack_str(out, value)
    else:
        out += struct.pack("<b", _DYN_VEC3)
        _pack_vec3(out, value)


def _header_bytes(field: RadiationField, offsets: List[int], lengths: List[int],
                  crcs: List[int]) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    g = field.grid
    out += struct.pack("<3d", *g.extent_m)
    out += struct.pack("<3d", *g.voxel_m)
    out += struct.pack("<3I", *g.counts)
    out += struct.pack("<3d", *g.origin_m)
    out += struct.pack("<Id", field.binning.bin_count, field.binning.bin_width_keV)

    m = field.metadata
    _pack_str(out, m.software_name)
    _pack_str(out, m.software_version)
    _pack_str(out, m.physics_model_id)
    _pack_str(out, m.scene_digest)
    _pack_vec3(out, m.tube_position_m)
    _pack_vec3(out, m.tube_direction)
    if isinstance(m.field_shape, ConeShape):
        out += struct.pack("<Bd", _SHAPE_CONE, m.field_shape.opening_angle_deg)
    else:
        out += struct.pack("<B3d", _SHAPE_PYRAMID, m.field_shape.rect_w_m,
                           m.field_shape.rect_h_m, m.field_shape.at_distance_m)
    _pack_str(out, m.spectrum_id)
    out += struct.pack("<QQd", m.primary_count, m.rng_seed, m.epsilon_rel_achieved)
    _pack_str(out, m.timestamp_utc)

    out += struct.pack("<I", len(m.dynamic))
    for key, value in m.dynamic.items():
        _pack_str(out, key)
        _dynamic_payload(out, value)

    out += struct.pack("<I", len(field.channels))
    i = 0
    for channel in field.channels.values():
        _pack_str(out, channel.name)
        out += struct.pack("<I", len(channel.layers))
        for layer in channel.layers.values():
            _pack_str(out, layer.name)
            _pack_str(out, layer.unit)
            out += struct.pack("<d", float(layer.statistical_error))
            out += struct.pack("<BI", _KIND_TAGS[layer.element_kind], layer.arity)
            out += struct.pack("<QQI", offsets[i], lengths[i], crcs[i])
            i += 1
    return bytes(out)


def write_field(field: RadiationField, sink: BinaryIO) -> int:
    """Serialize a field.  Validates every invariant first, so nothing is
    written to the sink on error.  Returns the byte count written."""
    field.validate()

    blocks: List[bytes] = []
    lengths: List[int] = []
    crcs: List[int] = []
    for channel in field.channels.values():
        for layer in channel.layers.values():
            raw = np.ascontiguousarray(layer.data, dtype=KIND_DTYPES[layer.element_kind]).tobytes()
            blocks.append(raw)
            lengths.append(len(raw))
            crcs.append(zlib.crc32(raw) & 0xFFFFFFFF)

    # header size does not depend on the offset values, only on their count
    probe = _header_bytes(field, [0] * len(blocks), lengths, crcs)
    offsets: List[int] = []
    pos = len(probe)
    for n in lengths:
        offsets.append(pos)
        pos += n

    header = _header_bytes(field, offsets, lengths, crcs)
    assert len(header) == len(probe)
    sink.write(header)
    for raw in blocks:
        sink.write(raw)
    return pos


# ---------------------------------------------------------------------------
# reading

@dataclass
class _LayerEntry:
    channel: str
    name: str
    unit: str
    statistical_error: float
    element_kind: str
    arity: int
    offset: int
    length: int
    crc32: int


class _Reader:
    """Sequential cursor with bounds checks over a seekable byte source."""

    def __init__(self, source: BinaryIO):
        self.source = source
        pos = source.tell()
        source.seek(0, io.SEEK_END)
        self.size = source.tell()
        source.seek(pos)

    def tell(self) -> int:
        return self.source.tell()

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
            raise LayoutError(f"invalid UTF-8 in {what}: {e}") from None


def _read_header(r: _Reader) -> Tuple[GridSpec, EnergyBinning, FieldMetadata,
                                      List[str], List[_LayerEntry]]:
    magic = r.read_exact(len(MAGIC), "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}, expected {VERSION}")

    ex, ey, ez, vx, vy, vz = r.unpack("<6d", "grid extents")
    cx, cy, cz = r.unpack("<3I", "grid counts")
    ox, oy, oz = r.unpack("<3d", "grid origin")
    try:
        grid = GridSpec((ex, ey, ez), (vx, vy, vz), (cx, cy, cz), (ox, oy, oz))
    except InvalidFieldError as e:
        raise LayoutError(str(e)) from None

    bin_count, bin_width = r.unpack("<Id", "binning")
    try:
        binning = EnergyBinning(bin_count, bin_width)
    except InvalidFieldError as e:
        raise LayoutError(str(e)) from None

    software_name = r.read_str("software_name")
    software_version = r.read_str("software_version")
    physics_model_id = r.read_str("physics_model_id")
    scene_digest = r.read_str("scene_digest")
    tube_position = r.unpack("<3d", "tube_position_m")
    tube_direction = r.unpack("<3d", "tube_direction")
    (shape_tag,) = r.unpack("<B", "field_shape tag")
    if shape_tag == _SHAPE_CONE:
        (angle,) = r.unpack("<d", "cone opening angle")
        try:
            shape = ConeShape(angle)
        except InvalidFieldError as e:
            raise LayoutError(str(e)) from None
    elif shape_tag == _SHAPE_PYRAMID:
        w, h, d = r.unpack("<3d", "pyramid payload")
        try:
            shape = PyramidShape(w, h, d)
        except InvalidFieldError as e:
            raise LayoutError(str(e)) from None
    else:
        raise LayoutError(f"unknown field_shape tag {shape_tag}")
    spectrum_id = r.read_str("spectrum_id")
    primary_count, rng_seed = r.unpack("<QQ", "primary_count/rng_seed")
    (epsilon,) = r.unpack("<d", "epsilon_rel_achieved")
    timestamp = r.read_str("timestamp_utc")

    (dyn_count,) = r.unpack("<I", "dynamic metadata count")
    if dyn_count * _MIN_DYN_ENTRY > r.remaining():
        raise LayoutError(
            f"dynamic metadata count {dyn_count} exceeds remaining stream size")
    dynamic: Dict[str, Union[int, float, str, tuple]] = {}
    for _ in range(dyn_count):
        key = r.read_str("dynamic metadata key")
        if key in dynamic:
            raise LayoutError(f"duplicate dynamic metadata key '{key}'")
        (tag,) = r.unpack("<b", f"dynamic tag for '{key}'")
        if tag == _DYN_I64:
            (value,) = r.unpack("<q", f"dynamic i64 '{key}'")
        elif tag == _DYN_F64:
            (value,) = r.unpack("<d", f"dynamic f64 '{key}'")
        elif tag == _DYN_STR:
            value = r.read_str(f"dynamic str '{key}'")
        elif tag == _DYN_VEC3:
            value = r.unpack("<3d", f"dynamic vec3 '{key}'")
        else:
            raise LayoutError(f"unknown dynamic metadata tag {tag} for key '{key}'")
        dynamic[key] = value

    try:
        metadata = FieldMetadata(
            software_name=software_name, software_version=software_version,
            physics_model_id=physics_model_id, scene_digest=scene_digest,
            tube_position_m=tube_position, tube_direction=tube_direction,
            field_shape=shape, spectrum_id=spectrum_id, primary_count=primary_count,
            rng_seed=rng_seed, epsilon_rel_achieved=epsilon, timestamp_utc=timestamp,
            dynamic=dynamic)
    except InvalidFieldError as e:
        raise LayoutError(str(e)) from None

    (channel_count,) = r.unpack("<I", "channel count")
    if channel_count * _MIN_CHANNEL_ENTRY > r.remaining():
        raise LayoutError(f"channel count {channel_count} exceeds remaining stream size")
    entries: List[_LayerEntry] = []
    channel_names: List[str] = []
    for _ in range(channel_count):
        cname = r.read_str("channel name")
        if cname in channel_names:
            raise LayoutError(f"duplicate channel name '{cname}'")
        channel_names.append(cname)
        (layer_count,) = r.unpack("<I", f"layer count of channel '{cname}'")
        if layer_count * _MIN_LAYER_ENTRY > r.remaining():
            raise LayoutError(
                f"layer count {layer_count} of channel '{cname}' exceeds remaining stream size")
        seen_layers = set()
        for _ in range(layer_count):
            lname = r.read_str(f"layer name in channel '{cname}'")
            if lname in seen_layers:
                raise LayoutError(f"duplicate layer name '{lname}' in channel '{cname}'")
            seen_layers.add(lname)
            unit = r.read_str(f"unit of layer '{cname}/{lname}'")
            (stat_err,) = r.unpack("<d", f"statistical_error of '{cname}/{lname}'")
            kind_tag, arity = r.unpack("<BI", f"element kind of '{cname}/{lname}'")
            if kind_tag not in _TAG_KINDS:
                raise LayoutError(f"unknown element kind tag {kind_tag} for '{cname}/{lname}'")
            offset, length, crc = r.unpack("<QQI", f"TOC entry of '{cname}/{lname}'")
            entries.append(_LayerEntry(cname, lname, unit, stat_err,
                                       _TAG_KINDS[kind_tag], arity, offset, length, crc))
    return grid, binning, metadata, channel_names, entries


def _check_entry(entry: _LayerEntry, grid: GridSpec, binning: EnergyBinning,
                 stream_size: int) -> np.dtype:
    name = f"{entry.channel}/{entry.name}"
    if not (0.0 <= entry.statistical_error <= 1.0):
        raise LayoutError(f"layer '{name}': statistical_error {entry.statistical_error!r} outside [0,1]")
    if entry.element_kind in ("scalar-f32", "scalar-f64"):
        if entry.arity != 1:
            raise LayoutError(f"layer '{name}': scalar arity {entry.arity} != 1")
    elif entry.element_kind == "histogram-f32":
        if entry.arity != binning.bin_count:
            raise LayoutError(
                f"layer '{name}': histogram arity {entry.arity} != bin_count {binning.bin_count}")
    elif entry.arity < 1:
        raise LayoutError(f"layer '{name}': vector arity must be >= 1")
    dtype = KIND_DTYPES[entry.element_kind]
    expected = grid.nvox * entry.arity * dtype.itemsize
    if entry.length != expected:
        raise LayoutError(
            f"layer '{name}': declared length {entry.length} inconsistent with grid "
            f"(counts*arity*itemsize = {expected})")
    if entry.offset + entry.length > stream_size:
        raise TruncatedError(
            f"truncated stream: layer '{name}' declares bytes "
            f"[{entry.offset}, {entry.offset + entry.length}) but stream has {stream_size}")
    return dtype


def _read_block(r: _Reader, entry: _LayerEntry, grid: GridSpec,
                binning: EnergyBinning) -> Layer:
    name = f"{entry.channel}/{entry.name}"
    dtype = _check_entry(entry, grid, binning, r.size)
    r.source.seek(entry.offset)
    raw = r.read_exact(entry.length, f"data of layer '{name}'")
    crc = zlib.crc32(raw) & 0xFFFFFFFF
    if crc != entry.crc32:
        raise ChecksumError(
            f"checksum mismatch in layer '{name}': stored {entry.crc32:#010x}, computed {crc:#010x}")
    data = np.frombuffer(raw, dtype=dtype).copy()
    return Layer(name=entry.name, unit=entry.unit, statistical_error=entry.statistical_error,
                 element_kind=entry.element_kind, arity=entry.arity, data=data)


def read_field(source: BinaryIO) -> RadiationField:
    """Parse a whole field file, verifying every block's checksum."""
    r = _Reader(source)
    grid, binning, metadata, channel_names, entries = _read_header(r)
    field = RadiationField(grid=grid, binning=binning, metadata=metadata)
    for cname in channel_names:
        field.add_channel(Channel(cname))
    for entry in entries:
        field.channels[entry.channel].add_layer(_read_block(r, entry, grid, binning))
    return field


def read_layer(source: BinaryIO, channel: str, layer: str) -> Layer:
    """Read one layer lazily: header plus that layer's block, nothing else."""
    r = _Reader(source)
    grid, binning, _, _, entries = _read_header(r)
    for entry in entries:
        if entry.channel == channel and entry.name == layer:
            return _read_block(r, entry, grid, binning)
    available = ", ".join(f"{e.channel}/{e.name}" for e in entries) or "<none>"
    raise UnknownNameError(f"no layer '{channel}/{layer}' in file; available: {available}")


class FieldReader:
    """Lazy handle over an open field file.

    Header and table of contents are parsed eagerly; layer data is read,
    checksum-verified, and copied out per request.
    """

    def __init__(self, source: BinaryIO):
        self._source = source
        self._r = _Reader(source)
        (self.grid, self.binning, self.metadata,
         self._channel_names, self._entries) = _read_header(self._r)

    def channels(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {name: [] for name in self._channel_names}
        for e in self._entries:
            out[e.channel].append(e.name)
        return out

    def layer_table(self) -> List[Tuple[str, str, str, float, str, int, int]]:
        """TOC rows: (channel, layer, unit, stat_error, kind, arity, bytes)."""
        return [(e.channel, e.name, e.unit, e.statistical_error,
                 e.element_kind, e.arity, e.length) for e in self._entries]

    def layer(self, channel: str, name: str) -> Layer:
        for entry in self._entries:
            if entry.channel == channel and entry.name == name:
                return _read_block(self._r, entry, self.grid, self.binning)
        available = ", ".join(f"{e.channel}/{e.name}" for e in self._entries) or "<none>"
        raise UnknownNameError(f"no layer '{channel}/{name}' in file; available: {available}")

    def layer_array(self, channel: str, name: str) -> np.ndarray:
        """Layer data shaped (nx, ny, nz) or (nx, ny, nz, arity)."""
        lay = self.layer(channel, name)
        nx, ny, nz = self.grid.counts
        cube = lay.data.reshape(nz, ny, nx, lay.arity).transpose(2, 1, 0, 3)
        if lay.arity == 1:
            cube = cube[..., 0]
        return np.ascontiguousarray(cube)


def open_field(path) -> FieldReader:
    """Open a field file from a path; metadata eager, layer data lazy."""
    return FieldReader(open(path, "rb"))
