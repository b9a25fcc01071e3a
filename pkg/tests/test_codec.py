"""Binary codec: round-trip, determinism, lazy reads, malformed input."""
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_field, make_grid, make_metadata, scalar_layer
from radfield import codec
from radfield.errors import (BadMagicError, ChecksumError, FormatError,
                             InvalidFieldError, TruncatedError,
                             UnknownNameError, UnsupportedVersionError)
from radfield.model import (ELEMENT_KINDS, Channel, ConeShape, EnergyBinning,
                            FieldMetadata, GridSpec, Layer, PyramidShape,
                            RadiationField)

# ---------------------------------------------------------------- strategies

_text = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FFF,
                           exclude_categories=("Cs",)),
    min_size=1, max_size=16)

_f64 = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def grid_specs(draw, max_count=4):
    counts = draw(st.tuples(*[st.integers(1, max_count)] * 3))
    voxel = draw(st.tuples(*[st.floats(1e-3, 1.0)] * 3))
    extent = tuple(c * v for c, v in zip(counts, voxel))
    origin = draw(st.tuples(*[st.floats(-10, 10)] * 3))
    return GridSpec(extent, voxel, counts, origin)


@st.composite
def field_shapes(draw):
    if draw(st.booleans()):
        return ConeShape(draw(st.floats(1e-3, 179.9)))
    return PyramidShape(draw(st.floats(1e-3, 10)), draw(st.floats(1e-3, 10)),
                        draw(st.floats(1e-3, 10)))


_dyn_value = st.one_of(
    st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1),
    _f64,
    _text,
    st.tuples(_f64, _f64, _f64))


@st.composite
def metadatas(draw):
    axis = draw(st.sampled_from([(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0)]))
    return FieldMetadata(
        software_name=draw(_text), software_version=draw(_text),
        physics_model_id=draw(_text), scene_digest=draw(_text),
        tube_position_m=draw(st.tuples(_f64, _f64, _f64)),
        tube_direction=axis,
        field_shape=draw(field_shapes()),
        spectrum_id=draw(_text),
        primary_count=draw(st.integers(0, 2 ** 62)),
        rng_seed=draw(st.integers(0, 2 ** 62)),
        epsilon_rel_achieved=draw(st.floats(0, 1)),
        timestamp_utc=draw(_text),
        dynamic=draw(st.dictionaries(_text, _dyn_value, max_size=4)))


@st.composite
def layers(draw, name, nvox, binning):
    kind = draw(st.sampled_from(ELEMENT_KINDS))
    if kind == "histogram-f32":
        arity = binning.bin_count
        raw = draw(st.integers(0, 2 ** 31)).to_bytes(4, "little")
        rng = np.random.default_rng(int.from_bytes(raw, "little"))
        data = rng.random((nvox, arity))
        data /= data.sum(axis=1, keepdims=True)
        zero = rng.random(nvox) < 0.3
        data[zero] = 0.0
    else:
        arity = 1 if kind.startswith("scalar") else draw(st.integers(1, 4))
        vals = st.floats(allow_nan=True, allow_infinity=True, width=32)
        data = np.array(draw(st.lists(vals, min_size=nvox * arity,
                                      max_size=nvox * arity)), dtype=np.float64)
    return Layer(name=name, unit=draw(_text),
                 statistical_error=draw(st.floats(0, 1)),
                 element_kind=kind, arity=arity, data=data)


@st.composite
def radiation_fields(draw, max_count=4):
    grid = draw(grid_specs(max_count=max_count))
    binning = EnergyBinning(draw(st.integers(1, 8)), draw(st.floats(0.5, 10)))
    field = RadiationField(grid=grid, binning=binning, metadata=draw(metadatas()))
    for cname in draw(st.lists(_text, unique=True, max_size=3)):
        ch = Channel(cname)
        for lname in draw(st.lists(_text, unique=True, max_size=3)):
            ch.add_layer(draw(layers(lname, grid.nvox, binning)))
        field.add_channel(ch)
    return field


# ----------------------------------------------------------------- fixtures

def write_bytes(field) -> bytes:
    sink = io.BytesIO()
    codec.write_field(field, sink)
    return sink.getvalue()


# -------------------------------------------------------------------- tests

class TestRoundTrip:
    @given(radiation_fields())
    @settings(max_examples=100, deadline=None)
    def test_read_write_identity(self, field):
        data = write_bytes(field)
        back = codec.read_field(io.BytesIO(data))
        assert back == field

    @given(radiation_fields())
    @settings(max_examples=50, deadline=None)
    def test_write_is_deterministic(self, field):
        assert write_bytes(field) == write_bytes(field)

    def test_scalar_2x2x2_block_size(self):
        grid = make_grid((2, 2, 2))
        field = RadiationField(grid, EnergyBinning(4, 1.0), make_metadata())
        field.add_channel(Channel("c").add_layer(scalar_layer("v", grid)))
        data = write_bytes(field)
        reader = codec.FieldReader(io.BytesIO(data))
        (_, _, _, _, _, _, nbytes), = reader.layer_table()
        assert nbytes == 8 * 4  # eight voxels of f32
        assert codec.read_field(io.BytesIO(data)) == field

    def test_50_cube_histogram_block_size(self):
        grid = GridSpec.from_extent((1.0,) * 3, (0.02,) * 3)
        binning = EnergyBinning(32, 4.68)
        probs = np.zeros((grid.nvox, 32), dtype=np.float32)
        probs[:, 0] = 1.0
        field = RadiationField(grid, binning, make_metadata())
        field.add_channel(Channel("beam").add_layer(
            Layer("spectrum", "probability", 0.0, "histogram-f32", 32, probs)))
        data = write_bytes(field)
        reader = codec.FieldReader(io.BytesIO(data))
        (_, _, _, _, _, _, nbytes), = reader.layer_table()
        assert nbytes == 50 * 50 * 50 * 32 * 4 == 16_000_000
        assert len(data) > 16_000_000

    def test_invalid_field_writes_nothing(self):
        grid = make_grid((2, 2, 2))
        field = RadiationField(grid, EnergyBinning(4, 1.0), make_metadata())
        field.add_channel(Channel("c").add_layer(
            scalar_layer("short", grid, np.zeros(3))))
        sink = io.BytesIO()
        with pytest.raises(InvalidFieldError, match="short"):
            codec.write_field(field, sink)
        assert sink.getvalue() == b""


class TestLazyRead:
    def test_read_layer_matches_full_read(self):
        field = make_field(counts=(3, 3, 3), bin_count=8)
        data = write_bytes(field)
        full = codec.read_field(io.BytesIO(data))
        lazy = codec.read_layer(io.BytesIO(data), "scatter", "hits")
        assert lazy == full.channels["scatter"].layers["hits"]

    def test_unknown_name_lists_available(self):
        data = write_bytes(make_field())
        with pytest.raises(UnknownNameError) as ei:
            codec.read_layer(io.BytesIO(data), "beam", "nope")
        msg = str(ei.value)
        assert "hits" in msg and "spectrum" in msg

    def test_lazy_read_is_bounded(self):
        # big histogram layer next to a small scalar layer: fetching the small
        # one must not pull the big block through the stream
        grid = make_grid((8, 8, 8))
        binning = EnergyBinning(16, 1.0)
        rng = np.random.default_rng(7)
        probs = rng.random((grid.nvox, 16))
        probs /= probs.sum(axis=1, keepdims=True)
        field = RadiationField(grid, binning, make_metadata())
        field.add_channel(
            Channel("c")
            .add_layer(Layer("big", "p", 0.0, "histogram-f32", 16, probs))
            .add_layer(scalar_layer("small", grid, rng.random(grid.nvox))))
        data = write_bytes(field)

        class CountingSource:
            def __init__(self, buf):
                self._b = io.BytesIO(buf)
                self.bytes_read = 0

            def read(self, n=-1):
                out = self._b.read(n)
                self.bytes_read += len(out)
                return out

            def seek(self, *a):
                return self._b.seek(*a)

            def tell(self):
                return self._b.tell()

        src = CountingSource(data)
        reader = codec.FieldReader(src)
        header_bytes = src.bytes_read
        small = reader.layer("c", "small")
        assert small.data.size == grid.nvox
        small_block = grid.nvox * 4
        assert src.bytes_read - header_bytes <= small_block
        assert src.bytes_read <= header_bytes + small_block < len(data)

    def test_layer_array_shape(self):
        field = make_field(counts=(4, 3, 2), bin_count=4)
        data = write_bytes(field)
        reader = codec.FieldReader(io.BytesIO(data))
        hits = reader.layer_array("beam", "hits")
        spec = reader.layer_array("beam", "spectrum")
        assert hits.shape == (4, 3, 2)
        assert spec.shape == (4, 3, 2, 4)
        # (ix, iy, iz) indexing must agree with the flat x-fastest layout
        flat = field.channels["beam"].layers["hits"].data
        grid = field.grid
        for (ix, iy, iz) in [(0, 0, 0), (3, 2, 1), (1, 2, 0)]:
            assert hits[ix, iy, iz] == flat[grid.flat_index(ix, iy, iz)]


class TestMalformed:
    def _base(self):
        return write_bytes(make_field(counts=(2, 2, 2), bin_count=4))

    def test_bad_magic(self):
        data = bytearray(self._base())
        data[0] ^= 0xFF
        with pytest.raises(BadMagicError):
            codec.read_field(io.BytesIO(bytes(data)))

    def test_unsupported_version(self):
        data = bytearray(self._base())
        data[8] = 2
        with pytest.raises(UnsupportedVersionError):
            codec.read_field(io.BytesIO(bytes(data)))

    def test_truncated_header(self):
        data = self._base()
        with pytest.raises(TruncatedError):
            codec.read_field(io.BytesIO(data[:30]))

    def test_truncated_mid_layer_names_layer(self):
        data = self._base()
        with pytest.raises(TruncatedError) as ei:
            codec.read_field(io.BytesIO(data[:-5]))
        assert "hits" in str(ei.value) or "spectrum" in str(ei.value)

    def test_data_flip_is_checksum_error(self):
        data = bytearray(self._base())
        data[-3] ^= 0x10  # inside the last data block
        with pytest.raises(ChecksumError) as ei:
            codec.read_field(io.BytesIO(bytes(data)))
        assert "checksum" in str(ei.value).lower()

    def test_empty_stream(self):
        with pytest.raises(TruncatedError):
            codec.read_field(io.BytesIO(b""))

    def test_mutation_corpus_small(self):
        # the full-size corpus runs in the acceptance suite; this is the
        # fast regression version
        base = self._base()
        rng = np.random.default_rng(123)
        for _ in range(300):
            data = bytearray(base)
            op = rng.integers(0, 3)
            if op == 0:
                data[rng.integers(0, len(data))] ^= int(rng.integers(1, 256))
            elif op == 1:
                data = data[:rng.integers(0, len(data))]
            else:
                data += bytes(rng.integers(0, 256, size=16, dtype=np.uint8))
            try:
                codec.read_field(io.BytesIO(bytes(data)))
            except FormatError:
                pass  # typed failure is the contract

    def test_read_layer_on_truncated_block(self):
        data = self._base()
        with pytest.raises(TruncatedError):
            codec.read_layer(io.BytesIO(data[:-40]), "scatter", "hits")
