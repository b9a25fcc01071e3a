"""Emission, free paths, Compton sampling, and track tracing."""
import math

import numpy as np
import pytest

from radfield import transport
from radfield.engine import _kn_batch
from radfield.errors import MaterialError
from radfield.geometry import Scene, scene_from_dict
from radfield.materials import get_material
from radfield.model import ConeShape, PyramidShape
from radfield.spectrum import Spectrum
from radfield.transport import (CUTOFF_KEV, Component, PhotonState,
                                SourceConfig, Termination, classify_segment,
                                compton_scatter, cone_direction, deflect,
                                emit_primary, pyramid_direction,
                                sample_free_path, trace_photon)

VACUUM_SCENE = Scene([], get_material("vacuum"))
Z = np.array([0.0, 0.0, 1.0])


def delta_spectrum(kev=100.0):
    return Spectrum(np.array([kev - 0.01, kev]), np.array([1.0, 1.0]))


class TestConeDirection:
    def test_degenerate_cone_hugs_axis(self, rng):
        for _ in range(100):
            d = cone_direction(Z, 1e-4, rng.random(), rng.random())
            assert math.acos(min(1.0, float(d @ Z))) < 1e-5

    def test_ten_degree_cone_stays_inside_half_angle(self, rng):
        half = math.radians(5.0)
        u = rng.random((100_000, 2))
        worst = 0.0
        for u1, u2 in u:
            d = cone_direction(Z, 10.0, u1, u2)
            worst = max(worst, math.acos(min(1.0, float(d @ Z))))
        assert worst <= half + 1e-12

    def test_uniform_over_cap(self, rng):
        # uniform cap sampling: cos(theta) uniform on [cos(half), 1]
        half = math.radians(30.0)
        cos_lo = math.cos(half)
        n = 20_000
        cos_t = np.array([float(cone_direction(Z, 60.0, rng.random(), rng.random()) @ Z)
                          for _ in range(n)])
        expect_mean = 0.5 * (1 + cos_lo)
        sigma = (1 - cos_lo) / math.sqrt(12 * n)
        assert abs(cos_t.mean() - expect_mean) < 5 * sigma
        assert cos_t.min() >= cos_lo - 1e-12

    def test_unit_norm_any_axis(self, rng):
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            d = cone_direction(axis, 45.0, rng.random(), rng.random())
            assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-12)


class TestPyramidDirection:
    def test_hits_target_rectangle(self, rng):
        shape = PyramidShape(rect_w_m=1.0, rect_h_m=0.5, at_distance_m=2.0)
        xs, ys = [], []
        for _ in range(10_000):
            d = pyramid_direction(Z, shape, rng.random(), rng.random())
            t = shape.at_distance_m / d[2]  # stretch to the target plane
            p = t * d
            xs.append(p[0])
            ys.append(p[1])
        xs = np.abs(xs)
        ys = np.abs(ys)
        assert xs.max() <= 0.5 + 1e-9 and ys.max() <= 0.25 + 1e-9
        # corners reachable: the sampled extremes approach the half extents
        assert xs.max() > 0.495 and ys.max() > 0.2475

    def test_corner_directions(self):
        shape = PyramidShape(1.0, 1.0, 1.0)
        d = pyramid_direction(Z, shape, 0.0, 0.0)
        t = 1.0 / d[2]
        np.testing.assert_allclose(t * d, [-0.5, -0.5, 1.0], atol=1e-12)


class TestFreePath:
    def test_u_zero_gives_zero(self):
        assert sample_free_path(get_material("water"), 100.0, 0.0) == 0.0

    def test_matches_exponential_transform(self, rng):
        m = get_material("water")
        mu = m.mu_total_per_m(80.0)
        for u in rng.random(200):
            assert sample_free_path(m, 80.0, float(u)) == pytest.approx(
                -math.log1p(-float(u)) / mu, rel=1e-14)

    def test_mean_free_path(self, rng):
        # the transform above maps U(0,1) to Exp(mu); 1e6 draws pin the mean
        m = get_material("water")
        mu = m.mu_total_per_m(100.0)
        u = rng.random(1_000_000)
        d = -np.log1p(-u) / mu
        assert d.mean() == pytest.approx(1.0 / mu, rel=5e-3)
        assert 1.0 / mu == pytest.approx(0.0586, rel=5e-3)  # ~5.86 cm in water

    def test_out_of_table_energy_rejected(self):
        m = get_material("water")
        with pytest.raises(MaterialError, match="table range"):
            sample_free_path(m, 0.5, 0.5)
        with pytest.raises(MaterialError, match="table range"):
            sample_free_path(m, 200.0, 0.5)


def kn_theta_pdf(theta, energy_kev):
    """Klein-Nishina polar-angle density, unnormalized."""
    alpha = energy_kev / transport.ELECTRON_REST_KEV
    ratio = 1.0 / (1.0 + alpha * (1.0 - np.cos(theta)))  # E'/E
    return ratio ** 2 * (ratio + 1.0 / ratio - np.sin(theta) ** 2) * np.sin(theta)


def kn_bin_masses(energy_kev, edges):
    dense = np.linspace(0.0, math.pi, 40_001)
    pdf = kn_theta_pdf(dense, energy_kev)
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(dense))])
    cdf /= cdf[-1]
    at_edges = np.interp(edges, dense, cdf)
    return np.diff(at_edges)


class TestComptonScatter:
    def test_energy_angle_relation_exact(self, rng):
        for energy in (10.0, 60.0, 100.0, 511.0):
            alpha = energy / transport.ELECTRON_REST_KEV
            for _ in range(2000):
                e_new, theta = compton_scatter(energy, rng)
                expect = energy / (1.0 + alpha * (1.0 - math.cos(theta)))
                assert e_new == pytest.approx(expect, rel=1e-12)
                assert 0.0 <= theta <= math.pi

    def test_energy_bounds(self, rng):
        # forward scatter keeps E, backscatter at 511 keV gives 511/3
        energy = 511.0
        lo = energy / 3.0
        samples = [compton_scatter(energy, rng)[0] for _ in range(5000)]
        assert max(samples) <= energy + 1e-12
        assert min(samples) >= lo - 1e-12

    def test_scalar_histogram_matches_integrated_pdf(self, rng):
        energy = 100.0
        n = 40_000
        thetas = np.array([compton_scatter(energy, rng)[1] for _ in range(n)])
        edges = np.radians(np.arange(0.0, 181.0, 15.0))
        masses = kn_bin_masses(energy, edges)
        counts, _ = np.histogram(thetas, bins=edges)
        sigma = np.sqrt(masses * (1 - masses) / n)
        resid = np.abs(counts / n - masses)
        assert np.all(resid < np.maximum(4 * sigma, 0.02 * masses))

    def test_batch_histogram_matches_integrated_pdf_5deg(self):
        # the vectorized sampler shares the branch arithmetic with the scalar
        # one; its throughput makes the fine-binned check affordable
        energy = 100.0
        n = 20_000_000
        rng = np.random.default_rng(2024)
        _, cos_t = _kn_batch(rng, np.full(n, energy))
        thetas = np.arccos(cos_t)
        edges = np.radians(np.arange(0.0, 181.0, 5.0))
        masses = kn_bin_masses(energy, edges)
        counts, _ = np.histogram(thetas, bins=edges)
        np.testing.assert_allclose(counts / n, masses, rtol=0.02)

    def test_batch_consistent_with_scalar(self, rng):
        energy = 60.0
        n = 30_000
        scalar = np.array([compton_scatter(energy, rng)[0] for _ in range(n)])
        batch_e, _ = _kn_batch(np.random.default_rng(7), np.full(n, energy))
        # same distribution: compare deciles
        qs = np.linspace(0.05, 0.95, 19)
        np.testing.assert_allclose(np.quantile(scalar, qs),
                                   np.quantile(batch_e, qs), rtol=0.02)


class TestDeflect:
    def test_zero_angle_is_identity(self, rng):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        np.testing.assert_allclose(deflect(d, 0.0, 1.234), d, atol=1e-12)

    def test_polar_angle_preserved(self, rng):
        for _ in range(100):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            theta = rng.uniform(0, math.pi)
            out = deflect(d, theta, rng.uniform(0, 2 * math.pi))
            assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
            assert float(out @ d) == pytest.approx(math.cos(theta), abs=1e-12)


class TestClassify:
    def test_rules(self):
        p = PhotonState(np.zeros(3), Z, 50.0, scatter_count=0)
        assert classify_segment(p, True) is Component.BEAM
        assert classify_segment(p, False) is Component.BEAM
        p.scatter_count = 2
        assert classify_segment(p, False) is Component.SCATTER
        p.scatter_count = 1
        assert classify_segment(p, True) is Component.PATIENT


class CollectingSink:
    def __init__(self):
        self.segments = []

    def __call__(self, start, end, energy, component):
        self.segments.append((start.copy(), end.copy(), energy, component))


class TestTracePhoton:
    def test_vacuum_single_segment_to_boundary(self):
        rng = np.random.default_rng(1)
        photon = PhotonState(np.array([0.5, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), 100.0)
        sink = CollectingSink()
        term = trace_photon(photon, VACUUM_SCENE, np.zeros(3), np.ones(3), sink, rng)
        assert term is Termination.EXITED
        assert len(sink.segments) == 1
        start, end, energy, component = sink.segments[0]
        np.testing.assert_allclose(start, [0.5, 0.5, 0.5])
        np.testing.assert_allclose(end, [1.0, 0.5, 0.5], atol=1e-12)
        assert energy == 100.0 and component is Component.BEAM

    def test_opaque_slab_absorbs_beam(self):
        # 2 keV photons in water: photoelectric fraction ~0.9995 and the mean
        # free path is micrometres, so absorption inside the slab is certain
        doc = {"bodies": [{"shape": {"type": "box", "half_extents_m": [0.5, 0.5, 0.5]},
                           "translation_m": [0.5, 0.5, 0.5],
                           "material": "water"}],
               "ambient": "vacuum"}
        scene = scene_from_dict(doc)
        rng = np.random.default_rng(2)
        for _ in range(20):
            photon = PhotonState(np.array([0.0, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), 2.0)
            sink = CollectingSink()
            term = trace_photon(photon, scene, np.zeros(3), np.ones(3), sink, rng)
            assert term is Termination.ABSORBED
            assert all(seg[3] is Component.BEAM for seg in sink.segments)
            assert sink.segments[-1][1][0] < 0.001  # stopped within a millimetre

    def test_beer_lambert_through_water(self):
        # unscattered transmission through 5 cm of water at 100 keV
        doc = {"bodies": [{"shape": {"type": "box", "half_extents_m": [0.025, 0.5, 0.5]},
                           "translation_m": [0.5, 0.5, 0.5],
                           "material": "water"}],
               "ambient": "vacuum"}
        scene = scene_from_dict(doc)
        mu = get_material("water").mu_total_per_m(100.0)
        expect = math.exp(-mu * 0.05)
        rng = np.random.default_rng(3)
        n = 20_000
        through = 0
        for _ in range(n):
            photon = PhotonState(np.array([0.0, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), 100.0)
            sink = CollectingSink()
            trace_photon(photon, scene, np.zeros(3), np.ones(3), sink, rng)
            beam_far = max((seg[1][0] for seg in sink.segments
                            if seg[3] is Component.BEAM), default=0.0)
            if beam_far >= 0.525 - 1e-9:
                through += 1
        sigma = math.sqrt(expect * (1 - expect) / n)
        assert abs(through / n - expect) < 3 * sigma

    def test_track_energies_never_increase(self):
        doc = {"bodies": [{"shape": {"type": "sphere", "radius_m": 0.4},
                           "translation_m": [0.5, 0.5, 0.5],
                           "material": "water"}],
               "ambient": "vacuum"}
        scene = scene_from_dict(doc)
        rng = np.random.default_rng(4)
        scattered_tracks = 0
        for _ in range(300):
            photon = PhotonState(np.array([0.0, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]), 120.0)
            sink = CollectingSink()
            trace_photon(photon, scene, np.zeros(3), np.ones(3), sink, rng)
            energies = [seg[2] for seg in sink.segments]
            assert all(a >= b for a, b in zip(energies, energies[1:]))
            assert all(e >= CUTOFF_KEV for e in energies)
            for seg in sink.segments:
                d = seg[1] - seg[0]
                if np.linalg.norm(d) > 1e-12:
                    pass  # segment endpoints define direction implicitly
            if photon.scatter_count > 0:
                scattered_tracks += 1
        assert scattered_tracks > 50  # the setup actually exercises scattering

    def test_deterministic_given_seed(self):
        doc = {"bodies": [{"shape": {"type": "sphere", "radius_m": 0.3},
                           "translation_m": [0.5, 0.5, 0.5],
                           "material": "water"}],
               "ambient": "air"}
        scene = scene_from_dict(doc)

        def run():
            rng = np.random.default_rng(99)
            out = []
            for _ in range(50):
                photon = PhotonState(np.array([0.0, 0.5, 0.5]),
                                     np.array([1.0, 0.0, 0.0]), 90.0)
                sink = CollectingSink()
                term = trace_photon(photon, scene, np.zeros(3), np.ones(3), sink, rng)
                out.append((term, [(s[0].tolist(), s[1].tolist(), s[2], s[3])
                                   for s in sink.segments]))
            return out

        assert run() == run()

    def test_step_cap_reports_capped(self, monkeypatch):
        # at 150 keV in water almost every interaction is a Compton scatter,
        # so a 1-step budget is exhausted on the first interaction
        monkeypatch.setattr(transport, "MAX_STEPS", 1)
        doc = {"bodies": [{"shape": {"type": "box", "half_extents_m": [5.0, 5.0, 5.0]},
                           "translation_m": [0, 0, 0], "material": "water"}],
               "ambient": "water"}
        scene = scene_from_dict(doc)
        rng = np.random.default_rng(5)
        results = set()
        for _ in range(50):
            photon = PhotonState(np.zeros(3), Z, 150.0)
            results.add(trace_photon(photon, scene, np.full(3, -10.0),
                                     np.full(3, 10.0), None, rng))
        assert Termination.CAPPED in results

    def test_cutoff_termination_possible(self):
        # repeated scatters in an infinite water bath must eventually drive
        # some photon below the 1 keV cutoff or absorb it; cutoff happens
        # only via Compton losses, so scan many tracks
        doc = {"bodies": [{"shape": {"type": "box", "half_extents_m": [50.0] * 3},
                           "translation_m": [0, 0, 0], "material": "water"}],
               "ambient": "water"}
        scene = scene_from_dict(doc)
        rng = np.random.default_rng(6)
        terms = [trace_photon(PhotonState(np.zeros(3), Z, 150.0), scene,
                              np.full(3, -60.0), np.full(3, 60.0), None, rng)
                 for _ in range(200)]
        assert Termination.ABSORBED in terms
        assert all(t in (Termination.ABSORBED, Termination.CUTOFF) for t in terms)


class TestEmit:
    def test_emit_primary_fields(self, rng):
        src = SourceConfig(position_m=np.array([1.0, 2.0, 3.0]), direction=Z,
                           shape=ConeShape(30.0), spectrum=delta_spectrum(80.0))
        for _ in range(100):
            p = emit_primary(src, rng)
            np.testing.assert_array_equal(p.position_m, [1.0, 2.0, 3.0])
            assert np.linalg.norm(p.direction) == pytest.approx(1.0, abs=1e-12)
            assert 79.99 <= p.energy_kev <= 80.0
            assert p.scatter_count == 0
            assert p.component is Component.BEAM

    def test_source_direction_validated(self):
        with pytest.raises(ValueError, match="unit"):
            SourceConfig(np.zeros(3), np.array([0.0, 0.0, 2.0]),
                         ConeShape(10.0), delta_spectrum())
