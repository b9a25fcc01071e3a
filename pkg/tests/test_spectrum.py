"""Spectrum CDF construction and inverse-transform sampling."""
import numpy as np
import pytest

from radfield.errors import SpectrumError
from radfield.spectrum import Spectrum, load_spectrum_csv, sample_energy


def spec(points):
    e, w = zip(*points)
    return Spectrum(np.array(e, dtype=float), np.array(w, dtype=float))


class TestConstruction:
    def test_cdf_ends_at_one(self):
        s = spec([(10, 1), (20, 3), (40, 0.5)])
        assert s.cdf[0] == 0.0
        assert s.cdf[-1] == 1.0
        assert np.all(np.diff(s.cdf) >= 0)

    def test_rejects_short_and_disordered(self):
        with pytest.raises(SpectrumError):
            spec([(10, 1)])
        with pytest.raises(SpectrumError):
            spec([(10, 1), (10, 2)])
        with pytest.raises(SpectrumError):
            spec([(20, 1), (10, 2)])

    def test_rejects_negative_and_empty(self):
        with pytest.raises(SpectrumError):
            spec([(10, -1), (20, 1)])
        with pytest.raises(SpectrumError):
            spec([(10, 0), (20, 0)])
        with pytest.raises(SpectrumError):
            spec([(10, np.nan), (20, 1)])


class TestSampling:
    def test_flat_two_point_lower_edge(self):
        s = spec([(50, 1), (100, 1)])
        assert sample_energy(s, 0.0) == pytest.approx(50.0)
        assert sample_energy(s, 1.0) == pytest.approx(100.0)
        assert sample_energy(s, 0.5) == pytest.approx(75.0, rel=1e-9)

    def test_delta_like_stays_in_interval(self):
        s = spec([(99.9, 0), (100, 1)])
        for u in np.linspace(0, 1, 33):
            assert 99.9 <= sample_energy(s, float(u)) <= 100.0

    def test_monotonic_in_u(self, rng):
        s = spec([(10, 0.2), (30, 1.0), (31, 0.1), (80, 0.9), (150, 0.05)])
        us = np.sort(rng.random(500))
        es = s.sample(us)
        assert np.all(np.diff(es) >= 0)
        assert np.all((es >= 10) & (es <= 150))

    def test_histogram_matches_pdf(self, rng):
        # empirical interval masses vs the trapezoid masses the CDF is built from
        pts = [(10, 0.5), (25, 2.0), (40, 1.0), (70, 3.0), (100, 0.2)]
        s = spec(pts)
        n = 1_000_000
        es = s.sample(rng.random(n))
        edges = np.array([p[0] for p in pts])
        counts, _ = np.histogram(es, bins=edges)
        e = edges
        w = np.array([p[1] for p in pts])
        masses = 0.5 * (w[1:] + w[:-1]) * np.diff(e)
        masses /= masses.sum()
        np.testing.assert_allclose(counts / n, masses, rtol=0.01)

    def test_vectorized_matches_scalar(self, rng):
        s = spec([(10, 1), (20, 5), (50, 2)])
        us = rng.random(64)
        np.testing.assert_allclose(
            s.sample(us), [sample_energy(s, float(u)) for u in us], rtol=1e-12)


class TestCsv:
    def test_loads_valid_file(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("energy_keV,relative_intensity\n10,1.0\n20,2.0\n30,0.5\n")
        s = load_spectrum_csv(p)
        assert s.energies_kev.tolist() == [10, 20, 30]
        assert s.intensities.tolist() == [1.0, 2.0, 0.5]

    def test_header_must_match(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("energy,intensity\n10,1\n20,1\n")
        with pytest.raises(SpectrumError, match="header"):
            load_spectrum_csv(p)

    def test_bad_number_reports_line(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("energy_keV,relative_intensity\n10,1.0\nxx,2.0\n")
        with pytest.raises(SpectrumError, match="line 3"):
            load_spectrum_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SpectrumError):
            load_spectrum_csv(tmp_path / "absent.csv")

    def test_shipped_demo_spectrum(self):
        import radfield
        from pathlib import Path
        demo = Path(radfield.__file__).parent / "data" / "demo_100kv.csv"
        s = load_spectrum_csv(demo)
        assert s.energies_kev[0] == 10.0
        assert s.energies_kev[-1] == 100.0
        assert s.intensities.max() == pytest.approx(1.0)
