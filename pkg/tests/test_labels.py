import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pem.errors import PemError
from pem.ingest import AmplitudeSeries
from pem.labels import convert, read_labels_csv, smooth, synthesize_labels, write_labels_csv


def brute_force_smooth(values, window):
    """Independent oracle: python-sum windowed mean per index."""
    n = len(values)
    half = window // 2
    out = []
    for i in range(n):
        lo = max(i - half, 0)
        hi = min(i + half, n - 1) + 1
        out.append(sum(values[lo:hi]) / (hi - lo))
    return out


class TestConvert:
    def test_endpoints_and_midpoint(self):
        assert convert(0.0) == 1.0
        assert convert(1.0) == pytest.approx(1.0, abs=1e-12)
        assert convert(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_quarter_is_half(self):
        assert convert(0.25) == pytest.approx(0.5, abs=1e-12)

    def test_out_of_range(self):
        for bad in (-0.01, 1.01):
            with pytest.raises(PemError, match="unnormalized input"):
                convert(bad)

    def test_matches_closed_form_on_grid(self):
        xs = np.linspace(0, 1, 101)
        got = convert(xs)
        expected = [math.cos(math.pi * x) ** 2 for x in xs]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=300)
    def test_symmetry(self, x):
        assert abs(convert(x) - convert(1.0 - x)) <= 1e-12


class TestSmooth:
    def test_window_one_identity(self):
        values = [0.2, 0.9, 0.4]
        assert smooth(values, 1).tolist() == values

    def test_known_series(self):
        got = smooth([0, 1, 0, 1, 0], 3)
        np.testing.assert_allclose(got, [0.5, 1 / 3, 2 / 3, 1 / 3, 0.5], atol=1e-15)

    def test_constant_series(self):
        got = smooth([0.7] * 9, 4)
        np.testing.assert_allclose(got, 0.7)

    def test_errors(self):
        with pytest.raises(PemError):
            smooth([1, 2, 3], 0)
        with pytest.raises(PemError):
            smooth([1, 2, 3], 4)

    @given(
        values=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=64),
        data=st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_brute_force(self, values, data):
        window = data.draw(st.integers(1, len(values)))
        got = smooth(values, window)
        np.testing.assert_allclose(got, brute_force_smooth(values, window), atol=1e-12)

    @given(
        values=st.lists(st.floats(0.0, 1.0), min_size=2, max_size=64),
        data=st.data(),
    )
    @settings(max_examples=200, deadline=None)
    def test_preserves_bounds(self, values, data):
        window = data.draw(st.integers(1, len(values)))
        got = smooth(values, window)
        assert got.min() >= min(values) - 1e-12
        assert got.max() <= max(values) + 1e-12

    def test_full_window_center_is_global_mean(self):
        rng = np.random.default_rng(2)
        for n in (3, 5, 7, 15):
            values = rng.uniform(0, 1, n)
            got = smooth(values, n)
            assert got[(n - 1) // 2] == pytest.approx(values.mean(), abs=1e-12)


class TestSynthesize:
    def _series(self, values):
        return AmplitudeSeries(250, np.asarray(values, dtype=float), len(values) * 250)

    def test_all_half_goes_to_zero(self):
        out = synthesize_labels(self._series([0.5] * 6), window=3)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-12)

    def test_silence_is_high_affect(self):
        out = synthesize_labels(self._series([0.0] * 6), window=3)
        np.testing.assert_allclose(out.values, 1.0)

    def test_window_one_pointwise(self):
        out = synthesize_labels(self._series([0, 0.5, 1, 0.5, 0]), window=1)
        np.testing.assert_allclose(out.values, [1, 0, 1, 0, 1], atol=1e-12)

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(3)
        amps = self._series(rng.uniform(0, 1, 40))
        out = synthesize_labels(amps, window=8)
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0
        assert out.window == 8 and out.chunk_ms == 250

    def test_length_preserved(self):
        out = synthesize_labels(self._series([0.1] * 11), window=4)
        assert len(out.values) == 11


class TestLabelsCsv:
    def test_format_and_roundtrip(self, tmp_path):
        out = synthesize_labels(
            AmplitudeSeries(250, np.array([0.0, 0.25, 0.5]), 750), window=1
        )
        path = tmp_path / "l.csv"
        write_labels_csv(out, path)
        assert path.read_bytes() == b"frame_index,label\n0,1.000000\n1,0.500000\n2,0.000000\n"
        np.testing.assert_allclose(read_labels_csv(path), [1.0, 0.5, 0.0])
