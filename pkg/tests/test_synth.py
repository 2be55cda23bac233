import json

import numpy as np
import pytest

from drifter.data import Segment, load_csv
from drifter.synth import SynthSpec, ar1_coefficient, ar1_series, generate, write


def lag_autocorr(x, lag):
    x = x - x.mean()
    return float(x[:-lag] @ x[lag:] / (x @ x))


def test_coefficient_values():
    assert ar1_coefficient(1) == 0.5
    assert ar1_coefficient(150) == pytest.approx(2 ** (-1 / 150), rel=1e-15)
    assert ar1_coefficient(150) == pytest.approx(0.99538968, abs=1e-8)
    assert ar1_coefficient(150) ** 150 == pytest.approx(0.5, rel=1e-12)


@pytest.mark.parametrize("h", [5, 20, 150])
def test_lag_h_autocorrelation(h):
    # at h=150 the estimate has a standard error near 0.02, so the band is seed sensitive
    x = ar1_series(200_000, h, 1.0, np.random.default_rng(2024))
    assert 0.47 <= lag_autocorr(x, h) <= 0.53


def test_series_stationary_amplitude():
    x = ar1_series(100_000, 10, 2.5, np.random.default_rng(0))
    assert np.std(x) == pytest.approx(2.5, rel=0.05)
    assert abs(np.mean(x)) < 0.1


def test_series_preconditions():
    with pytest.raises(ValueError):
        ar1_series(10, 0.5, 1.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ar1_series(10, 2, 0.0, np.random.default_rng(0))


def test_benchmark_shape():
    spec = SynthSpec(n=2000, m=5, h=150, amp=1, sigma_n=0.3, drift_interval=Segment(1700, 1800), drift_amp=5)
    assert spec == SynthSpec.benchmark()
    d = generate(spec)
    assert (d.n, d.m, d.has_response) == (2000, 5, True)
    assert d.columns == tuple(f"x{j}" for j in range(1, 6))


def test_noiseless_response_is_sine_of_row_sum():
    d = generate(SynthSpec(n=500, m=3, sigma_n=0.0, seed=5))
    np.testing.assert_allclose(d.y, np.sin(d.X.sum(axis=1)), atol=1e-12)


def test_same_seed_identical():
    a, b = generate(SynthSpec(seed=9)), generate(SynthSpec(seed=9))
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert generate(SynthSpec(seed=10)) != a


def test_response_bounded():
    d = generate(SynthSpec(n=20_000, m=4, sigma_n=0.3, seed=1))
    assert np.all(np.abs(d.y) <= 1 + 8 * 0.3)


def test_column_amplitude_without_drift():
    d = generate(SynthSpec(n=20_000, m=3, h=10, amp=2.0, seed=3))
    np.testing.assert_allclose(d.X.std(axis=0, ddof=1), 2.0, rtol=0.10)


def test_drift_rows_are_larger():
    d = generate(SynthSpec.benchmark(seed=6))
    norms = np.linalg.norm(d.X, axis=1)
    inside = np.zeros(d.n, dtype=bool)
    inside[1699:1800] = True
    assert np.median(norms[inside]) >= 2 * np.median(norms[~inside])


def test_virtual_drift_only():
    # same latent path with and without the drift window differs only inside it
    base = generate(SynthSpec(seed=12, sigma_n=0.0))
    drift = generate(SynthSpec(seed=12, sigma_n=0.0, drift_interval=Segment(1700, 1800)))
    np.testing.assert_array_equal(base.X[:1699], drift.X[:1699])
    np.testing.assert_allclose(drift.X[1699:1800], 5 * base.X[1699:1800], rtol=1e-15)
    np.testing.assert_allclose(drift.y, np.sin(drift.X.sum(axis=1)), atol=1e-12)


def test_columns_independent():
    d = generate(SynthSpec(n=100_000, m=3, h=5, seed=4))
    r = np.corrcoef(d.X, rowvar=False)
    assert np.all(np.abs(r[np.triu_indices(3, 1)]) <= 0.05)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(n=100, drift_interval=Segment(90, 120))
    with pytest.raises(ValueError):
        SynthSpec(amp=-1)
    with pytest.raises(ValueError):
        SynthSpec(h=0.5)


def test_write_csv_and_sidecar(tmp_path):
    spec = SynthSpec(n=40, m=2, seed=3, drift_interval=Segment(10, 20))
    d = write(spec, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", "y")
    assert back == d
    meta = json.loads((tmp_path / "s.csv.json").read_text())
    assert meta["generator"].startswith("numpy.random.Generator")
    assert meta["spec"]["seed"] == 3 and meta["spec"]["drift_interval"] == [10, 20]
