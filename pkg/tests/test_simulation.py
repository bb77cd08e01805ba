"""Simulation, prediction, SNR calibration, fit metric, benchmark and Monte Carlo."""
import math

import numpy as np
import pytest

from lpvsid.core import DataSet, SchedulingBasis, apply_similarity, is_stable
from lpvsid.dataeq import WindowConfig
from lpvsid.ssest import IdentifyConfig
from lpvsid.simulation import (BENCHMARK_K0, MonteCarloConfig, NoiseSpec, bfr, calibrate_snr,
                               colored_noise, generate_dataset, make_benchmark, monte_carlo,
                               one_step_predictor, read_dataset_csv, simulate, snr_db,
                               write_dataset_csv)

from conftest import random_dataset, random_model, random_stable_model


# ---------------------------------------------------------------- simulate

def test_zero_input_zero_output(rng):
    m = random_model(rng)
    res = simulate(m, np.zeros((50, 2)), rng.uniform(-1, 1, (50, 1)))
    assert np.all(res.y == 0) and np.all(res.x == 0)


def test_scalar_lti_geometric_series():
    from lpvsid.core import LpvSsModel
    m = LpvSsModel(A=[[[0.5]]], B=[[[1.0]]], C=[[[1.0]]], D=[[[0.0]]], K=[[[0.0]]], Xi2=[[1.0]],
                   basis=SchedulingBasis.constant(1))
    u = np.zeros((10, 1)); u[0] = 1
    y = simulate(m, u, np.zeros((10, 1))).y[:, 0]
    np.testing.assert_allclose(y[1:], 0.5 ** np.arange(9), rtol=0, atol=1e-15)
    assert y[0] == 0


def test_simulation_invariant_under_similarity(rng):
    m = random_model(rng)
    T = rng.standard_normal((2, 2)) + 3 * np.eye(2)
    data, sim = random_dataset(rng, m, 200)
    y2 = simulate(apply_similarity(m, T), data.u, data.p, data.xi).y
    np.testing.assert_allclose(y2, sim.y, atol=1e-10)


# ---------------------------------------------------------------- predictor

def test_predictor_without_innovation_gain_is_simulation(rng):
    m = random_model(rng)
    m = m.replace(K=np.zeros_like(m.K))
    data, _ = random_dataset(rng, m, 200)
    np.testing.assert_allclose(one_step_predictor(m, data), simulate(m, data.u, data.p).y,
                               atol=1e-12)


def test_predictor_recovers_innovations(rng):
    m = random_stable_model(rng)
    data, sim = random_dataset(rng, m, 300, x0=np.ones(2))
    e = data.y - one_step_predictor(m, data)
    assert np.abs(e[50:] - data.xi[50:]).max() <= 1e-8


def test_predictor_lti(rng):
    m = random_stable_model(rng, n_psi=0)
    data, _ = random_dataset(rng, m, 100)
    np.testing.assert_allclose(data.y - one_step_predictor(m, data), data.xi, atol=1e-12)


# ---------------------------------------------------------------- noise / SNR

def test_colored_noise_properties(rng):
    m = random_model(rng)
    p = rng.uniform(-1, 1, (100, 1))
    xi = rng.standard_normal((100, 2))
    np.testing.assert_allclose(colored_noise(m.replace(K=np.zeros_like(m.K)), p, xi), xi)
    assert np.all(colored_noise(m, p, np.zeros_like(xi)) == 0)
    xi2 = rng.standard_normal((100, 2))
    np.testing.assert_allclose(colored_noise(m, p, 2 * xi - xi2),
                               2 * colored_noise(m, p, xi) - colored_noise(m, p, xi2), atol=1e-12)


@pytest.mark.parametrize("target", [25.0, 10.0, 0.0])
def test_calibrate_snr_hits_target(bench, target):
    rng = np.random.default_rng(3)
    u, p = bench.inputs(rng, 5000)
    cal = calibrate_snr(bench.model, u, p, NoiseSpec(target, seed=4))
    assert np.all(np.abs(cal.snr_db - target) <= 0.1)
    y0 = simulate(bench.model, u, p).y
    np.testing.assert_allclose(snr_db(y0, colored_noise(bench.model, p, cal.xi)), cal.snr_db)
    assert np.all(np.diag(cal.Xi2) > 0) and np.count_nonzero(cal.Xi2 - np.diag(np.diag(cal.Xi2))) == 0


def test_calibrate_snr_infinite(bench):
    rng = np.random.default_rng(3)
    u, p = bench.inputs(rng, 100)
    cal = calibrate_snr(bench.model, u, p, NoiseSpec(math.inf))
    assert np.all(cal.xi == 0) and np.all(cal.Xi2 == 0) and np.all(np.isinf(cal.snr_db))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(10.0, Xi2_base=[1.0, -1.0])


# ---------------------------------------------------------------- BFR

def test_bfr_examples():
    y = np.array([[1.0], [2.0], [3.0]])
    assert bfr(y, y) == 100
    assert bfr(y, np.full_like(y, 2.0)) == 0
    assert bfr(y, y + 0.5 * (y - 2.0)) == pytest.approx(50)
    assert bfr(y, -10 * y) == 0


def test_bfr_constant_reference_warns():
    with pytest.warns(RuntimeWarning, match="constant"):
        assert bfr(np.ones((5, 2)), np.zeros((5, 2))) == 0


# ---------------------------------------------------------------- benchmark

def test_benchmark_structure(bench):
    m = bench.model
    np.testing.assert_array_equal(m.K[0], BENCHMARK_K0)
    np.testing.assert_array_equal(m.K[1:], 0)
    assert (m.n_x, m.n_u, m.n_y, m.n_psi) == (2, 2, 2, 2)
    assert is_stable(m, "open") and is_stable(m, "closed")


def test_benchmark_deterministic():
    a, b = make_benchmark(5), make_benchmark(5)
    for name in "ABCDK":
        np.testing.assert_array_equal(getattr(a.model, name), getattr(b.model, name))
    assert not np.array_equal(a.model.A, make_benchmark(6).model.A)


def test_generate_dataset_noiseless(bench):
    data, y0, cal = generate_dataset(bench, np.random.default_rng(0), 300, math.inf)
    np.testing.assert_array_equal(data.y, y0)
    assert np.all(data.xi == 0)
    assert np.all(np.abs(data.p) <= 1)


# ---------------------------------------------------------------- Monte Carlo

def _small_mc(**kw):
    settings = {"ssarx": IdentifyConfig(window=WindowConfig(2, 2), n_x=2),
                "pbsid": IdentifyConfig(window=WindowConfig(2, 2), n_x=2)}
    base = dict(n_runs=2, N=3000, snrs=(math.inf, 10.0), methods=("ssarx", "pbsid"),
                settings=settings, n_val=500)
    base.update(kw)
    return MonteCarloConfig(**base)


def test_monte_carlo_smoke_and_table():
    res = monte_carlo(_small_mc())
    assert len(res.runs) == 8 and len(res.table) == 4
    noiseless = [r for r in res.table if r["snr_db"] == math.inf]
    for row in noiseless:
        assert row["failures"] == 0 and row["bfr_sim_mean"] >= 95
    assert len(res.eigenvalues) == 8 * 4
    assert {e["matrix"] for e in res.eigenvalues} == {"A0", "A1"}


def test_monte_carlo_deterministic_and_parallel_consistent():
    a = monte_carlo(_small_mc(n_runs=2, snrs=(10.0,)))
    b = monte_carlo(_small_mc(n_runs=2, snrs=(10.0,)), jobs=2)
    assert a.table == b.table
    assert [r["bfr_sim"] for r in a.runs] == [r["bfr_sim"] for r in b.runs]


def test_monte_carlo_config_errors():
    with pytest.raises(ValueError):
        MonteCarloConfig(n_runs=0)
    with pytest.raises(ValueError):
        monte_carlo(_small_mc(n_runs=1), jobs=0)


# ---------------------------------------------------------------- CSV

def test_dataset_csv_round_trip(tmp_path, rng):
    m = random_model(rng)
    data, _ = random_dataset(rng, m, 50)
    write_dataset_csv(tmp_path / "d.csv", data, include_xi=True)
    back = read_dataset_csv(tmp_path / "d.csv")
    for name in ("u", "p", "y", "xi"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
    write_dataset_csv(tmp_path / "e.csv", data)
    assert read_dataset_csv(tmp_path / "e.csv").xi is None


def test_dataset_csv_errors(tmp_path):
    from lpvsid.errors import DataError
    (tmp_path / "bad.csv").write_text("t,u1,y1\n0,1,2\n")
    with pytest.raises(DataError, match="p"):
        read_dataset_csv(tmp_path / "bad.csv")
    with pytest.raises(DataError):
        read_dataset_csv(tmp_path / "missing.csv")
