"""Least-squares matrix recovery, the identify pipeline and model comparison."""
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from lpvsid.core import DataSet, SchedulingBasis, apply_similarity, load_model, save_model
from lpvsid.dataeq import WindowConfig
from lpvsid.errors import RankDeficiencyError, DataError
from lpvsid.simulation import bfr, generate_dataset, simulate
from lpvsid.ssest import (METHODS, IdentifyConfig, StageError, estimate_output_matrices,
                          estimate_state_matrices, identify, match_eigenvalues, model_distance,
                          pre_estimate)

from conftest import random_dataset, random_model, random_stable_model


def spectra_close(m1, m2, tol):
    return all(match_eigenvalues(np.linalg.eigvals(m1.A[i]), np.linalg.eigvals(m2.A[i])) <= tol
               for i in (0, 1))


@pytest.fixture(scope="module")
def small_system():
    rng = np.random.default_rng(21)
    m = random_stable_model(rng, n_psi=1, a_scale=0.3, k_scale=0.3)
    data, _ = random_dataset(rng, m, 4000, noise=0.0)
    val, _ = random_dataset(rng, m, 2000, noise=0.0)
    return m, data, val


# ---------------------------------------------------------------- LS recovery

def test_output_matrices_round_trip(rng):
    m = random_model(rng, n_psi=1)
    data, sim = random_dataset(rng, m, 300, noise=0.0)
    ts = np.arange(300)
    C, D, resid = estimate_output_matrices(sim.x[:-1].T, data, m.basis, ts)
    np.testing.assert_allclose(C, m.C, atol=1e-9)
    np.testing.assert_allclose(D, m.D, atol=1e-9)
    assert np.abs(resid).max() <= 1e-9


def test_output_matrices_lti(rng):
    m = random_model(rng, n_psi=0)
    data, sim = random_dataset(rng, m, 100, noise=0.0)
    C, D, _ = estimate_output_matrices(sim.x[:-1].T, data, m.basis, np.arange(100))
    assert C.shape == (1, 2, 2)
    np.testing.assert_allclose(C, m.C, atol=1e-9)


def test_output_matrices_without_input_excitation(rng):
    m = random_model(rng, n_psi=1)
    data, sim = random_dataset(rng, m, 100)
    zero_u = DataSet(u=np.zeros_like(data.u), p=data.p, y=data.y)
    with pytest.raises(RankDeficiencyError, match="excitation"):
        estimate_output_matrices(sim.x[:-1].T, zero_u, m.basis, np.arange(100))
    with pytest.raises(DataError):
        estimate_output_matrices(sim.x[:-1].T, data, m.basis, np.arange(99))


def test_state_matrices_round_trip(rng):
    m = random_model(rng, n_psi=1)
    data, sim = random_dataset(rng, m, 300)
    ts = np.arange(300)
    A, B, K = estimate_state_matrices(sim.x[:-1].T, data.xi, data, m.basis, ts)
    np.testing.assert_allclose(A, m.A, atol=1e-8)
    np.testing.assert_allclose(B, m.B, atol=1e-8)
    np.testing.assert_allclose(K, m.K, atol=1e-8)


def test_state_matrices_lti(rng):
    m = random_model(rng, n_psi=0)
    data, sim = random_dataset(rng, m, 100)
    A, _, _ = estimate_state_matrices(sim.x[:-1].T, data.xi, data, m.basis, np.arange(100))
    np.testing.assert_allclose(A, m.A, atol=1e-8)


def test_state_matrices_errors(rng):
    m = random_model(rng, n_psi=1)
    data, sim = random_dataset(rng, m, 100)
    with pytest.raises(RankDeficiencyError):
        estimate_state_matrices(sim.x[:-1].T, np.zeros((100, 2)), data, m.basis, np.arange(100))
    with pytest.raises(DataError):
        estimate_state_matrices(sim.x[:1].T, data.xi[:1], data, m.basis, np.arange(1))
    ts = np.r_[0:50, 51:101]
    with pytest.raises(DataError):
        estimate_state_matrices(sim.x[ts].T, data.xi[ts % 100], data, m.basis, ts % 100)


# ---------------------------------------------------------------- pipeline

def test_identify_rejects_unknown_method(small_system):
    m, data, _ = small_system
    with pytest.raises(ValueError, match="cca-ol"):
        identify(data, m.basis, "bogus")


def test_identify_short_record(small_system):
    m, data, _ = small_system
    short = DataSet(u=data.u[:6], p=data.p[:6], y=data.y[:6])
    with pytest.raises(StageError) as err:
        identify(short, m.basis, "ssarx", IdentifyConfig(window=WindowConfig(3, 3)))
    assert err.value.stage == "input"


def test_identify_scheduling_dimension_mismatch(small_system):
    _, data, _ = small_system
    with pytest.raises(StageError) as err:
        identify(data, SchedulingBasis.affine(2), "ssarx")
    assert err.value.stage == "input"


def test_identify_size_guard_is_preestimation_error(bench):
    rng = np.random.default_rng(0)
    data, _, _ = generate_dataset(bench, rng, 2000, np.inf)
    with pytest.raises(StageError) as err:
        identify(data, bench.model.basis, "ssarx", IdentifyConfig(window=WindowConfig(3, 4)))
    assert err.value.stage == "pre-estimation"
    assert "regressors" in str(err.value)


def test_identify_order_error_is_realization_error(small_system):
    m, data, _ = small_system
    with pytest.raises(StageError) as err:
        identify(data, m.basis, "hk-cl", IdentifyConfig(window=WindowConfig(1, 2), n_x=3))
    assert err.value.stage == "realization"


@pytest.mark.parametrize("method", ["cca-ol", "n4sid", "ssarx", "pbsid"])
def test_round_trip_identifiability(small_system, method):
    m, data, val = small_system
    win = WindowConfig(2, 3) if method in ("cca-ol", "n4sid") else WindowConfig(2, 2)
    res = identify(data, m.basis, method, IdentifyConfig(window=win, n_x=2))
    y_est = simulate(res.model, val.u, val.p).y
    assert bfr(simulate(m, val.u, val.p).y, y_est) >= 99
    assert spectra_close(m, res.model, 1e-2)
    assert res.model.n_x == 2 and res.model.n_u == m.n_u and res.model.n_y == m.n_y


def test_identify_diagnostics_and_serialization(small_system, tmp_path):
    m, data, _ = small_system
    res = identify(data, m.basis, "pbsid", IdentifyConfig(window=WindowConfig(2, 2)))
    d = res.diagnostics
    assert d["method"] == "pbsid" and d["n_x"] == 2
    assert d["order_selection"]["low_confidence"] is False
    assert len(d["singular_values"]) == 4
    assert d["N_eff"] == data.N - 2 - 2 + 1
    assert "lambda" in d["pre_estimation"]
    save_model(res.model, tmp_path / "m.json", extra=d)
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.A, res.model.A)


def test_noiseless_cca_reports_deterministic_whitening(small_system):
    m, data, _ = small_system
    res = identify(data, m.basis, "ssarx", IdentifyConfig(window=WindowConfig(2, 2), n_x=2))
    assert res.diagnostics["deterministic_whitening"] is True
    assert res.diagnostics["log_likelihood"] == -np.inf


def test_shared_pre_estimate_reused(small_system):
    m, data, _ = small_system
    cfg = IdentifyConfig(window=WindowConfig(2, 2), n_x=2)
    pre = pre_estimate(data, m.basis, "pbsid", cfg)
    a = identify(data, m.basis, "pbsid", cfg, pre=pre).model
    b = identify(data, m.basis, "pbsid", cfg).model
    np.testing.assert_array_equal(a.A, b.A)


def test_concurrent_identify_calls_agree(small_system):
    m, data, _ = small_system
    cfg = IdentifyConfig(window=WindowConfig(2, 2), n_x=2)
    ref = identify(data, m.basis, "hk-cl", cfg).model
    with ThreadPoolExecutor(max_workers=3) as pool:
        outs = list(pool.map(lambda _: identify(data, m.basis, "hk-cl", cfg).model, range(3)))
    for o in outs:
        np.testing.assert_array_equal(o.A, ref.A)


def test_innovation_covariance_consistency(bench):
    rng = np.random.default_rng(1)
    data, _, cal = generate_dataset(bench, rng, 10_000, 25.0)
    res = identify(data, bench.model.basis, "ssarx", IdentifyConfig(window=WindowConfig(2, 2), n_x=2))
    rel = np.linalg.norm(res.model.Xi2 - cal.Xi2) / np.linalg.norm(cal.Xi2)
    assert rel <= 0.2


def test_order_selection_on_noiseless_benchmark(bench):
    rng = np.random.default_rng(2)
    data, _, _ = generate_dataset(bench, rng, 10_000, np.inf)
    res = identify(data, bench.model.basis, "pbsid", IdentifyConfig(window=WindowConfig(2, 2)))
    assert res.diagnostics["n_x"] == 2


# ---------------------------------------------------------------- comparison

def test_model_distance_similarity(rng):
    m1 = random_stable_model(rng, n_psi=1)
    m2 = apply_similarity(m1, rng.standard_normal((2, 2)) + 2 * np.eye(2))
    val, _ = random_dataset(rng, m1, 500)
    d = model_distance(m1, m2, val)
    assert d["bfr_sim"] == pytest.approx(100, abs=1e-7)
    assert d["bfr_pred"] == pytest.approx(100, abs=1e-7)
    assert d["eig_A0_distance"] <= 1e-9 and d["eig_A1_distance"] <= 1e-9


def test_model_distance_scaled_spectrum(rng):
    m1 = random_stable_model(rng, n_psi=1)
    A = m1.A.copy()
    A[0] *= 1.5
    m2 = m1.replace(A=A)
    val, _ = random_dataset(rng, m1, 200)
    d = model_distance(m1, m2, val)
    e1, e2 = d["eig_A0"]
    assert match_eigenvalues(1.5 * e1, e2) <= 1e-12
    assert d["eig_A0_distance"] > 0


def test_match_eigenvalues_edge_cases():
    assert match_eigenvalues(np.array([1.0, 2.0]), np.array([2.0, 1.0])) == 0
    assert match_eigenvalues(np.array([1.0]), np.array([1.0, 2.0])) == np.inf
    assert match_eigenvalues(np.array([]), np.array([])) == 0
    assert set(METHODS) == {"cca-ol", "hk-ol", "n4sid", "p-cca", "ssarx", "hk-cl", "pbsid", "p-ssarx"}
