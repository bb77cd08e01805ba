"""Property-based checks of algebraic invariants."""
import numpy as np
from hypothesis import given, settings, strategies as st

from lpvsid.core import SchedulingBasis, apply_similarity, closed_loop_coeffs, extend_psi, n_mu
from lpvsid.dataeq import (build_extended_reachability, build_past_regressor, kron_rows,
                           tv_toeplitz)
from lpvsid.preest import RidgeConfig, ridge_fit
from lpvsid.realization import constrained_svd, select_order
from lpvsid.simulation import bfr, simulate
from lpvsid.ssest import match_eigenvalues

from conftest import random_dataset, random_model, random_stable_model

PROP = settings(max_examples=50, deadline=None)
seeds = st.integers(0, 2 ** 32 - 1)


@PROP
@given(seeds, st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_kron_rows_is_rowwise_kron(seed, a, b, c):
    rng = np.random.default_rng(seed)
    A, B, C = (rng.standard_normal((5, k)) for k in (a, b, c))
    K = kron_rows(A, B, C)
    for t in range(5):
        np.testing.assert_allclose(K[t], np.kron(np.kron(A[t], B[t]), C[t]), atol=1e-14)
    np.testing.assert_allclose(K, kron_rows(kron_rows(A, B), C), atol=1e-14)


@PROP
@given(seeds, st.integers(0, 5))
def test_mu_dimension_and_entries(seed, n):
    psi = np.r_[1.0, np.random.default_rng(seed).uniform(-1, 1, n)]
    mu = extend_psi(psi)
    assert mu.size == n_mu(n) + 1 == 1 + n + n * (n + 1) // 2
    np.testing.assert_array_equal(mu[:n + 1], psi)
    assert np.isclose(mu[1:] @ mu[1:], np.sum(psi[1:] ** 2) + sum(
        (psi[i] * psi[j]) ** 2 for i in range(1, n + 1) for j in range(i, n + 1)))


@PROP
@given(seeds, st.integers(0, 3))
def test_closed_loop_coefficients_reconstruct(seed, n_psi):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_psi=n_psi)
    acl, bcl = closed_loop_coeffs(m)
    psi = np.r_[1.0, rng.uniform(-1, 1, n_psi)]
    mu = extend_psi(psi)
    A, B, C, D, K = (m.at(x, psi) for x in "ABCDK")
    np.testing.assert_allclose(np.tensordot(mu, acl, 1), A - K @ C, atol=1e-12)
    np.testing.assert_allclose(np.tensordot(mu, bcl, 1), B - K @ D, atol=1e-12)


@PROP
@given(seeds)
def test_similarity_preserves_io_behaviour(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_x=3, n_psi=2)
    T = np.linalg.qr(rng.standard_normal((3, 3)))[0] @ np.diag(rng.uniform(0.5, 2, 3))
    data, sim = random_dataset(rng, m, 60)
    y2 = simulate(apply_similarity(m, T), data.u, data.p, data.xi).y
    np.testing.assert_allclose(y2, sim.y, atol=1e-9 * (1 + np.abs(sim.y).max()))


@PROP
@given(seeds, st.floats(0.1, 10))
def test_bfr_bounds_and_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((40, 2))
    yh = y + rng.standard_normal((40, 2)) * rng.uniform(0, 3)
    v = bfr(y, yh)
    assert 0 <= v <= 100
    assert bfr(y, y) == 100
    assert np.isclose(bfr(scale * y, scale * yh), v)


@PROP
@given(seeds, st.integers(1, 4), st.integers(2, 6))
def test_cca_state_has_unit_covariance(seed, ny, nz):
    rng = np.random.default_rng(seed)
    N = 400
    Z = rng.standard_normal((nz, N))
    Y = rng.standard_normal((ny, nz)) @ Z + rng.standard_normal((ny, N))
    svd = constrained_svd(Y, Z)
    assert np.all(svd.S_tilde <= 1 + 1e-12) and np.all(svd.S_tilde >= 0)
    assert np.all(np.diff(svd.S_tilde) <= 1e-12)
    n = min(ny, nz)
    X = svd.V_tilde[:, :n].T @ Z
    np.testing.assert_allclose(X @ X.T / N, np.eye(n), atol=1e-9)
    Uy = svd.U_tilde.T @ Y
    np.testing.assert_allclose(Uy @ Uy.T / N, np.eye(n), atol=1e-9)


@PROP
@given(seeds, st.sampled_from(["open", "closed"]), st.integers(1, 3))
def test_reachability_regressor_identity(seed, mode, p_win):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_psi=1)
    data, _ = random_dataset(rng, m, 12)
    t = 8
    psi = m.basis.trajectory(data.p)
    x = np.zeros(m.n_x)
    for s in range(t - p_win, t):
        A, B, C, D, K = (m.at(n, psi[s]) for n in "ABCDK")
        if mode == "open":
            x = A @ x + B @ data.u[s] + K @ data.xi[s]
        else:
            x = (A - K @ C) @ x + (B - K @ D) @ data.u[s] + K @ data.y[s]
    z = build_past_regressor(data, m.basis, t, p_win, mode)
    R = build_extended_reachability(m, p_win, mode)
    np.testing.assert_allclose(R @ z, x, atol=1e-10 * (1 + np.abs(x).max()))


@PROP
@given(seeds, st.integers(1, 4), st.sampled_from(["open", "closed"]))
def test_toeplitz_is_block_lower_triangular(seed, f, mode):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_psi=1)
    psi = m.basis.trajectory(rng.uniform(-1, 1, (f, 1)))
    L = tv_toeplitz(m, psi, 0, f, mode)
    w = m.n_u + m.n_y
    for i in range(f):
        assert np.all(L[i * m.n_y:(i + 1) * m.n_y, (i + 1) * w:] == 0)


@PROP
@given(seeds, st.integers(5, 40))
def test_simulation_is_causal(seed, k):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_psi=1)
    data, sim = random_dataset(rng, m, 50)
    u2 = data.u.copy()
    u2[k:] += rng.standard_normal(u2[k:].shape)
    y2 = simulate(m, u2, data.p, data.xi).y
    np.testing.assert_array_equal(y2[:k], sim.y[:k])


@PROP
@given(seeds, st.integers(3, 30), st.floats(1e-6, 10))
def test_ridge_primal_dual_agree(seed, d, lam):
    rng = np.random.default_rng(seed)
    Phi = rng.standard_normal((20, d))
    Y = rng.standard_normal((20, 2))
    res = ridge_fit(Phi, Y, RidgeConfig(lambda_grid=(lam,)))
    direct = np.linalg.solve(Phi.T @ Phi + lam * np.eye(d), Phi.T @ Y).T
    np.testing.assert_allclose(res.theta, direct, atol=1e-7 * (1 + np.abs(direct).max()))


@PROP
@given(seeds, st.integers(1, 6))
def test_match_eigenvalues_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert match_eigenvalues(a, rng.permutation(a)) == 0
    shift = 0.01
    assert np.isclose(match_eigenvalues(a, a + shift), shift)


@PROP
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=12))
def test_select_order_in_range(values):
    s = np.sort(np.asarray(values))[::-1]
    choice = select_order(s)
    assert 1 <= choice.n_x <= len(s)
    if len(s) > 1:
        assert choice.low_confidence == (not choice.ratio > 2)
    else:
        assert choice.low_confidence       # no gap to judge from
