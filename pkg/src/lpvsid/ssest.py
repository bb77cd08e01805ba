"""Least-squares recovery of the LPV-SS matrices and the end-to-end pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DataSet, LpvSsModel, SchedulingBasis
from .dataeq import WindowConfig, corrected_future, kron_rows
from .errors import DataError, LpvSidError, OrderError, PersistencyError, RankDeficiencyError
from .preest import (GaussNewtonConfig, RidgeConfig, fit_lpv_arx, fit_lpv_fir, fit_lpv_max,
                     markov_to_hankel)
from .realization import (StateSequence, cca_state, efficient_state, select_order, unified_state)

OPEN_METHODS = ("cca-ol", "hk-ol", "n4sid", "p-cca")
CLOSED_METHODS = ("ssarx", "hk-cl", "pbsid", "p-ssarx")
METHODS = OPEN_METHODS + CLOSED_METHODS
_WEIGHTING = {"hk-ol": "hk", "n4sid": "n4sid", "p-cca": "pcca",
              "hk-cl": "hk", "pbsid": "pbsid", "p-ssarx": "pssarx"}
LSTSQ_RCOND = 1e-10


class StageError(LpvSidError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def _lstsq(Phi: np.ndarray, T: np.ndarray, what: str) -> np.ndarray:
    """Orthogonal-decomposition LS ``T ~ Phi theta^T`` with a rank check."""
    sol, _, rank, sv = np.linalg.lstsq(Phi, T, rcond=LSTSQ_RCOND)
    if rank < Phi.shape[1]:
        raise RankDeficiencyError(
            f"{what} regressor has rank {rank} < {Phi.shape[1]}; use richer excitation "
            "or fewer basis functions")
    return sol.T


def estimate_output_matrices(X_hat: np.ndarray, data: DataSet, basis: SchedulingBasis,
                             t_range: np.ndarray):
    """Solve ``y_t = C(p_t) x_t + D(p_t) u_t + xi_t`` for ``C_i``, ``D_i``.

    Returns ``(C, D, xi_hat)`` with ``xi_hat`` of shape ``(N_eff, n_y)``.
    """
    t_range = np.asarray(t_range, dtype=int)
    if X_hat.shape[1] != t_range.size:
        raise DataError("state sequence and t_range are not aligned")
    psi = basis.trajectory(data.p)[t_range]
    x = X_hat.T
    Phi = np.hstack([kron_rows(psi, x), kron_rows(psi, data.u[t_range])])
    Y = data.y[t_range]
    theta = _lstsq(Phi, Y, "output-equation")
    q, nx, nu, ny = basis.size, x.shape[1], data.n_u, data.n_y
    C = theta[:, :q * nx].reshape(ny, q, nx).transpose(1, 0, 2)
    D = theta[:, q * nx:].reshape(ny, q, nu).transpose(1, 0, 2)
    return C, D, Y - Phi @ theta.T


def estimate_state_matrices(X_hat: np.ndarray, innovations: np.ndarray, data: DataSet,
                            basis: SchedulingBasis, t_range: np.ndarray):
    """Solve ``x_{t+1} = A(p_t) x_t + B(p_t) u_t + K(p_t) xi_t`` for ``A_i, B_i, K_i``."""
    t_range = np.asarray(t_range, dtype=int)
    if t_range.size < 2:
        raise DataError("need at least two state samples")
    if np.any(np.diff(t_range) != 1):
        raise DataError("t_range must be contiguous")
    ts = t_range[:-1]
    psi = basis.trajectory(data.p)[ts]
    x = X_hat.T
    xi = np.asarray(innovations)[:-1]
    Phi = np.hstack([kron_rows(psi, x[:-1]), kron_rows(psi, data.u[ts]), kron_rows(psi, xi)])
    theta = _lstsq(Phi, x[1:], "state-equation")
    q, nx, nu, ny = basis.size, x.shape[1], data.n_u, data.n_y
    a, b = q * nx, q * (nx + nu)
    A = theta[:, :a].reshape(nx, q, nx).transpose(1, 0, 2)
    B = theta[:, a:b].reshape(nx, q, nu).transpose(1, 0, 2)
    K = theta[:, b:].reshape(nx, q, ny).transpose(1, 0, 2)
    return A, B, K


@dataclass(frozen=True)
class IdentifyConfig:
    """Windows, predictor orders and solver settings for :func:`identify`.

    Predictor orders left at ``None`` default to the minimal horizon
    ``f + p_win - 1``.  ``n_x=None`` selects the order from the singular
    value gap.
    """

    window: WindowConfig = WindowConfig(3, 4)
    n_x: Optional[int] = None
    na: Optional[int] = None
    nb: Optional[int] = None
    nc: Optional[int] = None
    ridge: Optional[RidgeConfig] = RidgeConfig()
    gauss_newton: GaussNewtonConfig = GaussNewtonConfig()

    def orders(self) -> tuple[int, int]:
        h = self.window.horizon
        first = self.nb if self.nb is not None else h
        second = self.nc if self.nc is not None else (self.na if self.na is not None else h)
        return first, second


@dataclass
class IdentifiedModel:
    model: LpvSsModel
    state: StateSequence
    diagnostics: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (LpvSidError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def _pre_estimate(data, basis, method, cfg: IdentifyConfig):
    first, second = cfg.orders()
    if method in OPEN_METHODS:
        init = fit_lpv_fir(data, basis, first, cfg.ridge)
        return fit_lpv_max(data, basis, first, second, init, cfg.gauss_newton, cfg.ridge)
    na = cfg.na if cfg.na is not None else cfg.window.horizon
    return fit_lpv_arx(data, basis, na, first, cfg.ridge)


DETERMINISTIC_RANK_TOL = 1e-10


def realize(method: str, mats, hankel, n_x: int, f: int, n_y: int) -> StateSequence:
    """State realization for ``method``.

    CCA methods fall back to range-restricted output whitening when the
    corrected future is exactly rank deficient (noiseless data); the
    returned state then carries ``factors['deterministic'] = True``.
    """
    if method in ("cca-ol", "ssarx"):
        try:
            return cca_state(mats, n_x, f, n_y)
        except PersistencyError as exc:
            if "Y_corr" not in str(exc):
                raise
            st = cca_state(mats, n_x, f, n_y, y_rank_tol=DETERMINISTIC_RANK_TOL)
            st.factors["deterministic"] = True
            return st
    return unified_state(hankel.H0, mats.Z_past, mats.Y_corr, _WEIGHTING[method], n_x)


def identify(data: DataSet, basis: SchedulingBasis, method: str,
             cfg: IdentifyConfig = IdentifyConfig(), pre=None) -> IdentifiedModel:
    """Run pre-estimation, data-equation, realization and LS recovery.

    ``pre`` may carry an existing pre-estimate (predictor coefficients) so
    that several realizations share it.  Errors are raised as
    :class:`StageError` naming the failing stage.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if data.n_p != basis.n_p:
        raise StageError("input", DataError("scheduling dimension does not match the basis"))
    win = cfg.window
    if data.N < win.p_win + win.f + 1:
        raise StageError("input", DataError(
            f"N={data.N} too short for windows f={win.f}, p_win={win.p_win}"))
    _stage("input", win.check_cap, basis.n_psi)
    mode = "open" if method in OPEN_METHODS else "closed"
    if pre is None:
        pre = _stage("pre-estimation", _pre_estimate, data, basis, method, cfg)
    hankel = _stage("pre-estimation", markov_to_hankel, pre, win)
    xi = pre.residuals if mode == "open" else None
    mats = _stage("data-equation", corrected_future, data, hankel, win, mode, basis, xi)

    def _order():
        if cfg.n_x is not None:
            return cfg.n_x, None
        spectrum = realize(method, mats, hankel, 0, win.f, data.n_y).singular_values
        choice = select_order(spectrum)
        return choice.n_x, choice

    n_x, choice = _stage("realization", _order)
    if n_x < 1:
        raise StageError("realization", OrderError("n_x must be >= 1"))
    state = _stage("realization", realize, method, mats, hankel, n_x, win.f, data.n_y)

    def _ss():
        C, D, xi_hat = estimate_output_matrices(state.X_hat, data, basis, mats.t_range)
        A, B, K = estimate_state_matrices(state.X_hat, xi_hat, data, basis, mats.t_range)
        Xi2 = np.atleast_2d(np.cov(xi_hat.T, bias=True))
        w, V = np.linalg.eigh(0.5 * (Xi2 + Xi2.T))
        w = np.maximum(w, 1e-12 * max(w.max(), 1e-300) + 1e-300)
        Xi2 = (V * w) @ V.T
        return LpvSsModel(A=A, B=B, C=C, D=D, K=K, Xi2=Xi2, basis=basis), xi_hat

    model, xi_hat = _stage("ss-estimation", _ss)
    diag = {
        "method": method,
        "f": win.f, "p_win": win.p_win, "n_x": n_x,
        "singular_values": state.singular_values.tolist(),
        "log_likelihood": state.log_likelihood,
        "deterministic_whitening": bool(state.factors.get("deterministic", False)),
        "N_eff": int(mats.t_range.size),
        "pre_estimation": {k: v for k, v in pre.info.items() if k != "objective"},
    }
    if choice is not None:
        diag["order_selection"] = {"ratio": choice.ratio, "low_confidence": choice.low_confidence}
    return IdentifiedModel(model=model, state=state, diagnostics=diag)


def pre_estimate(data: DataSet, basis: SchedulingBasis, method: str,
                 cfg: IdentifyConfig = IdentifyConfig()):
    """Stand-alone pre-estimation (shared by several realizations)."""
    return _stage("pre-estimation", _pre_estimate, data, basis, method, cfg)


def match_eigenvalues(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance between optimally paired eigenvalue sets."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size != b.size:
        return np.inf
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


def model_distance(m1: LpvSsModel, m2: LpvSsModel, validation: DataSet) -> dict:
    """Similarity-invariant comparison of two models on shared validation data.

    ``bfr_sim`` compares noiseless simulations, ``bfr_pred`` one-step
    predictions on ``validation.y`` (``m1`` is the reference in both).
    """
    from .simulation import bfr, one_step_predictor, simulate

    y1 = simulate(m1, validation.u, validation.p).y
    y2 = simulate(m2, validation.u, validation.p).y
    p1 = one_step_predictor(m1, validation)
    p2 = one_step_predictor(m2, validation)
    out = {"bfr_sim": bfr(y1, y2), "bfr_pred": bfr(p1, p2)}
    for i in (0, 1):
        if i < m1.basis.size and i < m2.basis.size:
            e1, e2 = np.linalg.eigvals(m1.A[i]), np.linalg.eigvals(m2.A[i])
            out[f"eig_A{i}"] = (e1, e2)
            out[f"eig_A{i}_distance"] = match_eigenvalues(e1, e2)
    return out
