"""Pre-estimation of predictor sub-Markov coefficients.

Closed-loop methods fit an LPV-ARX predictor by ridge regression; open-loop
methods fit an LPV-MAX predictor by pseudo-linear regression started from an
LPV-FIR fit.  :func:`markov_to_hankel` arranges the coefficients into the
blocks used by the data equations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DataSet, SchedulingBasis, extend_psi
from .dataeq import (HankelEstimate, PredictorCoefficients, WindowConfig, block_sizes,
                     predictor_regressors, predictor_weights, split_theta)
from .errors import DataError, HorizonError, RankDeficiencyError, RegressionSizeError

MAX_REGRESSORS = 6000
MAX_ELEMENTS = 6e7


@dataclass(frozen=True)
class RidgeConfig:
    """Ridge weights scanned by generalized cross validation."""

    lambda_grid: tuple = tuple(np.logspace(-10, 2, 30))
    selection: str = "gcv"

    def __post_init__(self):
        grid = tuple(float(v) for v in np.atleast_1d(self.lambda_grid))
        if not grid or min(grid) <= 0:
            raise ValueError("lambda_grid must be non-empty and strictly positive")
        if self.selection != "gcv":
            raise ValueError("only GCV selection is supported")
        object.__setattr__(self, "lambda_grid", grid)


@dataclass(frozen=True)
class GaussNewtonConfig:
    """Hyper-parameters of the enhanced Gauss-Newton iterations."""

    beta1: float = 1e-4
    gamma: float = 1e-8
    lambda_min: float = 1e-5
    nu: float = 0.01
    alpha_min: float = 1e-3
    epsilon: float = 1e-6
    max_iter: int = 20

    def __post_init__(self):
        for name in ("beta1", "gamma", "lambda_min", "nu", "alpha_min", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")


# ---------------------------------------------------------------------------
# ridge regression with GCV
# ---------------------------------------------------------------------------

def check_regression_size(n_samples: int, n_regressors: int, max_regressors: int = MAX_REGRESSORS):
    """Fail fast when an explicit Kronecker regression cannot fit in memory."""
    if min(n_samples, n_regressors) > max_regressors or n_samples * n_regressors > MAX_ELEMENTS:
        raise RegressionSizeError(
            f"regression with {n_samples} samples and {n_regressors} regressors exceeds the "
            f"explicit-regressor budget ({max_regressors} regressors, {MAX_ELEMENTS:.0e} entries); "
            "reduce the predictor orders (at least f + p_win - 1 are needed), the windows, "
            "or the number of basis functions")


def gcv_score(Phi: np.ndarray, Y: np.ndarray, lam: float) -> float:
    """Generalized cross-validation score ``N * RSS / (N - tr H)^2``."""
    Phi = np.asarray(Phi, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(Phi.shape[0], -1)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    N = Phi.shape[0]
    U, s, _ = np.linalg.svd(Phi, full_matrices=False)
    if lam == 0:
        keep = s > 1e-12 * max(s.max(initial=0.0), 1e-300)
        filt = keep.astype(float)
    else:
        filt = s ** 2 / (s ** 2 + lam)
    UtY = U.T @ Y
    rss = np.sum(Y ** 2) - np.sum((2 * filt - filt ** 2)[:, None] * UtY ** 2)
    rss = max(rss, 0.0)
    dof = N - filt.sum()
    if dof <= 1e-8 * N:
        return np.inf
    return N * rss / dof ** 2


@dataclass
class RidgeResult:
    theta: np.ndarray          # (n_out, d)
    lam: Optional[float]
    scores: Optional[np.ndarray]
    fitted: np.ndarray


def ridge_fit(Phi: np.ndarray, Y: np.ndarray, cfg: Optional[RidgeConfig] = RidgeConfig()) -> RidgeResult:
    """Ridge least squares ``min ||Y - Phi theta^T||^2 + lam ||theta||^2``.

    With ``cfg=None`` plain least squares is solved and a rank-deficient
    regressor raises :class:`RankDeficiencyError`.
    """
    Phi = np.asarray(Phi, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(Phi.shape[0], -1)
    N, d = Phi.shape
    check_regression_size(N, d)
    primal = d <= N
    G = Phi.T @ Phi if primal else Phi @ Phi.T
    s, V = np.linalg.eigh(G)
    s = np.clip(s, 0.0, None)
    smax = s.max(initial=0.0)
    if cfg is None:
        if not primal or smax == 0 or s.min() <= 1e-10 * smax:
            raise RankDeficiencyError(
                "regressor is rank deficient; use a nonzero ridge weight (lambda > 0)")
        grid = (0.0,)
    else:
        grid = cfg.lambda_grid
    b = V.T @ (Phi.T @ Y) if primal else V.T @ Y
    best = None
    scores = []
    for lam in grid:
        if primal:
            theta = V @ (b / (s + lam)[:, None])
            fitted = Phi @ theta
            trace = np.sum(s / (s + lam))
        else:
            coef = V @ (b / (s + lam)[:, None])
            theta = Phi.T @ coef
            fitted = V @ (b * (s / (s + lam))[:, None])
            trace = np.sum(s / (s + lam))
        rss = np.sum((Y - fitted) ** 2)
        dof = N - trace
        score = np.inf if dof <= 1e-8 * N else N * rss / dof ** 2
        scores.append(score)
        if best is None or score < best[0]:
            best = (score, lam, theta, fitted)
    _, lam, theta, fitted = best
    return RidgeResult(theta=theta.T, lam=(lam if cfg is not None else None),
                       scores=np.array(scores) if cfg is not None else None, fitted=fitted)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _padded(data: DataSet, basis: SchedulingBasis, h: int, z: Optional[np.ndarray] = None):
    """Zero-pad signals by ``h`` samples so every lag is defined."""
    psi = basis.trajectory(data.p)
    psi = np.vstack([np.repeat(psi[:1], h, axis=0), psi])
    pad = lambda a: np.vstack([np.zeros((h, a.shape[1])), a])
    return psi, extend_psi(psi), pad(data.u), pad(data.y), (pad(z) if z is not None else None)


def _check_length(data: DataSet, h: int):
    if data.N < h + 1 + 1:
        raise DataError(f"N={data.N} too short for predictor order {h}")


# ---------------------------------------------------------------------------
# LPV-ARX / LPV-FIR
# ---------------------------------------------------------------------------

def fit_lpv_arx(data: DataSet, basis: SchedulingBasis, na: int, nb: int,
                cfg: Optional[RidgeConfig] = RidgeConfig()) -> PredictorCoefficients:
    """Closed-loop one-step predictor with extended scheduling dependence.

    ``y_t = sum_{k=0}^{nb} Theta^u_k (psi_t (x) mu_{t-1} ... (x) u_{t-k})
    + sum_{k=1}^{na} Theta^y_k (psi_t (x) mu_{t-1} ... (x) psi_{t-k} (x) y_{t-k}) + xi_t``.
    Residuals over the full record (zero initial history) are returned in
    ``residuals``.
    """
    if na < 1 or nb < 0:
        raise HorizonError("ARX orders must satisfy na >= 1, nb >= 0")
    h = max(na, nb)
    _check_length(data, h)
    psi, mu, u, y, _ = _padded(data, basis, h)
    us, zs = block_sizes("closed", basis.size, data.n_u, data.n_y, nb, na)
    check_regression_size(data.N - h, sum(us) + sum(zs))
    ts = np.arange(2 * h, data.N + h)
    ub, zb = predictor_regressors(psi, mu, u, y, ts, nb, na, "closed")
    res = ridge_fit(np.hstack(ub + zb), y[ts], cfg)
    theta_u, theta_z = split_theta(res.theta, "closed", basis.size, data.n_u, data.n_y, nb, na)
    # residuals over the whole record
    ta = np.arange(h, data.N + h)
    ub, zb = predictor_regressors(psi, mu, u, y, ta, nb, na, "closed")
    resid = y[ta] - np.hstack(ub + zb) @ res.theta.T
    return PredictorCoefficients("closed", basis.size, data.n_u, data.n_y, theta_u, theta_z,
                                 residuals=resid, info={"lambda": res.lam, "t0": h})


def fit_lpv_fir(data: DataSet, basis: SchedulingBasis, order: int,
                cfg: Optional[RidgeConfig] = RidgeConfig()) -> PredictorCoefficients:
    """Open-loop FIR predictor ``y_t = sum_k Theta^u_k (psi_t (x) ... (x) psi_{t-k} (x) u_{t-k})``."""
    if order < 0:
        raise HorizonError("FIR order must be >= 0")
    h = order
    _check_length(data, h)
    psi, mu, u, y, _ = _padded(data, basis, h)
    us, _ = block_sizes("open", basis.size, data.n_u, data.n_y, order, 0)
    check_regression_size(data.N - h, sum(us))
    ts = np.arange(2 * h, data.N + h)
    ub, _ = predictor_regressors(psi, mu, u, None, ts, order, 0, "open")
    res = ridge_fit(np.hstack(ub), y[ts], cfg)
    theta_u, _ = split_theta(res.theta, "open", basis.size, data.n_u, data.n_y, order, 0)
    ta = np.arange(h, data.N + h)
    ub, _ = predictor_regressors(psi, mu, u, None, ta, order, 0, "open")
    resid = y[ta] - np.hstack(ub) @ res.theta.T
    return PredictorCoefficients("open", basis.size, data.n_u, data.n_y, theta_u, (),
                                 residuals=resid, info={"lambda": res.lam, "t0": h})


# ---------------------------------------------------------------------------
# LPV-MAX by pseudo-linear regression
# ---------------------------------------------------------------------------

class _MaxProblem:
    """Recursive prediction error of the LPV-MAX predictor on padded data."""

    def __init__(self, data: DataSet, basis: SchedulingBasis, nb: int, nc: int):
        self.h = h = max(nb, nc)
        self.nb, self.nc = nb, nc
        self.ny = data.n_y
        self.q = basis.size
        self.psi, self.mu, u, self.y, _ = _padded(data, basis, h)
        self.ta = np.arange(h, data.N + h)           # all real samples
        self.fit = slice(h, None)                    # samples with full history (in ta coordinates)
        ub, _ = predictor_regressors(self.psi, self.mu, u, None, self.ta, nb, 0, "open")
        self.Phi_u = np.hstack(ub)
        self.wz = [predictor_weights(self.psi, self.mu, self.ta, k, "open", "z")
                   for k in range(1, nc + 1)]
        self.du = self.Phi_u.shape[1]

    def innovations(self, theta: np.ndarray) -> np.ndarray:
        """``xi_t = y_t - Phi_u theta_u - sum_k G_k(t) xi_{t-k}``, zero initial history."""
        ny, nc = self.ny, self.nc
        r = self.y[self.ta] - self.Phi_u @ theta[:, :self.du].T
        if nc == 0:
            return r
        G = []
        off = self.du
        for k, w in enumerate(self.wz, start=1):
            size = w.shape[1]
            T = theta[:, off:off + size * ny].reshape(ny, size, ny)
            G.append(np.einsum("tw,iwj->tij", w, T))
            off += size * ny
        G = np.concatenate(G, axis=2)                # (N, ny, nc*ny), lag-major columns
        N = r.shape[0]
        xi = np.zeros((N + nc, ny))
        for t in range(N):
            hist = xi[t:t + nc][::-1].reshape(-1)    # [xi_{t-1}; ...; xi_{t-nc}]
            xi[t + nc] = r[t] - G[t] @ hist
        return xi[nc:]

    def regressor(self, xi: np.ndarray) -> np.ndarray:
        blocks = [self.Phi_u]
        xp = np.vstack([np.zeros((self.nc, self.ny)), xi])
        N = xi.shape[0]
        for k, w in enumerate(self.wz, start=1):
            lagged = xp[self.nc - k:self.nc - k + N]
            blocks.append((w[:, :, None] * lagged[:, None, :]).reshape(N, -1))
        return np.hstack(blocks)

    def objective(self, xi: np.ndarray) -> float:
        e = xi[self.fit]
        return 0.5 * np.sum(e ** 2) / e.shape[0]


def fit_lpv_max(data: DataSet, basis: SchedulingBasis, nb: int, nc: int,
                init: Optional[PredictorCoefficients] = None,
                cfg: GaussNewtonConfig = GaussNewtonConfig(),
                ridge: Optional[RidgeConfig] = RidgeConfig()) -> PredictorCoefficients:
    """Open-loop LPV-MAX predictor by pseudo-linear regression.

    The innovation regressors are refreshed after every accepted step.  Each
    step is a damped, truncated Gauss-Newton direction on the current
    regressor with an Armijo-Goldstein backtracking line search.  ``info``
    records the objective history and a ``converged`` flag; the best iterate
    is returned.
    """
    if nb < 0 or nc < 1:
        raise HorizonError("MAX orders must satisfy nb >= 0, nc >= 1")
    h = max(nb, nc)
    _check_length(data, h)
    us, zs = block_sizes("open", basis.size, data.n_u, data.n_y, nb, nc)
    check_regression_size(data.N - h, sum(us) + sum(zs))
    if init is None:
        init = fit_lpv_fir(data, basis, nb, ridge)
    prob = _MaxProblem(data, basis, nb, nc)
    ny = data.n_y
    theta_u = list(init.theta_u[:nb + 1])
    for k in range(len(theta_u), nb + 1):
        theta_u.append(np.zeros((ny, us[k])))
    theta = np.hstack(theta_u + [np.zeros((ny, s)) for s in zs])

    xi = prob.innovations(theta)
    V = prob.objective(xi)
    history = [V]
    best = (V, theta, xi)
    converged = False
    lam = cfg.lambda_min
    it = 0
    for it in range(1, cfg.max_iter + 1):
        Phi = prob.regressor(xi)[prob.fit]
        e = xi[prob.fit]
        n = e.shape[0]
        g = -(Phi.T @ e) / n                          # pseudo-linear gradient
        gnorm = np.linalg.norm(g)
        if gnorm <= cfg.epsilon:
            converged = True
            break
        s, W = np.linalg.eigh(Phi.T @ Phi / n)
        keep = s > cfg.gamma * s.max()
        s, W = s[keep], W[:, keep]
        Wg = W.T @ g
        accepted = False
        for _ in range(8):
            d = -W @ (Wg / (s + lam)[:, None])
            slope = np.sum(g * d)
            cos = -slope / (gnorm * np.linalg.norm(d) + 1e-300)
            if cos >= cfg.nu:
                break
            lam *= 10.0
        alpha = 1.0
        while alpha >= cfg.alpha_min:
            cand = theta + alpha * d.T
            xi_c = prob.innovations(cand)
            Vc = prob.objective(xi_c)
            if np.isfinite(Vc) and Vc <= V + cfg.beta1 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            lam *= 10.0
            if lam > 1e6:
                break
            continue
        theta, xi, V = cand, xi_c, Vc
        history.append(V)
        lam = max(cfg.lambda_min, lam / 10.0)
        if V < best[0]:
            best = (V, theta, xi)
    V, theta, xi = best
    theta_u, theta_z = split_theta(theta, "open", basis.size, data.n_u, ny, nb, nc)
    info = {"converged": converged, "iterations": it, "objective": history,
            "lambda_fir": init.info.get("lambda"), "t0": h}
    return PredictorCoefficients("open", basis.size, data.n_u, ny, theta_u, theta_z,
                                 residuals=xi, info=info)


# ---------------------------------------------------------------------------
# Hankel arrangement
# ---------------------------------------------------------------------------

def _obs_major(T: np.ndarray, n_obs: int) -> np.ndarray:
    """Move the ``n_obs`` leading index axes (reversed) in front of the output axis."""
    order = list(range(n_obs, 0, -1)) + [0] + list(range(n_obs + 1, T.ndim))
    T = np.transpose(T, order)
    rows = int(np.prod(T.shape[:n_obs + 1]))
    return T.reshape(rows, -1)


def markov_to_hankel(coeffs: PredictorCoefficients, cfg: WindowConfig) -> HankelEstimate:
    """Place predictor coefficients into ``H0``, ``H*`` and the Toeplitz blocks.

    Row block ``i`` and past lag ``l`` use the lag-``(i + l)`` coefficient
    restricted to (``H0``) or excluding (``H*``) the all-zero future index.
    Needs a coefficient horizon of at least ``f + p_win - 1``.
    """
    f, p = cfg.f, cfg.p_win
    if coeffs.nb < f + p - 1 or coeffs.nc < f + p - 1:
        raise HorizonError(
            f"coefficient horizon nb={coeffs.nb}, nc={coeffs.nc} is below f + p_win - 1 = {f + p - 1}")
    ny = coeffs.n_y
    H0_rows, Hstar = [], []
    for i in range(f):
        cols = []
        for l in range(1, p + 1):
            k = i + l
            for ch in ("u", "z"):
                T = coeffs.block(ch, k).reshape(coeffs.axes(ch, k))
                cols.append(_obs_major(T, i + 1))
        full = np.hstack(cols)
        H0_rows.append(full[:ny])
        Hstar.append(full[ny:])
    L_u = tuple(coeffs.theta_u[d] for d in range(f))
    L_z = tuple(coeffs.block("z", d) for d in range(f))
    return HankelEstimate(mode=coeffs.mode, f=f, p_win=p, q=coeffs.q, n_u=coeffs.n_u, n_y=ny,
                          H0=np.vstack(H0_rows), Hstar=tuple(Hstar), L_u=L_u, L_z=L_z)
