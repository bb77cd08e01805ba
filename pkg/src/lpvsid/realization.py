"""State realization: CCA and weighted-SVD (unified) realizations."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataeq import StackedDataMatrices
from .errors import OrderError, PersistencyError

SIGMA_CLAMP = 1.0 - 1e-12
EIG_FLOOR = 1e-12

WEIGHTINGS = ("hk", "n4sid", "pcca", "pbsid", "pssarx")


def _sym_powers(S: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    """``(S^{1/2}, S^{-1/2})`` of a symmetric positive definite matrix."""
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    lmax = lam.max(initial=0.0)
    if lmax <= 0 or lam.min() <= EIG_FLOOR * lmax:
        raise PersistencyError(
            f"covariance of {name} is singular (min eigenvalue {lam.min():.3e}, max {lmax:.3e}); "
            "the data are not persistently exciting")
    r = np.sqrt(lam)
    return (V * r) @ V.T, (V / r) @ V.T


def _fix_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make the largest-magnitude entry of every left singular vector positive."""
    idx = np.argmax(np.abs(U), axis=0)
    sgn = np.sign(U[idx, np.arange(U.shape[1])])
    sgn[sgn == 0] = 1.0
    return U * sgn, V * sgn


@dataclass(frozen=True)
class ConstrainedSvdResult:
    """``S = U_t^T (YZ^T/N) V_t`` with ``U_t^T (YY^T/N) U_t = I`` and ``V_t^T (ZZ^T/N) V_t = I``."""

    U_tilde: np.ndarray
    S_tilde: np.ndarray
    V_tilde: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Syy_sqrt: np.ndarray
    Syy_isqrt: np.ndarray
    Szz_isqrt: np.ndarray
    N: int


@dataclass(frozen=True)
class StateSequence:
    """Realized state trajectory (``n_x x N_eff``) with diagnostics."""

    X_hat: np.ndarray
    singular_values: np.ndarray
    method: str
    log_likelihood: Optional[float] = None
    factors: dict = field(default_factory=dict, repr=False)

    @property
    def n_x(self) -> int:
        return self.X_hat.shape[0]


def _range_powers(S: np.ndarray, rank_tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Square-root factors restricted to the range of a PSD matrix.

    Returns ``(V_r L^{1/2}, V_r L^{-1/2})`` so that whitening drops the
    directions with (numerically) zero variance.
    """
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    keep = lam > rank_tol * lam.max(initial=0.0)
    if not keep.any():
        raise PersistencyError("covariance of Y_corr is zero")
    lam, V = lam[keep], V[:, keep]
    r = np.sqrt(lam)
    return V * r, V / r


def constrained_svd(Y: np.ndarray, Z: np.ndarray, y_rank_tol: Optional[float] = None) -> ConstrainedSvdResult:
    """Canonical correlation decomposition of ``Y`` (rows ``n_y f``) and ``Z``.

    Both sample covariances must be positive definite.  With ``y_rank_tol``
    set, a rank-deficient ``Y`` covariance (deterministic data) is instead
    whitened on its range only; ``U_tilde`` then has fewer columns than rows.
    """
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Y.shape[1] != Z.shape[1]:
        raise ValueError("Y and Z must have the same number of columns")
    N = Y.shape[1]
    Syy = Y @ Y.T / N
    try:
        Syy_s, Syy_i = _sym_powers(Syy, "Y_corr")
    except PersistencyError:
        if y_rank_tol is None:
            raise
        Syy_s, Syy_i = _range_powers(Syy, y_rank_tol)
        Syy_i = Syy_i.T
    _, Szz_i = _sym_powers(Z @ Z.T / N, "Z_past")
    M = Syy_i @ (Y @ Z.T / N) @ Szz_i
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    return ConstrainedSvdResult(U_tilde=Syy_i.T @ U, S_tilde=s, V_tilde=Szz_i @ V, U=U, V=V,
                                Syy_sqrt=Syy_s, Syy_isqrt=Syy_i, Szz_isqrt=Szz_i, N=N)


def loglik_cca(svd: ConstrainedSvdResult, n_x: int, f: int, n_y: int, N: Optional[int] = None) -> float:
    """Negative log-likelihood of the rank-``n_x`` CCA fit."""
    N = svd.N if N is None else N
    s = svd.S_tilde[:n_x]
    if n_x > svd.S_tilde.size:
        raise OrderError(f"n_x={n_x} exceeds the {svd.S_tilde.size} available singular values")
    if svd.Syy_sqrt.shape[0] != svd.Syy_sqrt.shape[1]:
        return -np.inf                 # singular output covariance: likelihood unbounded
    if np.any(s >= SIGMA_CLAMP):
        warnings.warn("canonical correlation at 1 clamped (near-deterministic direction)",
                      RuntimeWarning, stacklevel=2)
        s = np.minimum(s, SIGMA_CLAMP)
    # log|det U_t| of the full square factor equals -log det (YY^T/N)^{1/2}
    _, logdet_sqrt = np.linalg.slogdet(svd.Syy_sqrt)
    return (f * n_y * N / 2) * (np.log(2 * np.pi) + 1) + N * logdet_sqrt \
        + (N / 2) * np.sum(np.log1p(-s ** 2))


def hankel_from_cca(svd: ConstrainedSvdResult, n_x: int) -> np.ndarray:
    """Rank-``n_x`` Hankel estimate ``U_t^+ S Q Q^T V_t^T``."""
    return svd.Syy_sqrt @ svd.U[:, :n_x] @ np.diag(svd.S_tilde[:n_x]) @ svd.V_tilde[:, :n_x].T


def cca_state(matrices: StackedDataMatrices, n_x: int, f: Optional[int] = None,
              n_y: Optional[int] = None, y_rank_tol: Optional[float] = None) -> StateSequence:
    """Maximum-likelihood state ``X = V_t[:, :n_x]^T Z`` with unit sample covariance.

    ``y_rank_tol`` is forwarded to :func:`constrained_svd` (noiseless data).
    """
    svd = constrained_svd(matrices.Y_corr, matrices.Z_past, y_rank_tol)
    if n_x < 0 or n_x > svd.S_tilde.size:
        raise OrderError(f"n_x={n_x} exceeds the available rank {svd.S_tilde.size}")
    X = svd.V_tilde[:, :n_x].T @ matrices.Z_past
    rows = matrices.Y_corr.shape[0]
    if f is None or n_y is None:
        f, n_y = 1, rows
    ll = loglik_cca(svd, n_x, f, n_y)
    return StateSequence(X_hat=X, singular_values=svd.S_tilde, method="cca", log_likelihood=ll,
                         factors={"svd": svd})


def _weights(weighting: str, Y: np.ndarray, Z: np.ndarray):
    N = Z.shape[1]
    rows = Y.shape[0]
    if weighting == "hk":
        return np.eye(rows), np.eye(rows), np.eye(Z.shape[0]), np.eye(Z.shape[0])
    if weighting in ("n4sid", "pbsid"):
        W2, W2i = _sym_powers(Z @ Z.T, "Z_past")
        return np.eye(rows), np.eye(rows), W2, W2i
    if weighting in ("pcca", "pssarx"):
        Wy_s, Wy_i = _sym_powers(Y @ Y.T / N, "Y_corr")
        W2, W2i = _sym_powers(Z @ Z.T / N, "Z_past")
        return Wy_i, Wy_s, W2, W2i
    raise ValueError(f"unknown weighting {weighting!r}; choose from {WEIGHTINGS}")


def unified_state(H0: np.ndarray, Z: np.ndarray, Y: np.ndarray, weighting: str, n_x: int) -> StateSequence:
    """Weighted-SVD realization ``W1 H0 W2 = U S V^T``, ``X = S^{1/2} V_n^T W2^{-1} Z``.

    Weightings: ``'hk'`` (identity), ``'n4sid'``/``'pbsid'``
    (``W2 = (Z Z^T)^{1/2}``), ``'pcca'``/``'pssarx'``
    (``W1 = (Y Y^T/N)^{-1/2}``, ``W2 = (Z Z^T/N)^{1/2}``).
    """
    W1, W1i, W2, W2i = _weights(weighting, Y, Z)
    U, s, Vt = np.linalg.svd(W1 @ H0 @ W2, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    if n_x < 0 or n_x > s.size or (n_x and s[n_x - 1] <= 0):
        raise OrderError(f"n_x={n_x} exceeds the rank of the weighted Hankel matrix")
    sq = np.sqrt(s[:n_x])
    R = (sq[:, None] * V[:, :n_x].T) @ W2i
    O0 = W1i @ (U[:, :n_x] * sq)
    return StateSequence(X_hat=R @ Z, singular_values=s, method=weighting,
                         factors={"O0": O0, "R": R})


def efficient_state(H0: np.ndarray, Z: np.ndarray, n_x: int, W1: Optional[np.ndarray] = None) -> StateSequence:
    """Square-root-free variant: SVD of ``W1 H0 Z`` directly, ``X = S^{1/2} V_n^T``."""
    M = H0 @ Z if W1 is None else W1 @ H0 @ Z
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    if n_x < 0 or n_x > s.size or (n_x and s[n_x - 1] <= 0):
        raise OrderError(f"n_x={n_x} exceeds the rank of H0 Z")
    X = np.sqrt(s[:n_x])[:, None] * V[:, :n_x].T
    return StateSequence(X_hat=X, singular_values=s, method="pbsid-efficient")


@dataclass(frozen=True)
class OrderChoice:
    n_x: int
    ratio: float
    low_confidence: bool


def select_order(singular_values) -> OrderChoice:
    """Largest gap ``s_i / s_{i+1}``; ties go to the smaller order.

    A best ratio of 2 or less flags the choice as low confidence.
    """
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        raise ValueError("empty singular value spectrum")
    if s.size == 1:
        return OrderChoice(1, np.inf, True)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = s[:-1] / s[1:]
    ratio = np.where(np.isnan(ratio), 0.0, ratio)
    i = int(np.argmax(ratio))
    best = float(ratio[i])
    return OrderChoice(i + 1, best, not best > 2.0)
