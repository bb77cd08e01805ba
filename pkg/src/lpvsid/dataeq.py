"""Kronecker-structured data equations for LPV innovation-form models.

Conventions (time-major data, 0-based time):

* Open loop uses the basis vector ``psi_t`` (length ``q``) everywhere and the
  past signal ``z = [u; xi]``.  Closed loop uses ``mu_t`` (length ``m``) for
  the closed-loop transition and input matrices, ``psi_t`` for ``C`` and
  ``K``, and ``z = [u; y]``.
* The past regressor of lag ``k`` (``1 <= k <= p_win``) at instant ``t`` is::

      open:    psi_{t-1} (x) ... (x) psi_{t-k} (x) u_{t-k},  same with xi_{t-k}
      closed:  mu_{t-1} (x) ... (x) mu_{t-k} (x) u_{t-k}
               mu_{t-1} (x) ... (x) mu_{t-k+1} (x) psi_{t-k} (x) y_{t-k}

  stacked lag by lag with the input block first.
* Row block ``i`` (``0 <= i < f``) of the extended observability matrix is
  weighted by ``psi_t (x) ... (x) psi_{t+i}`` (open) or
  ``mu_t (x) ... (x) mu_{t+i-1} (x) psi_{t+i}`` (closed).  The first
  ``n_y`` rows of each block carry the all-zero multi-index (``O^0``); the
  remaining rows form ``O^*``.
* One-step predictor coefficients are stored per lag with the output-matrix
  index outermost and the oldest scheduling index innermost, i.e. in the
  order of the regressor ``psi_t (x) w_{t-1} (x) ... (x) z_{t-k}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DataSet, LpvSsModel, SchedulingBasis, closed_loop_coeffs, extend_psi
from .errors import DataError, DimensionError, HorizonError

MODES = ("open", "closed")
MAX_F = 4
MAX_P = 6


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True)
class WindowConfig:
    """Future window ``f`` and past window ``p_win``."""

    f: int = 3
    p_win: int = 4

    def __post_init__(self):
        if int(self.f) < 1 or int(self.p_win) < 1:
            raise HorizonError(f"windows must be >= 1, got f={self.f}, p_win={self.p_win}")

    def check_cap(self, n_psi: int, max_f: int = MAX_F, max_p: int = MAX_P):
        """Fail fast for windows whose Kronecker expansions explode."""
        if n_psi <= 3 and (self.f > max_f or self.p_win > max_p):
            raise HorizonError(
                f"windows f={self.f}, p_win={self.p_win} exceed the cap f<={max_f}, p_win<={max_p}; "
                "Kronecker regressors grow geometrically with the window length")

    @property
    def horizon(self) -> int:
        """Predictor horizon needed to fill the data equation."""
        return self.f + self.p_win - 1


def kron_rows(*mats: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product; the first factor is outermost."""
    out = np.asarray(mats[0], dtype=float)
    for b in mats[1:]:
        out = (out[:, :, None] * b[:, None, :]).reshape(out.shape[0], -1)
    return out


def schedule(basis: SchedulingBasis, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis and extended-basis trajectories ``(psi, mu)`` for ``(N, n_p)`` data."""
    psi = basis.trajectory(p)
    return psi, extend_psi(psi)


# ---------------------------------------------------------------------------
# extended observability / reachability
# ---------------------------------------------------------------------------

def _obs_blocks(C: np.ndarray, Atr: np.ndarray, f: int) -> list[np.ndarray]:
    """Row blocks ``O_1 .. O_f`` with ``O_k = [O_{k-1} A_0; O_{k-1} A_1; ...]``."""
    ny, nx = C.shape[1], C.shape[2]
    blocks = [C.reshape(-1, nx)]
    for _ in range(1, f):
        prev = blocks[-1]
        blocks.append(np.concatenate([prev @ Ai for Ai in Atr], axis=0))
    return blocks


def build_extended_observability(model: LpvSsModel, f: int, variant: str = "open",
                                 mode: str = "open") -> np.ndarray:
    """Extended observability matrix.

    Parameters
    ----------
    variant : {'open', 'closed', 'zero_only', 'star'}
        ``'open'``/``'closed'`` give the full Kronecker matrix ``O_f``.
        ``'zero_only'`` gives ``[C0; C0 F0; ...; C0 F0^{f-1}]`` with
        ``F0 = A0`` (``mode='open'``) or ``A0 - K0 C0`` (``mode='closed'``).
        ``'star'`` gives ``O_f`` with the zero-multi-index rows removed, so
        that ``N_{t,f} O_f = O^0_f + N^*_{t,f} O^*_f``.
    """
    if f < 1:
        raise HorizonError("f must be >= 1")
    if variant in MODES:
        mode = variant
        variant = "full"
    _check_mode(mode)
    Atr = model.A if mode == "open" else closed_loop_coeffs(model)[0]
    ny = model.n_y
    if variant == "zero_only":
        rows, cur = [], model.C[0]
        for _ in range(f):
            rows.append(cur)
            cur = cur @ Atr[0]
        return np.concatenate(rows, axis=0)
    blocks = _obs_blocks(model.C, Atr, f)
    if variant == "full":
        return np.concatenate(blocks, axis=0)
    if variant == "star":
        return np.concatenate([b[ny:] for b in blocks], axis=0)
    raise ValueError(f"unknown variant {variant!r}")


def build_extended_reachability(model: LpvSsModel, p_win: int, mode: str = "open") -> np.ndarray:
    """Extended reachability matrix, lag blocks ordered ``[u-part, z-part]``.

    Open loop: ``R_1 = [B_0..B_n | K_0..K_n]`` and
    ``R_k = [A_0 R_{k-1}, ..., A_n R_{k-1}]``.  Closed loop: the input part
    starts from the extended ``B - K D`` coefficients, the output part from
    ``K_0..K_n`` and both propagate through the extended ``A - K C``
    coefficients.
    """
    if p_win < 1:
        raise HorizonError("p_win must be >= 1")
    _check_mode(mode)
    if mode == "open":
        Atr, Bu = model.A, model.B
    else:
        Atr, Bu = closed_loop_coeffs(model)
    ru = np.concatenate(list(Bu), axis=1)
    rz = np.concatenate(list(model.K), axis=1)
    cols = [ru, rz]
    for _ in range(1, p_win):
        ru = np.concatenate([Ai @ ru for Ai in Atr], axis=1)
        rz = np.concatenate([Ai @ rz for Ai in Atr], axis=1)
        cols += [ru, rz]
    return np.concatenate(cols, axis=1)


def n_past_rows(q: int, m: int, n_u: int, n_z: int, p_win: int, mode: str) -> int:
    if mode == "open":
        return (n_u + n_z) * sum(q ** l for l in range(1, p_win + 1))
    return sum(n_u * m ** l + n_z * q * m ** (l - 1) for l in range(1, p_win + 1))


# ---------------------------------------------------------------------------
# Kronecker regressors
# ---------------------------------------------------------------------------

def past_regressor_matrix(psi: np.ndarray, mu: np.ndarray, u: np.ndarray, z: np.ndarray,
                          ts: np.ndarray, p_win: int, mode: str) -> np.ndarray:
    """Past regressors ``M_{t,p} z_past`` as columns for the instants ``ts``."""
    _check_mode(mode)
    ts = np.asarray(ts, dtype=int)
    if ts.size and ts.min() - p_win < 0:
        raise DataError(f"instant {ts.min()} has fewer than p_win={p_win} past samples")
    w = mu if mode == "closed" else psi
    blocks = []
    prefix = np.ones((ts.size, 1))
    for k in range(1, p_win + 1):
        s = ts - k
        if mode == "open":
            prefix = kron_rows(prefix, psi[s])
            blocks += [kron_rows(prefix, u[s]), kron_rows(prefix, z[s])]
        else:
            blocks.append(kron_rows(prefix, w[s], u[s]))
            blocks.append(kron_rows(prefix, psi[s], z[s]))
            prefix = kron_rows(prefix, w[s])
    return np.concatenate(blocks, axis=1).T


def build_past_regressor(data: DataSet, basis: SchedulingBasis, t: int, p_win: int,
                         mode: str = "open", xi: Optional[np.ndarray] = None) -> np.ndarray:
    """Single past regressor column at instant ``t`` (0-based).

    Open loop uses ``xi`` (estimated innovations) or ``data.xi``; closed
    loop uses the measured outputs.
    """
    _check_mode(mode)
    if t - p_win < 0 or t > data.N:
        raise DataError(f"instant {t} out of range for p_win={p_win}, N={data.N}")
    psi, mu = schedule(basis, data.p)
    z = _second_channel(data, mode, xi)
    return past_regressor_matrix(psi, mu, data.u, z, np.array([t]), p_win, mode)[:, 0]


def _second_channel(data: DataSet, mode: str, xi: Optional[np.ndarray]) -> np.ndarray:
    if mode == "closed":
        return data.y
    if xi is None:
        xi = data.xi
    if xi is None:
        raise DataError("open-loop regressors need innovation estimates")
    xi = np.asarray(xi, dtype=float).reshape(data.N, -1)
    return xi


def past_scheduling_matrix(psi: np.ndarray, mu: np.ndarray, t: int, p_win: int,
                           n_u: int, n_z: int, mode: str) -> np.ndarray:
    """Explicit block-diagonal ``M_{t,p}`` acting on ``[z_{t-1}; ...; z_{t-p}]``.

    Each lag's raw sample is ordered ``[u_{t-k}; z_{t-k}]``.
    """
    _check_mode(mode)
    blocks = []
    prefix = np.ones(1)
    for k in range(1, p_win + 1):
        s = t - k
        if mode == "open":
            prefix = np.kron(prefix, psi[s])
            wu = wz = prefix
        else:
            wz = np.kron(prefix, psi[s])
            prefix = np.kron(prefix, mu[s])
            wu = prefix
        blocks.append(np.kron(wu[:, None], np.eye(n_u)))
        blocks.append(np.kron(wz[:, None], np.eye(n_z)))
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    M = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        M[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return M


def observability_weights(psi: np.ndarray, mu: np.ndarray, ts: np.ndarray, i: int,
                          mode: str) -> np.ndarray:
    """Scheduling weights of observability row block ``i``, shape ``(len(ts), size)``."""
    ts = np.asarray(ts, dtype=int)
    w = mu if mode == "closed" else psi
    out = np.ones((ts.size, 1))
    for j in range(i):
        out = kron_rows(out, w[ts + j])
    return kron_rows(out, psi[ts + i])


def observability_scheduling_matrix(psi: np.ndarray, mu: np.ndarray, t: int, f: int,
                                    n_y: int, mode: str, star: bool = False) -> np.ndarray:
    """Explicit block-diagonal ``N_{t,f}`` (or ``N^*_{t,f}`` when ``star``)."""
    rows = []
    for i in range(f):
        w = observability_weights(psi, mu, np.array([t]), i, mode)[0]
        if star:
            w = w[1:]
        rows.append(np.kron(w[None, :], np.eye(n_y)))
    out = np.zeros((n_y * f, sum(r.shape[1] for r in rows)))
    c = 0
    for i, r in enumerate(rows):
        out[i * n_y:(i + 1) * n_y, c:c + r.shape[1]] = r
        c += r.shape[1]
    return out


def predictor_weights(psi: np.ndarray, mu: np.ndarray, ts: np.ndarray, k: int, mode: str,
                      channel: str) -> np.ndarray:
    """Scheduling weight of predictor lag ``k`` for ``channel`` in {'u', 'z'}.

    Open: ``psi_t (x) ... (x) psi_{t-k}``.  Closed, input channel:
    ``psi_t (x) mu_{t-1} (x) ... (x) mu_{t-k}``; output channel:
    ``psi_t (x) mu_{t-1} (x) ... (x) mu_{t-k+1} (x) psi_{t-k}``.
    """
    ts = np.asarray(ts, dtype=int)
    out = psi[ts]
    if mode == "open":
        for j in range(1, k + 1):
            out = kron_rows(out, psi[ts - j])
        return out
    if channel == "u":
        for j in range(1, k + 1):
            out = kron_rows(out, mu[ts - j])
        return out
    for j in range(1, k):
        out = kron_rows(out, mu[ts - j])
    return kron_rows(out, psi[ts - k])


def predictor_regressors(psi: np.ndarray, mu: np.ndarray, u: np.ndarray, z: Optional[np.ndarray],
                         ts: np.ndarray, nb: int, nc: int, mode: str,
                         u_lags=None, z_lags=None) -> tuple[list, list]:
    """Row-major predictor regressor blocks for the instants ``ts``.

    Returns ``(u_blocks, z_blocks)``; ``u_blocks[k]`` holds lag ``k`` for
    ``k = 0..nb`` and ``z_blocks[k-1]`` holds lag ``k`` for ``k = 1..nc``.
    """
    ts = np.asarray(ts, dtype=int)
    u_lags = range(nb + 1) if u_lags is None else u_lags
    z_lags = range(1, nc + 1) if z_lags is None else z_lags
    if mode == "open":
        # shared scheduling prefix for both channels
        need = max(list(u_lags) + list(z_lags) + [0])
        pref = [psi[ts]]
        for k in range(1, need + 1):
            pref.append(kron_rows(pref[-1], psi[ts - k]))
        ub = [kron_rows(pref[k], u[ts - k]) for k in u_lags]
        zb = [kron_rows(pref[k], z[ts - k]) for k in z_lags] if z is not None else []
        return ub, zb
    ub = [kron_rows(predictor_weights(psi, mu, ts, k, mode, "u"), u[ts - k]) for k in u_lags]
    zb = ([kron_rows(predictor_weights(psi, mu, ts, k, mode, "z"), z[ts - k]) for k in z_lags]
          if z is not None else [])
    return ub, zb


# ---------------------------------------------------------------------------
# predictor coefficients and Hankel arrangement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictorCoefficients:
    """Sub-Markov coefficients of the one-step predictor.

    ``theta_u[k]`` (``k = 0..nb``) multiplies the lag-``k`` input regressor
    and ``theta_z[k - 1]`` (``k = 1..nc``) the lag-``k`` innovation (open) or
    output (closed) regressor; see :func:`predictor_weights`.
    """

    mode: str
    q: int
    n_u: int
    n_y: int
    theta_u: tuple
    theta_z: tuple
    residuals: Optional[np.ndarray] = field(default=None, repr=False)
    info: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        n = self.q - 1
        return n * (n + 3) // 2 + 1

    @property
    def nb(self) -> int:
        return len(self.theta_u) - 1

    @property
    def nc(self) -> int:
        return len(self.theta_z)

    @property
    def horizon(self) -> int:
        return min(self.nb, self.nc)

    def axes(self, channel: str, k: int) -> tuple:
        """Tensor shape of one coefficient block (output axis first)."""
        q, m = self.q, self.m
        nz = self.n_u if channel == "u" else self.n_y
        if self.mode == "open":
            return (self.n_y,) + (q,) * (k + 1) + (nz,)
        if channel == "u":
            return (self.n_y, q) + (m,) * k + (nz,)
        return (self.n_y, q) + (m,) * (k - 1) + (q, nz)

    def block(self, channel: str, k: int) -> np.ndarray:
        if channel == "u":
            return self.theta_u[k]
        if k == 0:
            return np.zeros((self.n_y, self.q * self.n_y))
        return self.theta_z[k - 1]

    def matrix(self) -> np.ndarray:
        return np.concatenate(list(self.theta_u) + list(self.theta_z), axis=1)


def block_sizes(mode: str, q: int, n_u: int, n_y: int, nb: int, nc: int) -> tuple[list, list]:
    m = (q - 1) * (q + 2) // 2 + 1
    if mode == "open":
        us = [q ** (k + 1) * n_u for k in range(nb + 1)]
        zs = [q ** (k + 1) * n_y for k in range(1, nc + 1)]
    else:
        us = [q * m ** k * n_u for k in range(nb + 1)]
        zs = [q * m ** (k - 1) * q * n_y for k in range(1, nc + 1)]
    return us, zs


def split_theta(theta: np.ndarray, mode: str, q: int, n_u: int, n_y: int, nb: int,
                nc: int) -> tuple[tuple, tuple]:
    us, zs = block_sizes(mode, q, n_u, n_y, nb, nc)
    cuts = np.cumsum(us + zs)[:-1]
    parts = np.split(theta, cuts, axis=1)
    return tuple(parts[:nb + 1]), tuple(parts[nb + 1:])


def true_predictor_coeffs(model: LpvSsModel, nb: int, nc: Optional[int] = None,
                          mode: str = "open") -> PredictorCoefficients:
    """Exact predictor coefficients of ``model`` up to lag ``nb`` / ``nc``."""
    _check_mode(mode)
    nc = nb if nc is None else nc
    q, ny, nx = model.basis.size, model.n_y, model.n_x
    if mode == "open":
        Atr, Bu = model.A, model.B
    else:
        Atr, Bu = closed_loop_coeffs(model)
    P = model.C.copy()                      # (count, ny, nx)
    theta_u = [np.transpose(model.D, (1, 0, 2)).reshape(ny, -1)]
    theta_z = []
    for k in range(1, max(nb, nc) + 1):
        if k <= nb:
            T = np.einsum("aij,bjk->iabk", P, Bu)
            theta_u.append(T.reshape(ny, -1))
        if k <= nc:
            T = np.einsum("aij,bjk->iabk", P, model.K)
            theta_z.append(T.reshape(ny, -1))
        P = np.einsum("aij,bjk->abik", P, Atr).reshape(-1, ny, nx)
    return PredictorCoefficients(mode, q, model.n_u, ny, tuple(theta_u), tuple(theta_z))


@dataclass(frozen=True)
class HankelEstimate:
    """Sub-Markov coefficients arranged for the data equation.

    ``H0`` realizes ``O^0_f R_p`` (rows ``n_y f``); ``Hstar[i]`` realizes row
    block ``i`` of ``O^*_f R_p``; ``L_u[d]`` / ``L_z[d]`` are the lag-``d``
    Toeplitz coefficient blocks (``L_z[0]`` is zero).
    """

    mode: str
    f: int
    p_win: int
    q: int
    n_u: int
    n_y: int
    H0: np.ndarray
    Hstar: tuple
    L_u: tuple
    L_z: tuple

    @property
    def m(self) -> int:
        n = self.q - 1
        return n * (n + 3) // 2 + 1

    def full(self) -> np.ndarray:
        """``O_f R_p`` with rows in the observability ordering."""
        ny = self.n_y
        return np.concatenate([np.vstack([self.H0[i * ny:(i + 1) * ny], self.Hstar[i]])
                               for i in range(self.f)], axis=0)


# ---------------------------------------------------------------------------
# Toeplitz correction and corrected future
# ---------------------------------------------------------------------------

def toeplitz_correction(hankel: HankelEstimate, psi: np.ndarray, mu: np.ndarray, u: np.ndarray,
                        z: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """``(L_f <> p)_t z^f_t`` for each instant in ``ts``; shape ``(n_y f, len(ts))``."""
    ts = np.asarray(ts, dtype=int)
    ny = hankel.n_y
    out = np.zeros((ny * hankel.f, ts.size))
    for i in range(hankel.f):
        s = ts + i
        ub, zb = predictor_regressors(psi, mu, u, z, s, i, i, hankel.mode)
        acc = np.zeros((s.size, ny))
        for d, reg in enumerate(ub):
            acc += reg @ hankel.L_u[d].T
        for d, reg in enumerate(zb, start=1):
            acc += reg @ hankel.L_z[d].T
        out[i * ny:(i + 1) * ny] = acc.T
    return out


def build_toeplitz_correction(hankel: HankelEstimate, psi_window: np.ndarray, u_future: np.ndarray,
                              z_future: np.ndarray) -> np.ndarray:
    """Toeplitz term for one window ``t..t+f-1`` (rows of the given arrays)."""
    psi_window = np.atleast_2d(psi_window)
    if psi_window.shape[0] < hankel.f or len(u_future) < hankel.f or len(z_future) < hankel.f:
        raise HorizonError(f"windows must cover f={hankel.f} samples")
    if len(hankel.L_u) < hankel.f:
        raise HorizonError("missing Toeplitz blocks")
    mu = extend_psi(psi_window)
    return toeplitz_correction(hankel, psi_window, mu, np.atleast_2d(u_future),
                               np.atleast_2d(z_future), np.array([0]))[:, 0]


def star_correction(hankel: HankelEstimate, psi: np.ndarray, mu: np.ndarray, Z: np.ndarray,
                    ts: np.ndarray) -> np.ndarray:
    """``N^*_{t,f} O^*_f R_p M_{t,p} z_past`` for each instant."""
    ts = np.asarray(ts, dtype=int)
    ny = hankel.n_y
    out = np.zeros((ny * hankel.f, ts.size))
    for i in range(hankel.f):
        w = observability_weights(psi, mu, ts, i, hankel.mode)[:, 1:]
        HZ = (hankel.Hstar[i] @ Z).reshape(w.shape[1], ny, ts.size)
        out[i * ny:(i + 1) * ny] = np.einsum("tr,ryt->yt", w, HZ)
    return out


@dataclass(frozen=True)
class StackedDataMatrices:
    """Column-aligned past regressors and corrected future outputs."""

    Z_past: np.ndarray
    Y_corr: np.ndarray
    t_range: np.ndarray
    mode: str

    @property
    def N_eff(self) -> int:
        return self.Z_past.shape[1]


def usable_instants(N: int, cfg: WindowConfig) -> np.ndarray:
    """0-based instants with a full past and future window."""
    if N < cfg.p_win + cfg.f + 1:
        raise DataError(f"N={N} too short for windows f={cfg.f}, p_win={cfg.p_win}")
    return np.arange(cfg.p_win, N - cfg.f + 1)


def corrected_future(data: DataSet, hankel: HankelEstimate, cfg: WindowConfig, mode: str,
                     basis: SchedulingBasis, xi: Optional[np.ndarray] = None) -> StackedDataMatrices:
    """Stack past regressors and corrected future outputs.

    Column ``t`` of ``Y_corr`` is ``y^f_t - (L_f <> p)_t z^f_t - N^*_{t,f}
    O^*_f R_p M_{t,p} z_past``; ``z`` uses ``xi`` (open loop, defaults to
    ``data.xi``) or the measured outputs (closed loop).
    """
    _check_mode(mode)
    if hankel.mode != mode or hankel.f != cfg.f or hankel.p_win != cfg.p_win:
        raise HorizonError("Hankel estimate does not match the requested windows/mode")
    ts = usable_instants(data.N, cfg)
    psi, mu = schedule(basis, data.p)
    z = _second_channel(data, mode, xi)
    Z = past_regressor_matrix(psi, mu, data.u, z, ts, cfg.p_win, mode)
    Yf = future_stack(data.y, ts, cfg.f)
    Yc = Yf - toeplitz_correction(hankel, psi, mu, data.u, z, ts) - star_correction(hankel, psi, mu, Z, ts)
    return StackedDataMatrices(Z_past=Z, Y_corr=Yc, t_range=ts, mode=mode)


def future_stack(y: np.ndarray, ts: np.ndarray, f: int) -> np.ndarray:
    """``[y_t; y_{t+1}; ...; y_{t+f-1}]`` columns."""
    return np.concatenate([y[ts + i].T for i in range(f)], axis=0)


# ---------------------------------------------------------------------------
# time-varying reference constructions and the brute-force oracle
# ---------------------------------------------------------------------------

def _frozen_mats(model: LpvSsModel, psi_t: np.ndarray, mode: str):
    """``(F, Gu, Gz)`` of the state recursion at one instant."""
    A, B, C, D, K = (model.at(n, psi_t) for n in ("A", "B", "C", "D", "K"))
    if mode == "open":
        return A, B, K
    return A - K @ C, B - K @ D, K


def tv_observability(model: LpvSsModel, psi: np.ndarray, t: int, f: int, mode: str) -> np.ndarray:
    """Time-varying observability ``[C(t); C(t+1) F(t); ...]`` by recursion."""
    rows, Phi = [], np.eye(model.n_x)
    for i in range(f):
        rows.append(model.at("C", psi[t + i]) @ Phi)
        Phi = _frozen_mats(model, psi[t + i], mode)[0] @ Phi
    return np.concatenate(rows, axis=0)


def tv_reachability(model: LpvSsModel, psi: np.ndarray, t: int, p_win: int, mode: str) -> np.ndarray:
    """Time-varying reachability acting on ``[u_{t-1}; z_{t-1}; u_{t-2}; ...]``."""
    cols, Phi = [], np.eye(model.n_x)
    for k in range(1, p_win + 1):
        F, Gu, Gz = _frozen_mats(model, psi[t - k], mode)
        cols += [Phi @ Gu, Phi @ Gz]
        Phi = Phi @ F
    return np.concatenate(cols, axis=1)


def tv_transition(model: LpvSsModel, psi: np.ndarray, t: int, p_win: int, mode: str) -> np.ndarray:
    """``F(t-1) F(t-2) ... F(t-p)``."""
    Phi = np.eye(model.n_x)
    for k in range(1, p_win + 1):
        Phi = Phi @ _frozen_mats(model, psi[t - k], mode)[0]
    return Phi


def tv_toeplitz(model: LpvSsModel, psi: np.ndarray, t: int, f: int, mode: str) -> np.ndarray:
    """Explicit time-varying Toeplitz acting on ``[u_t; z_t; ...; u_{t+f-1}; z_{t+f-1}]``."""
    ny, nu, nx = model.n_y, model.n_u, model.n_x
    nz = ny
    L = np.zeros((ny * f, (nu + nz) * f))
    for i in range(f):
        L[i * ny:(i + 1) * ny, i * (nu + nz):i * (nu + nz) + nu] = model.at("D", psi[t + i])
        Ci = model.at("C", psi[t + i])
        Phi = np.eye(nx)
        for j in range(i - 1, -1, -1):
            F, Gu, Gz = _frozen_mats(model, psi[t + j], mode)
            c0 = j * (nu + nz)
            L[i * ny:(i + 1) * ny, c0:c0 + nu] = Ci @ Phi @ Gu
            L[i * ny:(i + 1) * ny, c0 + nu:c0 + nu + nz] = Ci @ Phi @ Gz
            Phi = Phi @ F
    return L


def oracle_evaluate(model: LpvSsModel, data: DataSet, cfg: WindowConfig, mode: str = "open",
                    x0: Optional[np.ndarray] = None) -> dict:
    """Brute-force state recursion for cross-checking the data equations.

    Returns a dict with ``Yf`` (stacked future outputs at the usable
    instants), ``t_range``, ``x`` (full state trajectory, ``N + 1`` rows) and
    ``y`` (recomputed outputs).  Open loop propagates with the innovations,
    closed loop with the predictor form driven by the measured outputs.
    """
    _check_mode(mode)
    if data.xi is None:
        raise DataError("oracle evaluation needs the true innovations")
    psi = model.basis.trajectory(data.p)
    x = np.zeros((data.N + 1, model.n_x))
    if x0 is not None:
        x[0] = x0
    y = np.zeros((data.N, model.n_y))
    for t in range(data.N):
        A, B, C, D, K = (model.at(n, psi[t]) for n in ("A", "B", "C", "D", "K"))
        y[t] = C @ x[t] + D @ data.u[t] + data.xi[t]
        if mode == "open":
            x[t + 1] = A @ x[t] + B @ data.u[t] + K @ data.xi[t]
        else:
            x[t + 1] = (A - K @ C) @ x[t] + (B - K @ D) @ data.u[t] + K @ data.y[t]
    ts = usable_instants(data.N, cfg)
    return {"Yf": future_stack(y, ts, cfg.f), "t_range": ts, "x": x, "y": y}


def initial_condition_term(model: LpvSsModel, data: DataSet, cfg: WindowConfig, mode: str,
                           x: np.ndarray) -> np.ndarray:
    """``N_{t,f} O_f F(t-1)...F(t-p) x_{t-p}`` columns for the usable instants."""
    psi = model.basis.trajectory(data.p)
    mu = extend_psi(psi)
    ts = usable_instants(data.N, cfg)
    Of = build_extended_observability(model, cfg.f, mode)
    out = np.zeros((model.n_y * cfg.f, ts.size))
    for c, t in enumerate(ts):
        Nt = observability_scheduling_matrix(psi, mu, t, cfg.f, model.n_y, mode)
        out[:, c] = Nt @ Of @ tv_transition(model, psi, t, cfg.p_win, mode) @ x[t - cfg.p_win]
    return out
