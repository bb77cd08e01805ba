"""Domain types for affine LPV state-space models in innovation form.

A model is described by coefficient stacks ``A[i], B[i], C[i], D[i], K[i]``
for ``i = 0..n_psi`` so that, e.g., ``A(p) = sum_i A[i] * psi_i(p)`` with
``psi_0 = 1``.  All arrays are stored time-major: a trajectory of ``N``
samples of an ``n``-vector is an ``(N, n)`` array.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, ModelFormatError

MATRIX_NAMES = ("A", "B", "C", "D", "K")
_BOUND_SLACK = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def n_mu(n_psi: int) -> int:
    """Number of non-constant entries of the extended scheduling vector."""
    return n_psi * (n_psi + 3) // 2


def mu_pairs(n_psi: int) -> list[tuple[int, int]]:
    """Product index pairs ``(i, j)``, ``1 <= i <= j <= n_psi``, lexicographic."""
    return [(i, j) for i in range(1, n_psi + 1) for j in range(i, n_psi + 1)]


@dataclass(frozen=True)
class SchedulingBasis:
    """Scheduling basis functions ``psi_1..psi_n`` on a box domain.

    ``funcs`` maps a scheduling point of length ``n_p`` to the
    ``n_psi`` non-constant basis values.  The leading constant
    ``psi_0 = 1`` is added by :meth:`eval`.  Use :meth:`affine` for the
    built-in ``psi_i(p) = p_i`` family.
    """

    n_p: int
    n_psi: int
    bounds: np.ndarray
    funcs: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    family: str = "custom"

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float).reshape(self.n_p, 2)
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise DomainError("scheduling bounds must satisfy lower <= upper")
        object.__setattr__(self, "bounds", _frozen(bounds))
        self._check_bounded()

    @classmethod
    def affine(cls, n_p: int, bounds=None) -> "SchedulingBasis":
        if bounds is None:
            bounds = [[-1.0, 1.0]] * n_p
        return cls(n_p=n_p, n_psi=n_p, bounds=bounds, funcs=_affine_funcs, family="affine")

    @classmethod
    def constant(cls, n_p: int = 1, bounds=None) -> "SchedulingBasis":
        """Basis with only ``psi_0 = 1`` (LTI models)."""
        if bounds is None:
            bounds = [[-1.0, 1.0]] * n_p
        return cls(n_p=n_p, n_psi=0, bounds=bounds, funcs=_no_funcs, family="constant")

    @classmethod
    def from_functions(cls, funcs: Sequence[Callable], n_p: int, bounds) -> "SchedulingBasis":
        """Basis from a list of scalar functions ``f(p) -> float``."""
        funcs = tuple(funcs)

        def evaluate(p):
            return np.array([f(p) for f in funcs], dtype=float)

        return cls(n_p=n_p, n_psi=len(funcs), bounds=bounds, funcs=evaluate)

    @property
    def size(self) -> int:
        return self.n_psi + 1

    def _check_bounded(self, n_samples: int = 256):
        if self.n_psi == 0:
            return
        rng = np.random.default_rng(0)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        pts = lo + (hi - lo) * rng.random((n_samples, self.n_p))
        corners = np.array(np.meshgrid(*self.bounds)).reshape(self.n_p, -1).T
        for pt in np.vstack([pts, corners]):
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                val = np.asarray(self.funcs(pt), dtype=float)
            if val.shape != (self.n_psi,):
                raise DimensionError(
                    f"basis returned shape {val.shape}, expected ({self.n_psi},)")
            if not np.all(np.isfinite(val)):
                raise DomainError(f"basis function is unbounded near p={pt}")

    def check_domain(self, p: np.ndarray):
        p = np.atleast_2d(p)
        if p.shape[1] != self.n_p:
            raise DimensionError(f"scheduling has {p.shape[1]} channels, basis expects {self.n_p}")
        lo = self.bounds[:, 0] - _BOUND_SLACK
        hi = self.bounds[:, 1] + _BOUND_SLACK
        bad = np.any((p < lo) | (p > hi), axis=1)
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise DomainError(f"scheduling sample {idx} = {p[idx]} lies outside the box {self.bounds.tolist()}")

    def eval(self, p) -> np.ndarray:
        """Return ``[1, psi_1(p), ..., psi_n(p)]`` for a single point."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        self.check_domain(p[None, :])
        return np.concatenate([[1.0], np.asarray(self.funcs(p), dtype=float)])

    def trajectory(self, p: np.ndarray) -> np.ndarray:
        """Evaluate the basis along an ``(N, n_p)`` trajectory -> ``(N, n_psi + 1)``."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        self.check_domain(p)
        out = np.ones((p.shape[0], self.size))
        if self.family == "affine":
            out[:, 1:] = p
        elif self.n_psi:
            out[:, 1:] = np.array([self.funcs(pt) for pt in p])
        return out

    def to_dict(self) -> dict:
        if self.family not in ("affine", "constant"):
            raise ModelFormatError("only named basis families can be serialized")
        return {"family": self.family, "n_p": self.n_p, "bounds": self.bounds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SchedulingBasis":
        family = d.get("family")
        if family == "affine":
            return cls.affine(int(d["n_p"]), d.get("bounds"))
        if family == "constant":
            return cls.constant(int(d["n_p"]), d.get("bounds"))
        raise ModelFormatError(f"unknown basis family {family!r}")


def _affine_funcs(p):
    return np.asarray(p, dtype=float)


def _no_funcs(p):
    return np.zeros(0)


def eval_psi(basis: SchedulingBasis, p) -> np.ndarray:
    return basis.eval(p)


def extend_psi(psi: np.ndarray) -> np.ndarray:
    """Map basis vectors (last axis ``n_psi + 1``) to extended vectors ``mu``.

    ``mu = [1, psi_1..psi_n, psi_i * psi_j for 1 <= i <= j <= n]``.
    """
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[-1] - 1
    prods = [psi[..., i] * psi[..., j] for i, j in mu_pairs(n)]
    if not prods:
        return psi.copy()
    return np.concatenate([psi, np.stack(prods, axis=-1)], axis=-1)


def eval_mu(basis: SchedulingBasis, p) -> np.ndarray:
    return extend_psi(basis.eval(p))


@dataclass(frozen=True)
class LpvSsModel:
    """Affine LPV-SS innovation-form model.

    Coefficient stacks have shapes ``A: (q, nx, nx)``, ``B: (q, nx, nu)``,
    ``C: (q, ny, nx)``, ``D: (q, ny, nu)``, ``K: (q, nx, ny)`` with
    ``q = n_psi + 1``; ``Xi2`` is the innovation covariance.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray
    Xi2: np.ndarray
    basis: SchedulingBasis

    def __post_init__(self):
        for name in MATRIX_NAMES + ("Xi2",):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        A, B, C, D, K = (getattr(self, n) for n in MATRIX_NAMES)
        if A.ndim != 3 or B.ndim != 3 or C.ndim != 3 or D.ndim != 3 or K.ndim != 3:
            raise DimensionError("coefficient stacks must be 3-D (q, rows, cols)")
        q = self.basis.size
        nx, nu, ny = A.shape[1], B.shape[2], C.shape[1]
        expected = {
            "A": (q, nx, nx), "B": (q, nx, nu), "C": (q, ny, nx),
            "D": (q, ny, nu), "K": (q, nx, ny),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.Xi2.shape != (ny, ny):
            raise DimensionError(f"Xi2 has shape {self.Xi2.shape}, expected {(ny, ny)}")
        if not np.allclose(self.Xi2, self.Xi2.T, atol=1e-12):
            raise DimensionError("Xi2 must be symmetric")
        if ny and np.linalg.eigvalsh(self.Xi2).min() <= 0:
            raise DimensionError("Xi2 must be positive definite")

    @property
    def n_x(self) -> int:
        return self.A.shape[1]

    @property
    def n_u(self) -> int:
        return self.B.shape[2]

    @property
    def n_y(self) -> int:
        return self.C.shape[1]

    @property
    def n_psi(self) -> int:
        return self.basis.n_psi

    def replace(self, **changes) -> "LpvSsModel":
        kw = {n: getattr(self, n) for n in MATRIX_NAMES + ("Xi2", "basis")}
        kw.update(changes)
        return LpvSsModel(**kw)

    def at(self, which: str, psi: np.ndarray) -> np.ndarray:
        """Evaluate one matrix function on basis vectors ``(..., q)``."""
        return np.tensordot(np.asarray(psi, dtype=float), getattr(self, which), axes=(-1, 0))

    def to_dict(self) -> dict:
        d = {
            "format": "lpvsid-model",
            "version": 1,
            "n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y, "n_psi": self.n_psi,
            "basis": self.basis.to_dict(),
        }
        for name in MATRIX_NAMES:
            d[name] = [m.tolist() for m in getattr(self, name)]
        d["Xi2"] = self.Xi2.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LpvSsModel":
        if d.get("format") != "lpvsid-model":
            raise ModelFormatError("not an lpvsid model document")
        try:
            basis = SchedulingBasis.from_dict(d["basis"])
            nx, nu, ny = int(d["n_x"]), int(d["n_u"]), int(d["n_y"])
            q = basis.size
            shapes = {"A": (nx, nx), "B": (nx, nu), "C": (ny, nx), "D": (ny, nu), "K": (nx, ny)}
            mats = {}
            for name, shape in shapes.items():
                mats[name] = np.array(d[name], dtype=float).reshape((q,) + shape)
            return cls(Xi2=np.array(d["Xi2"], dtype=float).reshape(ny, ny), basis=basis, **mats)
        except (KeyError, ValueError, TypeError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from exc


def eval_matrix(model: LpvSsModel, which: str, psi) -> np.ndarray:
    """Affine combination ``sum_i M_i psi_i`` for ``which`` in A, B, C, D, K."""
    if which not in MATRIX_NAMES:
        raise ValueError(f"unknown matrix {which!r}")
    psi = np.asarray(psi, dtype=float)
    if psi.shape[-1] != model.basis.size:
        raise DimensionError(f"psi has length {psi.shape[-1]}, model expects {model.basis.size}")
    return model.at(which, psi)


def save_model(model: LpvSsModel, path, extra: Optional[dict] = None):
    """Write ``model`` as JSON; floats use shortest round-trip repr."""
    doc = model.to_dict()
    if extra:
        doc["diagnostics"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> LpvSsModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    return LpvSsModel.from_dict(doc)


@dataclass(frozen=True)
class DataSet:
    """Aligned input, scheduling and output records, time-major."""

    u: np.ndarray
    p: np.ndarray
    y: np.ndarray
    xi: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("u", "p", "y", "xi"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val, dtype=float)
            if val.ndim == 1:
                val = val[:, None]
            object.__setattr__(self, name, _frozen(val))
        lengths = {len(getattr(self, n)) for n in ("u", "p", "y", "xi") if getattr(self, n) is not None}
        if len(lengths) != 1:
            raise DimensionError(f"sequences have different lengths: {sorted(lengths)}")
        if self.xi is not None and self.xi.shape[1] != self.y.shape[1]:
            raise DimensionError("innovations must have the output dimension")

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def n_p(self) -> int:
        return self.p.shape[1]


def closed_loop_coeffs(model: LpvSsModel) -> tuple[np.ndarray, np.ndarray]:
    """Expand ``A - K C`` and ``B - K D`` over the extended scheduling vector.

    Returns ``(Acl, Bcl)`` with shapes ``(n_mu + 1, nx, nx)`` and
    ``(n_mu + 1, nx, nu)``.  The output-injection part of the closed-loop
    input matrix is ``K`` itself, expanded over ``psi``.
    """
    A, B, C, D, K = model.A, model.B, model.C, model.D, model.K
    n = model.n_psi
    acl = [A[0] - K[0] @ C[0]]
    bcl = [B[0] - K[0] @ D[0]]
    for i in range(1, n + 1):
        acl.append(A[i] - K[i] @ C[0] - K[0] @ C[i])
        bcl.append(B[i] - K[i] @ D[0] - K[0] @ D[i])
    for i, j in mu_pairs(n):
        if i == j:
            acl.append(-K[i] @ C[i])
            bcl.append(-K[i] @ D[i])
        else:
            acl.append(-K[i] @ C[j] - K[j] @ C[i])
            bcl.append(-K[i] @ D[j] - K[j] @ D[i])
    return np.array(acl), np.array(bcl)


def apply_similarity(model: LpvSsModel, T) -> LpvSsModel:
    """State transform ``x = T x'``; the IO behaviour is unchanged."""
    T = np.asarray(T, dtype=float)
    if T.shape != (model.n_x, model.n_x):
        raise DimensionError(f"T must be {model.n_x}x{model.n_x}")
    if not np.isfinite(np.linalg.cond(T)) or np.linalg.cond(T) > 1e14:
        raise np.linalg.LinAlgError("similarity transform is singular")
    Ti = np.linalg.inv(T)
    return model.replace(
        A=np.einsum("ab,ibc,cd->iad", Ti, model.A, T),
        B=np.einsum("ab,ibc->iac", Ti, model.B),
        C=np.einsum("iab,bc->iac", model.C, T),
        K=np.einsum("ab,ibc->iac", Ti, model.K),
    )


def is_stable(model: LpvSsModel, mode: str = "open", n_traj: int = 50, length: int = 1000,
              tol: float = 1e-6, seed: int = 0) -> bool:
    """Empirical stability check of the homogeneous state recursion.

    Every unit initial state must decay below ``tol`` along ``n_traj``
    scheduling trajectories drawn uniformly from the basis box.
    """
    rng = np.random.default_rng(seed)
    basis = model.basis
    if mode == "open":
        coeffs, widen = model.A, False
    elif mode == "closed":
        coeffs, widen = closed_loop_coeffs(model)[0], True
    else:
        raise ValueError(f"mode must be 'open' or 'closed', got {mode!r}")
    lo, hi = basis.bounds[:, 0], basis.bounds[:, 1]
    for _ in range(n_traj):
        p = lo + (hi - lo) * rng.random((length, basis.n_p))
        w = basis.trajectory(p)
        if widen:
            w = extend_psi(w)
        mats = np.tensordot(w, coeffs, axes=(1, 0))
        Phi = np.eye(model.n_x)
        for M in mats:
            Phi = M @ Phi
            nrm = np.abs(Phi).max()
            if not np.isfinite(nrm) or nrm > 1e12:
                return False
            if nrm < tol * 1e-3:
                break
        if np.linalg.norm(Phi, 2) >= tol:
            return False
    return True
