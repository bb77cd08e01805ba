"""Simulation, noise calibration, fit metrics and the Monte-Carlo benchmark."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DataSet, LpvSsModel, SchedulingBasis, is_stable
from .errors import DataError, LpvSidError, NotStableError

BENCHMARK_K0 = np.array([[0.32, 0.16], [0.64, 0.24]])


@dataclass
class SimResult:
    y: np.ndarray
    x: np.ndarray
    xi: np.ndarray


def _mats(model: LpvSsModel, p: np.ndarray):
    psi = model.basis.trajectory(p)
    return {n: np.einsum("tq,qij->tij", psi, getattr(model, n)) for n in ("A", "B", "C", "D", "K")}


def simulate(model: LpvSsModel, u: np.ndarray, p: np.ndarray, xi: Optional[np.ndarray] = None,
             x0: Optional[np.ndarray] = None) -> SimResult:
    """Innovation-form recursion ``x+ = A x + B u + K xi``, ``y = C x + D u + xi``.

    ``xi=None`` simulates the noiseless system.
    """
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    p = np.asarray(p, dtype=float).reshape(len(p), -1)
    N = u.shape[0]
    if p.shape[0] != N:
        raise DataError("u and p must have the same length")
    xi = np.zeros((N, model.n_y)) if xi is None else np.asarray(xi, dtype=float).reshape(N, -1)
    M = _mats(model, p)
    Bu = np.einsum("tij,tj->ti", M["B"], u) + np.einsum("tij,tj->ti", M["K"], xi)
    Du = np.einsum("tij,tj->ti", M["D"], u) + xi
    x = np.zeros((N + 1, model.n_x))
    if x0 is not None:
        x[0] = x0
    A = M["A"]
    for t in range(N):
        x[t + 1] = A[t] @ x[t] + Bu[t]
    y = np.einsum("tij,tj->ti", M["C"], x[:-1]) + Du
    bad = ~np.isfinite(y).all(axis=1)
    if bad.any():
        raise NotStableError(f"simulation diverged at sample {int(np.argmax(bad))}")
    return SimResult(y=y, x=x, xi=xi)


def one_step_predictor(model: LpvSsModel, data: DataSet, x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Steady-state predictor ``x+ = (A-KC) x + (B-KD) u + K y``, ``y_hat = C x + D u``."""
    M = _mats(model, data.p)
    F = M["A"] - M["K"] @ M["C"]
    G = np.einsum("tij,tj->ti", M["B"] - M["K"] @ M["D"], data.u) \
        + np.einsum("tij,tj->ti", M["K"], data.y)
    x = np.zeros((data.N + 1, model.n_x))
    if x0 is not None:
        x[0] = x0
    for t in range(data.N):
        x[t + 1] = F[t] @ x[t] + G[t]
    yhat = np.einsum("tij,tj->ti", M["C"], x[:-1]) + np.einsum("tij,tj->ti", M["D"], data.u)
    if not np.isfinite(yhat).all():
        raise NotStableError("predictor diverged")
    return yhat


def colored_noise(model: LpvSsModel, p: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Output noise ``w`` of ``x+ = A x + K xi``, ``w = C x + xi``."""
    zero_u = np.zeros((len(xi), model.n_u))
    return simulate(model.replace(B=np.zeros_like(model.B), D=np.zeros_like(model.D)),
                    zero_u, p, xi).y


def snr_db(y0: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-channel ``10 log10(sum y0^2 / sum w^2)``."""
    with np.errstate(divide="ignore"):
        return 10 * np.log10(np.sum(y0 ** 2, axis=0) / np.sum(w ** 2, axis=0))


def bfr(y_ref: np.ndarray, y_hat: np.ndarray) -> float:
    """Best fit rate ``100 max(1 - mean||y - y_hat|| / mean||y - mean(y)||, 0)``."""
    y_ref = np.asarray(y_ref, dtype=float).reshape(len(y_ref), -1)
    y_hat = np.asarray(y_hat, dtype=float).reshape(len(y_hat), -1)
    if y_ref.shape != y_hat.shape:
        raise DataError("y_ref and y_hat must have the same shape")
    den = np.mean(np.linalg.norm(y_ref - y_ref.mean(axis=0), axis=1))
    if den == 0:
        warnings.warn("constant reference signal; BFR defined as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    num = np.mean(np.linalg.norm(y_ref - y_hat, axis=1))
    return float(max(1 - num / den, 0.0) * 100)


@dataclass(frozen=True)
class NoiseSpec:
    """Target per-channel SNR (``inf`` = noiseless) and the base covariance shape."""

    target_snr_db: float = math.inf
    seed: int = 0
    Xi2_base: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.Xi2_base is not None:
            base = np.atleast_1d(np.asarray(self.Xi2_base, dtype=float))
            base = np.diag(base) if base.ndim == 2 else base
            if np.any(base <= 0):
                raise ValueError("Xi2_base must have a positive diagonal")
            object.__setattr__(self, "Xi2_base", base)


@dataclass
class Calibration:
    Xi2: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    snr_db: np.ndarray
    iterations: int


def calibrate_snr(model: LpvSsModel, u: np.ndarray, p: np.ndarray, target: NoiseSpec,
                  tol_db: float = 0.1, max_iter: int = 50, e: Optional[np.ndarray] = None) -> Calibration:
    """Scale a diagonal ``Xi2`` so that every output channel reaches the target SNR.

    A fixed standard-normal draw ``e`` (from ``target.seed`` unless given) is
    scaled channel-wise, ``xi = e * sqrt(diag(Xi2))``, and the scales are
    updated multiplicatively from the realized SNR until all channels are
    within ``tol_db``.
    """
    N, ny = len(u), model.n_y
    if math.isinf(target.target_snr_db) and target.target_snr_db > 0:
        zero = np.zeros((N, ny))
        return Calibration(np.zeros((ny, ny)), zero, zero, np.full(ny, np.inf), 0)
    y0 = simulate(model, u, p).y
    if e is None:
        e = np.random.default_rng(target.seed).standard_normal((N, ny))
    var = np.ones(ny) if target.Xi2_base is None else np.array(target.Xi2_base, dtype=float)
    # first guess from linearity of the noise channel
    for it in range(1, max_iter + 1):
        xi = e * np.sqrt(var)
        w = colored_noise(model, p, xi)
        s = snr_db(y0, w)
        err = s - target.target_snr_db
        if np.all(np.abs(err) <= tol_db):
            return Calibration(np.diag(var), xi, w, s, it)
        var = var * 10 ** (err / 10)
    raise LpvSidError(f"SNR calibration did not converge in {max_iter} iterations (last {s} dB)")


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Benchmark:
    """Surrogate benchmark system and its excitation laws."""

    model: LpvSsModel
    seed: int

    def inputs(self, rng: np.random.Generator, N: int) -> tuple[np.ndarray, np.ndarray]:
        """White Gaussian ``u`` and i.i.d. uniform ``p`` on the scheduling box."""
        u = rng.standard_normal((N, self.model.n_u))
        b = self.model.basis.bounds
        p = b[:, 0] + (b[:, 1] - b[:, 0]) * rng.random((N, self.model.basis.n_p))
        return u, p


def _corner_norm(coeffs: np.ndarray, extra: Optional[np.ndarray] = None) -> float:
    """Largest spectral norm of an affine matrix function over the box corners."""
    worst = 0.0
    for c in np.array(np.meshgrid([-1, 1], [-1, 1])).reshape(2, -1).T:
        w = np.concatenate([[1.0], c])
        M = np.tensordot(w, coeffs, axes=(0, 0))
        if extra is not None:
            M = M - np.tensordot(w, extra, axes=(0, 0))
        worst = max(worst, np.linalg.norm(M, 2))
    return worst


def make_benchmark(seed: int = 0, rho: float = 0.45, max_tries: int = 100) -> Benchmark:
    """Seeded surrogate of the two-input, two-output, two-state benchmark.

    The innovation gain is fixed to ``K0 = [[0.32, 0.16], [0.64, 0.24]]``,
    ``K1 = K2 = 0``; the remaining matrices are drawn from ``seed`` and
    rescaled so that both ``A(p)`` and ``A(p) - K0 C(p)`` are contractions
    with norm at most ``rho`` on ``[-1, 1]^2`` (which implies the empirical
    stability test).  Draws with ill-conditioned ``C0`` or ``B0``, or with an
    ill-conditioned two-step observability matrix, are rejected.
    """
    rng = np.random.default_rng(seed)
    basis = SchedulingBasis.affine(2, [[-1.0, 1.0], [-1.0, 1.0]])
    K = np.zeros((3, 2, 2))
    K[0] = BENCHMARK_K0
    for _ in range(max_tries):
        A = np.empty((3, 2, 2))
        A[0] = rng.standard_normal((2, 2))
        A[1:] = 0.3 * rng.standard_normal((2, 2, 2))
        B = rng.standard_normal((3, 2, 2)) * np.array([1.0, 0.3, 0.3])[:, None, None]
        C = rng.standard_normal((3, 2, 2)) * np.array([1.0, 0.3, 0.3])[:, None, None]
        D = 0.3 * rng.standard_normal((3, 2, 2)) * np.array([1.0, 0.5, 0.5])[:, None, None]
        if np.linalg.cond(C[0]) > 5 or np.linalg.cond(B[0]) > 5:
            continue
        # C sets the closed-loop coupling; scale it so K0 C stays moderate
        C *= 0.8 / np.linalg.norm(C[0], 2)
        KC = np.einsum("ij,qjk->qik", BENCHMARK_K0, C)
        na = _corner_norm(A)
        A *= rho / na
        ncl = _corner_norm(A, KC)
        if ncl > rho:
            continue
        O_ol = np.vstack([C[0], C[0] @ A[0]])
        O_cl = np.vstack([C[0], C[0] @ (A[0] - KC[0])])
        if np.linalg.cond(O_ol) > 20 or np.linalg.cond(O_cl) > 20:
            continue
        if min(abs(np.linalg.eigvals(A[0]))) < 0.1:
            continue
        model = LpvSsModel(A=A, B=B, C=C, D=D, K=K, Xi2=np.eye(2), basis=basis)
        if is_stable(model, "open") and is_stable(model, "closed"):
            return Benchmark(model=model, seed=seed)
    raise LpvSidError(f"no admissible benchmark system after {max_tries} draws")


def generate_dataset(bench: Benchmark, rng: np.random.Generator, N: int, snr_db_target: float,
                     noise_seed: Optional[int] = None) -> tuple[DataSet, np.ndarray, Calibration]:
    """Noisy record, its noiseless output and the noise calibration."""
    u, p = bench.inputs(rng, N)
    e = rng.standard_normal((N, bench.model.n_y))
    cal = calibrate_snr(bench.model, u, p, NoiseSpec(snr_db_target), e=e)
    sim = simulate(bench.model, u, p, cal.xi)
    y0 = simulate(bench.model, u, p).y
    return DataSet(u=u, p=p, y=sim.y, xi=cal.xi), y0, cal


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloConfig:
    """Monte-Carlo study over methods and SNR levels."""

    n_runs: int = 100
    N: int = 10_000
    snrs: tuple = (math.inf, 25.0, 10.0, 0.0)
    methods: tuple = ("cca-ol", "ssarx", "pbsid")
    settings: dict = field(default_factory=dict)   # method -> IdentifyConfig
    seed: int = 0
    benchmark_seed: int = 0
    n_val: int = 2000

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.N < 2:
            raise ValueError("N must be >= 2")


@dataclass
class MonteCarloResult:
    table: list
    runs: list
    eigenvalues: list


def _run_seeds(seed: int, n_runs: int, n_snr: int):
    root = np.random.SeedSequence(seed)
    return [child.spawn(n_snr) for child in root.spawn(n_runs)]


def _mc_run(cfg: MonteCarloConfig, r: int, run_seeds) -> tuple[list, list]:
    """All (SNR, method) identifications of one Monte-Carlo run."""
    from .ssest import IdentifyConfig, identify

    bench = make_benchmark(cfg.benchmark_seed)
    truth = bench.model
    runs, eigs = [], []
    for s_idx, snr in enumerate(cfg.snrs):
        rng = np.random.default_rng(run_seeds[s_idx])
        data, _, _ = generate_dataset(bench, rng, cfg.N, snr)
        val, y0_val, _ = generate_dataset(bench, rng, cfg.n_val, snr)
        yp_true = one_step_predictor(truth, val)
        for method in cfg.methods:
            icfg = cfg.settings.get(method, IdentifyConfig())
            rec = {"run": r, "method": method, "snr_db": snr}
            try:
                est = identify(data, truth.basis, method, icfg).model
                rec["bfr_sim"] = bfr(y0_val, simulate(est, val.u, val.p).y)
                rec["bfr_pred"] = bfr(yp_true, one_step_predictor(est, val))
                rec["ok"] = True
                for i in (0, 1):
                    for ev in np.sort_complex(np.linalg.eigvals(est.A[i])):
                        eigs.append({"run": r, "method": method, "snr_db": snr,
                                     "matrix": f"A{i}", "re": ev.real, "im": ev.imag})
            except (LpvSidError, ValueError, np.linalg.LinAlgError) as exc:
                rec.update(ok=False, error=str(exc), bfr_sim=np.nan, bfr_pred=np.nan)
            runs.append(rec)
    return runs, eigs


def monte_carlo(cfg: MonteCarloConfig, progress: Optional[Callable[[str], None]] = None,
                jobs: int = 1) -> MonteCarloResult:
    """Identify every method on independent realizations and tabulate BFRs.

    Each run draws identification and validation records from a seed
    derived from ``cfg.seed``; ``bfr_sim`` compares noiseless simulations of
    estimate and truth, ``bfr_pred`` compares one-step predictions of the
    estimate with those of the true system on the noisy validation record.
    Failed identifications are counted, not raised.  ``jobs > 1`` runs the
    Monte-Carlo runs in worker processes; results are collected by run index
    so the output does not depend on completion order.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    seeds = _run_seeds(cfg.seed, cfg.n_runs, len(cfg.snrs))
    per_run: list = [None] * cfg.n_runs

    def _report(r):
        if progress:
            for rec in per_run[r][0]:
                progress(f"run {r} snr {rec['snr_db']} {rec['method']}: "
                         + (f"{rec['bfr_sim']:.3f}" if rec["ok"] else "failed"))

    if jobs == 1:
        for r in range(cfg.n_runs):
            per_run[r] = _mc_run(cfg, r, seeds[r])
            _report(r)
    else:
        from concurrent.futures import ProcessPoolExecutor, as_completed
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(_mc_run, cfg, r, seeds[r]): r for r in range(cfg.n_runs)}
            for fut in as_completed(futs):
                r = futs[fut]
                per_run[r] = fut.result()
                _report(r)
    runs = [rec for rr, _ in per_run for rec in rr]
    eigs = [e for _, ee in per_run for e in ee]
    table = []
    for method in cfg.methods:
        for snr in cfg.snrs:
            sel = [x for x in runs if x["method"] == method and x["snr_db"] == snr]
            ok = [x for x in sel if x["ok"]]
            sim = np.array([x["bfr_sim"] for x in ok])
            pred = np.array([x["bfr_pred"] for x in ok])
            table.append({
                "method": method, "snr_db": snr, "n": cfg.N,
                "bfr_sim_mean": float(sim.mean()) if ok else np.nan,
                "bfr_sim_std": float(sim.std(ddof=1)) if len(ok) > 1 else 0.0 if ok else np.nan,
                "bfr_pred_mean": float(pred.mean()) if ok else np.nan,
                "bfr_pred_std": float(pred.std(ddof=1)) if len(ok) > 1 else 0.0 if ok else np.nan,
                "failures": len(sel) - len(ok),
            })
    return MonteCarloResult(table=table, runs=runs, eigenvalues=eigs)


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ("method", "snr_db", "n", "bfr_sim_mean", "bfr_sim_std", "bfr_pred_mean",
                  "bfr_pred_std", "failures")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_dataset_csv(path, data: DataSet, include_xi: bool = False):
    """Columns ``t, u1.., p1.., y1..`` (and ``xi1..`` when requested)."""
    cols = ["t"] + [f"u{i + 1}" for i in range(data.n_u)] + [f"p{i + 1}" for i in range(data.n_p)] \
        + [f"y{i + 1}" for i in range(data.n_y)]
    parts = [data.u, data.p, data.y]
    if include_xi and data.xi is not None:
        cols += [f"xi{i + 1}" for i in range(data.n_y)]
        parts.append(data.xi)
    body = np.hstack(parts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t, row in enumerate(body):
            w.writerow([t] + [repr(float(v)) for v in row])


def read_dataset_csv(path) -> DataSet:
    """Inverse of :func:`write_dataset_csv`."""
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, StopIteration, ValueError) as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    header = [h.strip() for h in header]

    def pick(prefix):
        idx = [i for i, h in enumerate(header)
               if h.startswith(prefix) and h[len(prefix):].isdigit()]
        idx.sort(key=lambda i: int(header[i][len(prefix):]))
        return arr[:, idx] if idx else None

    u, p, y, xi = pick("u"), pick("p"), pick("y"), pick("xi")
    if u is None or p is None or y is None:
        raise DataError(f"dataset {path} needs u*, p* and y* columns")
    if not np.isfinite(arr).all():
        raise DataError(f"dataset {path} contains non-finite values")
    return DataSet(u=u, p=p, y=y, xi=xi)


def write_results_csv(path, table: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for row in table:
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def write_eigenvalues_csv(path, eigs: Sequence[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("run", "method", "snr_db", "matrix", "re", "im"))
        for e in eigs:
            w.writerow([e["run"], e["method"], _fmt(e["snr_db"]), e["matrix"],
                        repr(float(e["re"])), repr(float(e["im"]))])
