"""Command-line front end: ``lpvsid simulate | identify | benchmark``.

Every command accepts ``--config FILE``, a flat TOML table whose keys are
the long option names with dashes replaced by underscores (for example
``runs = 20``, ``methods = "cca-ol,ssarx"``, ``snr = [25, 10]``).  Flags
given on the command line override file values.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical or
pipeline-stage failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from .core import DataSet, SchedulingBasis, load_model, save_model
from .dataeq import WindowConfig
from .errors import DataError, DomainError, HorizonError, LpvSidError, ModelFormatError
from .preest import GaussNewtonConfig
from .simulation import (Benchmark, MonteCarloConfig, NoiseSpec, bfr, calibrate_snr,
                         make_benchmark, monte_carlo, one_step_predictor, read_dataset_csv,
                         simulate, write_dataset_csv, write_eigenvalues_csv,
                         write_results_csv)
from .ssest import CLOSED_METHODS, METHODS, IdentifyConfig, StageError, identify

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# Windows that keep the Kronecker regressors tractable for two scheduling
# signals; used by ``benchmark`` unless --f/--p are given.
FEASIBLE_WINDOWS = {"open": (2, 3), "closed": (2, 2)}
DEFAULT_WINDOWS = (3, 4)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(name):
    def conv(s):
        try:
            v = int(s)
        except (TypeError, ValueError):
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {s!r}")
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v
    return conv


def _snr(s) -> float:
    if isinstance(s, (int, float)):
        return float(s)
    s = str(s).strip().lower()
    if s in ("inf", "+inf", "infinity", "none"):
        return math.inf
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR {s!r}")


def _snr_list(s) -> tuple:
    items = s if isinstance(s, (list, tuple)) else str(s).split(",")
    out = tuple(_snr(v) for v in items if str(v).strip())
    if not out:
        raise argparse.ArgumentTypeError("empty SNR list")
    return out


def _method(s) -> str:
    if s not in METHODS:
        raise argparse.ArgumentTypeError(
            f"unknown method {s!r}; choose from: {', '.join(METHODS)}")
    return s


def _method_list(s) -> tuple:
    items = s if isinstance(s, (list, tuple)) else str(s).split(",")
    out = tuple(_method(v.strip()) for v in items if v.strip())
    if not out:
        raise argparse.ArgumentTypeError("empty method list")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpvsid", description="LPV state-space subspace identification")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a dataset from the benchmark or a model file")
    s.add_argument("--config")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--benchmark", action="store_true", default=None,
                     help="use the seeded surrogate benchmark system")
    src.add_argument("--model", help="model JSON file to simulate")
    s.add_argument("--seed", type=int, help="seed of the excitation and noise (default 0)")
    s.add_argument("--benchmark-seed", type=int, help="seed of the benchmark system (default 0)")
    s.add_argument("--n", type=_positive_int("--n"), help="number of samples (default 10000)")
    s.add_argument("--snr", type=_snr, help="per-channel SNR in dB or 'inf' (default inf)")
    s.add_argument("--out", help="output directory (required)")

    i = sub.add_parser("identify", help="identify a model from a dataset CSV")
    i.add_argument("dataset", nargs="?")
    i.add_argument("--config")
    i.add_argument("--method", type=_method, help=f"one of {', '.join(METHODS)}")
    i.add_argument("--f", type=_positive_int("--f"), help="future window (default 3)")
    i.add_argument("--p", type=_positive_int("--p"), help="past window (default 4)")
    i.add_argument("--nx", type=_positive_int("--nx"), help="state order (default: singular value gap)")
    i.add_argument("--na", type=_positive_int("--na"), help="ARX output order (default f+p-1)")
    i.add_argument("--nb", type=_positive_int("--nb"), help="input order (default f+p-1)")
    i.add_argument("--nc", type=_positive_int("--nc"), help="MAX noise order (default f+p-1)")
    i.add_argument("--pmin", type=float, help="lower scheduling bound (default -1)")
    i.add_argument("--pmax", type=float, help="upper scheduling bound (default 1)")
    i.add_argument("--validation", help="validation dataset CSV")
    i.add_argument("--out", help="output directory (default .)")

    b = sub.add_parser("benchmark", help="Monte-Carlo study on the surrogate benchmark")
    b.add_argument("--config")
    b.add_argument("--runs", type=_positive_int("--runs"), help="Monte-Carlo runs (default 100)")
    b.add_argument("--n", type=_positive_int("--n"), help="samples per run (default 10000)")
    b.add_argument("--snr", type=_snr_list, help="comma-separated SNRs (default inf,25,10,0)")
    b.add_argument("--methods", type=_method_list, help="comma-separated methods (default cca-ol,ssarx,pbsid)")
    b.add_argument("--seed", type=int, help="master seed (default 0)")
    b.add_argument("--benchmark-seed", type=int, help="seed of the benchmark system (default 0)")
    b.add_argument("--f", type=_positive_int("--f"), help="future window (default 2)")
    b.add_argument("--p", type=_positive_int("--p"), help="past window (default 3 open, 2 closed)")
    b.add_argument("--na", type=_positive_int("--na"))
    b.add_argument("--nb", type=_positive_int("--nb"))
    b.add_argument("--nc", type=_positive_int("--nc"))
    b.add_argument("--n-val", type=_positive_int("--n-val"), help="validation samples (default 2000)")
    b.add_argument("--jobs", type=_positive_int("--jobs"), help="worker processes (default 1)")
    b.add_argument("--out", help="output directory (default .)")
    return parser


DEFAULTS = {
    "simulate": {"benchmark": False, "model": None, "seed": 0, "benchmark_seed": 0, "n": 10_000,
                 "snr": math.inf, "out": None},
    "identify": {"dataset": None, "method": None, "f": DEFAULT_WINDOWS[0], "p": DEFAULT_WINDOWS[1],
                 "nx": None, "na": None, "nb": None, "nc": None, "pmin": -1.0, "pmax": 1.0,
                 "validation": None, "out": "."},
    "benchmark": {"runs": 100, "n": 10_000, "snr": (math.inf, 25.0, 10.0, 0.0),
                  "methods": ("cca-ol", "ssarx", "pbsid"), "seed": 0, "benchmark_seed": 0,
                  "f": None, "p": None, "na": None, "nb": None, "nc": None, "n_val": 2000,
                  "jobs": 1, "out": "."},
}

_CONVERTERS = {
    "n": _positive_int("n"), "runs": _positive_int("runs"), "jobs": _positive_int("jobs"),
    "f": _positive_int("f"), "p": _positive_int("p"), "nx": _positive_int("nx"),
    "na": _positive_int("na"), "nb": _positive_int("nb"), "nc": _positive_int("nc"),
    "n_val": _positive_int("n_val"), "seed": int, "benchmark_seed": int,
    "pmin": float, "pmax": float, "method": _method, "benchmark": bool,
}


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags (in that order)."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config file {args.config}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid config file {args.config}: {exc}") from exc
        for key, val in doc.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r} for {command}")
            try:
                if key == "snr":
                    val = _snr_list(val) if command == "benchmark" else _snr(val)
                elif key == "methods":
                    val = _method_list(val)
                elif key in _CONVERTERS and val is not None:
                    val = _CONVERTERS[key](val)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
            cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _print_defaults(command: str, cfg: dict, extra: Optional[dict] = None):
    gn = asdict(GaussNewtonConfig())
    items = {**cfg, **(extra or {})}
    shown = ", ".join(f"{k}={v}" for k, v in items.items() if k != "config")
    print(f"# lpvsid {command}: {shown}", file=sys.stderr)
    print("# Gauss-Newton: " + ", ".join(f"{k}={v}" for k, v in gn.items()), file=sys.stderr)


def _outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    if cfg["out"] is None:
        raise UsageError("simulate requires --out")
    if not cfg["benchmark"] and cfg["model"] is None:
        raise UsageError("simulate requires --benchmark or --model FILE")
    out = _outdir(cfg["out"])
    if cfg["model"] is not None:
        model = load_model(cfg["model"])
        bench = Benchmark(model=model, seed=cfg["seed"])
    else:
        bench = make_benchmark(cfg["benchmark_seed"])
        model = bench.model
    rng = np.random.default_rng(cfg["seed"])
    u, p = bench.inputs(rng, cfg["n"])
    e = rng.standard_normal((cfg["n"], model.n_y))
    snr = cfg["snr"]
    cal = calibrate_snr(model, u, p, NoiseSpec(snr), e=e)
    noisy = math.isfinite(snr)
    sim = simulate(model, u, p, cal.xi if noisy else None)
    data = DataSet(u=u, p=p, y=sim.y, xi=cal.xi if noisy else None)
    data_path = os.path.join(out, "data.csv")
    model_path = os.path.join(out, "model.json")
    write_dataset_csv(data_path, data, include_xi=noisy)
    true_model = model.replace(Xi2=cal.Xi2) if noisy else model
    save_model(true_model, model_path, extra={"snr_db_target": snr if noisy else "inf",
                                              "snr_db_realized": [float(v) for v in cal.snr_db],
                                              "seed": cfg["seed"]})
    realized = ", ".join("inf" if math.isinf(v) else f"{v:.3f}" for v in cal.snr_db)
    print(f"wrote {data_path} ({cfg['n']} rows) and {model_path}")
    print(f"realized SNR per channel [dB]: {realized}")
    return EXIT_OK


def cmd_identify(cfg: dict) -> int:
    if cfg["dataset"] is None:
        raise UsageError("identify requires a dataset CSV")
    if cfg["method"] is None:
        raise UsageError(f"identify requires --method (one of {', '.join(METHODS)})")
    if not cfg["pmin"] < cfg["pmax"]:
        raise UsageError("--pmin must be smaller than --pmax")
    out = _outdir(cfg["out"])
    data = read_dataset_csv(cfg["dataset"])
    basis = SchedulingBasis.affine(data.n_p, [[cfg["pmin"], cfg["pmax"]]] * data.n_p)
    basis.check_domain(data.p)
    try:
        window = WindowConfig(cfg["f"], cfg["p"])
    except HorizonError as exc:
        raise UsageError(str(exc)) from exc
    icfg = IdentifyConfig(window=window, n_x=cfg["nx"], na=cfg["na"], nb=cfg["nb"], nc=cfg["nc"])
    res = identify(data, basis, cfg["method"], icfg)
    diag = dict(res.diagnostics)
    if cfg["validation"]:
        val = read_dataset_csv(cfg["validation"])
        basis.check_domain(val.p)
        diag["validation_bfr_sim"] = bfr(val.y, simulate(res.model, val.u, val.p).y)
        diag["validation_bfr_pred"] = bfr(val.y, one_step_predictor(res.model, val))
    model_path = os.path.join(out, "identified_model.json")
    sv_path = os.path.join(out, "singular_values.csv")
    save_model(res.model, model_path, extra=_jsonable(diag))
    with open(sv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("index", "singular_value"))
        for k, v in enumerate(res.state.singular_values):
            w.writerow((k + 1, repr(float(v))))
    print(f"method {cfg['method']}: n_x={diag['n_x']}, wrote {model_path} and {sv_path}")
    if "validation_bfr_sim" in diag:
        print(f"validation BFR: simulation {diag['validation_bfr_sim']:.4f}, "
              f"one-step prediction {diag['validation_bfr_pred']:.4f}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def benchmark_settings(cfg: dict) -> dict:
    """Per-method :class:`IdentifyConfig` from the benchmark options."""
    settings = {}
    for m in cfg["methods"]:
        mode = "closed" if m in CLOSED_METHODS else "open"
        f = cfg["f"] if cfg["f"] is not None else FEASIBLE_WINDOWS[mode][0]
        p = cfg["p"] if cfg["p"] is not None else FEASIBLE_WINDOWS[mode][1]
        try:
            window = WindowConfig(f, p)
        except HorizonError as exc:
            raise UsageError(str(exc)) from exc
        settings[m] = IdentifyConfig(window=window, n_x=2, na=cfg["na"], nb=cfg["nb"], nc=cfg["nc"])
    return settings


def format_table(table: Sequence[dict]) -> str:
    lines = [f"{'method':<8} {'snr_db':>7} {'n':>6} {'bfr_sim':>22} {'bfr_pred':>22} {'fail':>4}"]
    for row in table:
        lines.append(
            f"{row['method']:<8} {row['snr_db']:>7} {row['n']:>6} "
            f"{row['bfr_sim_mean']:>11.4f} ({row['bfr_sim_std']:8.4f}) "
            f"{row['bfr_pred_mean']:>11.4f} ({row['bfr_pred_std']:8.4f}) {row['failures']:>4}")
    return "\n".join(lines)


def cmd_benchmark(cfg: dict) -> int:
    out = _outdir(cfg["out"])
    settings = benchmark_settings(cfg)
    mc = MonteCarloConfig(n_runs=cfg["runs"], N=cfg["n"], snrs=tuple(cfg["snr"]),
                          methods=tuple(cfg["methods"]), settings=settings, seed=cfg["seed"],
                          benchmark_seed=cfg["benchmark_seed"], n_val=cfg["n_val"])
    res = monte_carlo(mc, progress=lambda msg: print(msg, file=sys.stderr), jobs=cfg["jobs"])
    res_path = os.path.join(out, "results.csv")
    eig_path = os.path.join(out, "eigenvalues.csv")
    write_results_csv(res_path, res.table)
    write_eigenvalues_csv(eig_path, res.eigenvalues)
    print(format_table(res.table))
    n_total = len(res.runs)
    n_fail = sum(not r["ok"] for r in res.runs)
    print(f"wrote {res_path} and {eig_path}; {n_total - n_fail}/{n_total} identifications succeeded")
    for r in res.runs:
        if not r["ok"]:
            print(f"  failed: run {r['run']} snr {r['snr_db']} {r['method']}: {r['error']}",
                  file=sys.stderr)
    return EXIT_OK if n_total - n_fail >= 0.9 * n_total else EXIT_NUMERIC


COMMANDS = {"simulate": cmd_simulate, "identify": cmd_identify, "benchmark": cmd_benchmark}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: simulate, identify or benchmark")
        cfg = resolve(args.command, args)
        extra = None
        if args.command == "benchmark":
            extra = {"windows_if_unset": FEASIBLE_WINDOWS, "n_x": 2}
        _print_defaults(args.command, cfg, extra)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lpvsid: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError, ModelFormatError) as exc:
        print(f"lpvsid: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        if isinstance(exc.cause, (DataError, DomainError)):
            print(f"lpvsid: data error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(exc.cause, HorizonError) and exc.stage == "input":
            print(f"lpvsid: usage error: {exc.cause}", file=sys.stderr)
            return EXIT_USAGE
        print(f"lpvsid: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LpvSidError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"lpvsid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
