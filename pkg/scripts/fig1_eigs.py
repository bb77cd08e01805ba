"""Eigenvalue scatter data of the estimated A0 and A1 against the truth.

Writes ``eig_scatter.csv`` (estimates, one row per eigenvalue) and
``eig_true.csv`` (true eigenvalues) for plotting; no plot is drawn.

    python scripts/fig1_eigs.py --runs 100 --snr 10 --out results/
"""
import argparse
import csv
import os

import numpy as np

from lpvsid.cli import FEASIBLE_WINDOWS
from lpvsid.dataeq import WindowConfig
from lpvsid.simulation import MonteCarloConfig, make_benchmark, monte_carlo, write_eigenvalues_csv
from lpvsid.ssest import CLOSED_METHODS, IdentifyConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--snr", type=float, default=10.0)
    ap.add_argument("--methods", default="cca-ol,ssarx,pbsid")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    methods = tuple(args.methods.split(","))
    settings = {m: IdentifyConfig(window=WindowConfig(*FEASIBLE_WINDOWS[
        "closed" if m in CLOSED_METHODS else "open"]), n_x=2) for m in methods}
    cfg = MonteCarloConfig(n_runs=args.runs, N=args.n, snrs=(args.snr,), methods=methods,
                           settings=settings, seed=args.seed)
    res = monte_carlo(cfg, jobs=args.jobs)
    write_eigenvalues_csv(os.path.join(args.out, "eig_scatter.csv"), res.eigenvalues)
    truth = make_benchmark(cfg.benchmark_seed).model
    with open(os.path.join(args.out, "eig_true.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("matrix", "re", "im"))
        for i in (0, 1):
            for ev in np.sort_complex(np.linalg.eigvals(truth.A[i])):
                w.writerow((f"A{i}", repr(float(ev.real)), repr(float(ev.imag))))
    for m in methods:
        for i in (0, 1):
            est = np.array([e["re"] + 1j * e["im"] for e in res.eigenvalues
                            if e["method"] == m and e["matrix"] == f"A{i}"])
            print(f"{m} A{i}: {est.size} eigenvalues, mean |lambda| {np.abs(est).mean():.4f}")


if __name__ == "__main__":
    main()
