"""Monte-Carlo benchmark table for both record lengths.

Runs the surrogate benchmark for N = 1e3 and N = 1e4 and writes
``results_N{n}.csv`` and ``eigenvalues_N{n}.csv`` into the output directory.

    python scripts/run_benchmark.py --runs 100 --out results/
"""
import argparse
import math
import os

from lpvsid.cli import FEASIBLE_WINDOWS, format_table
from lpvsid.dataeq import WindowConfig
from lpvsid.simulation import MonteCarloConfig, monte_carlo, write_eigenvalues_csv, write_results_csv
from lpvsid.ssest import CLOSED_METHODS, IdentifyConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--lengths", default="1000,10000")
    ap.add_argument("--methods", default="cca-ol,ssarx,pbsid")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    methods = tuple(args.methods.split(","))
    settings = {}
    for m in methods:
        f, p = FEASIBLE_WINDOWS["closed" if m in CLOSED_METHODS else "open"]
        settings[m] = IdentifyConfig(window=WindowConfig(f, p), n_x=2)
    for n in (int(v) for v in args.lengths.split(",")):
        cfg = MonteCarloConfig(n_runs=args.runs, N=n, snrs=(math.inf, 25.0, 10.0, 0.0),
                               methods=methods, settings=settings, seed=args.seed)
        res = monte_carlo(cfg, jobs=args.jobs)
        write_results_csv(os.path.join(args.out, f"results_N{n}.csv"), res.table)
        write_eigenvalues_csv(os.path.join(args.out, f"eigenvalues_N{n}.csv"), res.eigenvalues)
        print(f"N = {n}")
        print(format_table(res.table))


if __name__ == "__main__":
    main()
