"""Spread of validation BFR across the open-loop weightings on one shared pre-estimate.

Shows how the HK / N4SID / p-CCA realizations differ as the future window
grows: with ``f * n_y == n_x`` the weighted Hankel matrix has exactly
``n_x`` singular values and all weightings pick the same subspace.

    python scripts/weighting_spread.py --n 1000
"""
import argparse

import numpy as np

from lpvsid.dataeq import WindowConfig
from lpvsid.simulation import bfr, generate_dataset, make_benchmark, simulate
from lpvsid.ssest import IdentifyConfig, identify, pre_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    bench = make_benchmark(0)
    basis = bench.model.basis
    for snr in (np.inf, 25.0):
        rng = np.random.default_rng(args.seed)
        data, _, _ = generate_dataset(bench, rng, args.n, snr)
        val, y0, _ = generate_dataset(bench, rng, 2000, np.inf)
        for f, p in ((1, 3), (2, 3)):
            cfg = IdentifyConfig(window=WindowConfig(f, p), n_x=2)
            pre = pre_estimate(data, basis, "hk-ol", cfg)
            s = {m: bfr(y0, simulate(identify(data, basis, m, cfg, pre=pre).model, val.u, val.p).y)
                 for m in ("hk-ol", "n4sid", "p-cca")}
            spread = max(s.values()) - min(s.values())
            print(f"snr {snr} f={f} p={p}: " + ", ".join(f"{m} {v:.6f}" for m, v in s.items())
                  + f"  spread {spread:.3e}")


if __name__ == "__main__":
    main()
