"""Precision and recall per level as the peak radii grow, on the synthetic test split.

Boundary sets are scored before nesting, so each level reflects its own
trace. Larger radii keep fewer, more isolated peaks.

    python scripts/order_ablation.py --seeds 7 11 --scales 0.5 1 2 4
"""

import argparse
import logging

import numpy as np

from parsehier.boundaries import extract_boundaries
from parsehier.experiments import BenchmarkConfig, run_benchmark
from parsehier.metrics import hgebd


def scores(res, bcfg, w):
    P = np.zeros((len(bcfg.radii), len(res.test)))
    R = np.zeros_like(P)
    for k, (tr, (_, gt)) in enumerate(zip(res.traces, res.test)):
        for i, bs in enumerate(extract_boundaries(tr, bcfg)):
            s = hgebd(bs.frames, gt.level(i + 1).boundaries, w, "literal")
            P[i, k], R[i, k] = s.precision, s.recall
    return P.mean(axis=1), R.mean(axis=1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[7, 11, 13, 17, 19])
    ap.add_argument("--scales", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    for seed in args.seeds:
        cfg = BenchmarkConfig(data_seed=seed)
        res = run_benchmark(cfg)
        print(f"seed {seed}")
        print(f"  {'radii':>16}  " + "  ".join(f"P{i} R{i}".rjust(11) for i in (1, 2, 3)))
        for scale in args.scales:
            bcfg = res.boundary_cfg.scaled(scale)
            p, r = scores(res, bcfg, cfg.tolerance)
            cells = "  ".join(f"{a:.3f} {b:.3f}" for a, b in zip(p, r))
            print(f"  {str(bcfg.radii):>16}  {cells}")


if __name__ == "__main__":
    main()
