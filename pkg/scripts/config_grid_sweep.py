"""Density / sparsity / error over the published operating points on a synthetic workload.

    python scripts/config_grid_sweep.py --n 8192 --dist clustered --out grid.csv

Mask-build times are CPU wall-clock for this reference engine and say nothing
about fused GPU kernels.
"""

import argparse
import sys

from bfla.cli import to_csv
from bfla.config import BflaConfig
from bfla.pipeline import run

# (b, g, gamma, n_local, rho, eta); eta 0 = no stride rescue
OPERATING_POINTS = [
    (256, 64, 0.95, 8, 0.0, 0),
    (256, 64, 0.999, 8, 0.0, 0),
    (256, 64, 0.95, 8, 0.0, 16),
    (256, 64, 0.95, 16, 0.0, 16),
    (256, 64, 0.98, 8, 0.0, 16),
    (256, 64, 0.99, 8, 0.0, 16),
    (128, 64, 0.99, 8, 0.1, 16),
    (256, 64, 0.99, 8, 0.1, 16),
    (256, 256, 0.99, 8, 0.1, 16),
    (512, 64, 0.99, 8, 0.1, 16),
    (512, 128, 0.99, 8, 0.1, 16),
    (1024, 64, 0.99, 8, 0.1, 16),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8192)
    ap.add_argument("--hq", type=int, default=4)
    ap.add_argument("--hkv", type=int, default=1)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--dist", default="clustered", choices=["gaussian", "clustered"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--oracle", default="auto", choices=["on", "off", "auto"])
    ap.add_argument("--out")
    args = ap.parse_args()

    rows = []
    for b, g, gamma, n_local, rho, eta in OPERATING_POINTS:
        cfg = BflaConfig(
            b=b, g=g, gamma=gamma, n_local=n_local, rho=rho, eta=eta, tile=64, seed=args.seed,
            hq=args.hq, hkv=args.hkv, nq=args.n, nkv=args.n, dim=args.dim, dist=args.dist,
            oracle=args.oracle,
        ).validate()
        rep = run(cfg, timing=True)
        rows.append(rep.csv_row())
        print(f"b={b:<5d} g={g:<4d} gamma={gamma:<6} n_local={n_local:<3d} rho={rho:<4} eta={eta:<3d} "
              f"density={rep.density.density:.4f} err={rep.max_rel_err if rep.max_rel_err is not None else float('nan'):.3e} "
              f"build={rep.timings_ms['mask_build']:.1f}ms", file=sys.stderr)
    text = to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
