"""Mean ||O - O_s||_F and the error-bound factor as gamma approaches 1.

    python scripts/bound_vs_gamma.py --n 256 --trials 20
"""

import argparse

import numpy as np

from bfla.analysis import error_bound_check
from bfla.config import BflaConfig
from bfla.core import gen_workload
from bfla.pipeline import build_mask


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--dist", default="gaussian", choices=["gaussian", "clustered"])
    args = ap.parse_args()

    print("gamma     mean_lhs      mean_rhs      holds")
    for gamma in (0.5, 0.8, 0.9, 0.95, 0.99, 0.999, 1.0):
        lhs, rhs, holds = [], [], True
        for seed in range(args.trials):
            cfg = BflaConfig(b=32, g=8, tile=16, gamma=gamma, n_local=1, eta=0, seed=seed,
                             hq=2, hkv=1, nq=args.n, nkv=args.n, dim=16, dist=args.dist)
            w = gen_workload(seed, 2, 1, args.n, args.n, 16, args.dist)
            rep = error_bound_check(w, build_mask(cfg, w).mask)
            lhs.append(rep.lhs.mean())
            rhs.append(rep.rhs.mean())
            holds &= rep.holds
        print(f"{gamma:<9} {np.mean(lhs):<13.4e} {np.mean(rhs):<13.4e} {holds}")


if __name__ == "__main__":
    main()
