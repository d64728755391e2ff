"""Blow-up rescalings of a positive field for the Lane-Emden nonlinearity."""

import argparse

import numpy as np

from fraclap.core import Constant, Field, Grid, validate_params
from fraclap.harness import blowup_step, tail_mass


def bumpy(seed):
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-1, 1, size=(3, 2))
    heights = rng.uniform(0.2, 1.0, size=3)

    def u(x):
        return 1.0 + sum(hgt * np.exp(-2.0 * np.sum((x - c) ** 2, axis=1)) for hgt, c in zip(heights, centres))

    return Field.from_function(u, Grid.cube(2, 1.5, 1 / 16), Constant(1.0), nonneg=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--steps", type=int, default=4)
    args = ap.parse_args()

    params = validate_params(2, 0.5, p=args.p)
    u = bumpy(args.seed)
    print(f"{'k':>2} {'r_k':>8} {'lambda_k':>10} {'v(0)':>5} {'audits':>7}  tail mass R=8,16,32")
    for k in range(1, args.steps + 1):
        tr = blowup_step(u, np.zeros(2), k, params, check_points=())
        tails = ", ".join(f"{tail_mass(tr.v, R, params):.3e}" for R in (8.0, 16.0, 32.0))
        v0 = float(tr.v.at(np.zeros((1, 2)))[0])
        print(f"{k:>2} {tr.r_k:>8.4f} {tr.lambda_k:>10.4e} {v0:>5.2f} {'pass' if tr.passed else 'FAIL':>7}  {tails}")


if __name__ == "__main__":
    main()
