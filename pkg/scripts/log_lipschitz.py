"""Modulus of continuity of the Riesz potential of a half-disc indicator (s = 1/2).

Prints omega(t) with its log-Lipschitz and Lipschitz quotients over dyadic t.
"""

import argparse

import numpy as np

from fraclap.core import Field, Grid, Plane, Sphere, validate_params
from fraclap.potentials import potential_w


def modulus(f, t, params):
    best = 0.0
    for x2 in (-0.25, 0.0, 0.25):
        for shift in (1.0, 0.75, 0.5, 0.25, 0.0):
            a = np.array([-shift * t, x2])
            b = a + np.array([t, 0.0])
            best = max(best, abs(potential_w(f, b, params).value - potential_w(f, a, params).value))
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--finest", type=int, default=9, help="smallest t is 2^-finest")
    args = ap.parse_args()

    params = validate_params(2, 0.5)
    f = Field.from_function(
        lambda x: ((x[:, 0] > 0) & (np.sum(x * x, axis=1) < 1)).astype(float),
        Grid.cube(2, 1.0, 0.125),
        kinks=[Sphere((0.0, 0.0), 1.0), Plane(0, 0.0)],
    )
    print(f"{'t':>10} {'omega':>12} {'omega/(t|ln t|)':>16} {'omega/t':>9}")
    for k in range(3, args.finest + 1):
        t = 2.0**-k
        w = modulus(f, t, params)
        print(f"{t:>10.6f} {w:>12.4e} {w / (t * abs(np.log(t))):>16.4f} {w / t:>9.4f}")


if __name__ == "__main__":
    main()
