"""Cross-lambda discrepancy of disk chains at a few times.

For each sample time prints |L(lam_a, [lam_a t]) sym-diff L(lam_b, [lam_b t])|
for consecutive lambdas of the ladder. Useful to see how quickly the
discrete flows settle as the step shrinks.
"""

import argparse

import numpy as np

from atwflow import GridSpec, LabelField, Neighborhood, extract_gmm, run_chains


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--r0", type=float, default=0.4)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[100, 200, 400])
    ap.add_argument("--times", type=float, nargs="+", default=[0.0, 0.01, 0.02, 0.04, 0.06, 0.07])
    ap.add_argument("--workers", type=int, default=3)
    args = ap.parse_args()

    spec = GridSpec(args.n, args.n, 1.0 / args.n)
    X, Y = spec.centers()
    a = LabelField(spec, 1, np.where((X - 0.5) ** 2 + (Y - 0.5) ** 2 <= args.r0**2, 0, 1))
    lams = sorted(args.lambdas)
    steps = [int(l * max(args.times)) + 1 for l in lams]
    chains = run_chains(a, lams, steps, Neighborhood.crofton(8, spec.h), workers=args.workers)
    traj = extract_gmm(chains, args.times)
    cons = traj.consecutive_discrepancy()
    head = "  ".join(f"d({lams[i]:g},{lams[i + 1]:g})" for i in range(len(lams) - 1))
    print(f"{'t':>6}  {head}")
    for t, row in zip(args.times, cons):
        print(f"{t:6.3f}  " + "  ".join(f"{v:>{len(h)}.5f}" for v, h in zip(row, head.split("  "))))


if __name__ == "__main__":
    main()
