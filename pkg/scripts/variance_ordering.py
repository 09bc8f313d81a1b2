"""Monte-Carlo variance of periodogram, Bartlett and multitaper estimates on white noise."""

import argparse

import numpy as np

from ctfkit.spectral import classic_estimate, multitaper_estimate, periodogram, plan_blocks
from ctfkit.tapers import multitapers


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--block", type=int, default=32)
    parser.add_argument("--tapers", type=int, nargs="+", default=[1, 4, 9, 16])
    parser.add_argument("--trials", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    plan = plan_blocks((args.size, args.size), args.block, overlap=0.0)
    rng = np.random.default_rng(args.seed)
    images = [rng.standard_normal((args.size, args.size)) for _ in range(args.trials)]
    k = args.block
    v_pg = np.var([periodogram(im[:k, :k] - im[:k, :k].mean()) for im in images], axis=0)
    v_bart = np.var([classic_estimate(im, plan) for im in images], axis=0)
    live = v_pg > 0
    print(f"B = {plan.count} blocks of {k}x{k}, {args.trials} trials")
    print(f"bartlett / periodogram  median {np.median(v_bart[live] / v_pg[live]):.4f}  (1/B = {1 / plan.count:.4f})")
    print("L   mt/periodogram  1/(LB)   frac mt<=bartlett<=periodogram")
    for count in args.tapers:
        tapers = multitapers(k, count)
        v_mt = np.var([multitaper_estimate(im, plan, tapers) for im in images], axis=0)
        ordered = np.mean((v_mt <= v_bart) & (v_bart <= v_pg))
        ratio = np.median(v_mt[live] / v_pg[live])
        print(f"{count:<3d} {ratio:.5f}         {1 / (count * plan.count):.5f}  {ordered:.3f}")


if __name__ == "__main__":
    main()
