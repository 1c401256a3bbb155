"""Compare low-tail exponents of ranked channel norms before and after grouping.

For each norm rank the window is the band between two lower quantiles of
the unprojected norm, and the same window is applied to the effective norm.
"""

import argparse

import numpy as np

from mixsim import _kernels
from mixsim.channel import rng_stream, sample_channel_batch, tail_exponent


def ranked_norms(N, K, theta_th, n, seed, block=100_000):
    h_all, g_all = [], []
    for b in range(-(-n // block)):
        m = min(block, n - b * block)
        H = sample_channel_batch(N, K, m, rng_stream(seed, "tail-study", b))
        lab = np.empty((m, K), dtype=np.int64)
        G = np.empty_like(H)
        _kernels.algorithm1_batch(H, theta_th, lab, np.empty(m, dtype=np.int64), G)
        h2 = np.sum(np.abs(H) ** 2, axis=1)
        order = np.argsort(-h2, axis=1, kind="stable")
        h_all.append(np.take_along_axis(h2, order, 1))
        g_all.append(np.take_along_axis(np.sum(np.abs(G) ** 2, axis=1), order, 1))
    return np.concatenate(h_all), np.concatenate(g_all)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--theta-th", type=float, default=0.9)
    p.add_argument("--samples", type=int, default=10 ** 6)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--quantiles", type=float, nargs=2, default=(1e-4, 1e-2))
    a = p.parse_args()
    h, g = ranked_norms(a.N, a.K, a.theta_th, a.samples, a.seed)
    print("rank  window              d_h    d_g    asymptotic")
    for k in range(a.K):
        lo, hi = np.quantile(h[:, k], a.quantiles)
        dh = tail_exponent(h[:, k], (lo, hi))
        dg = tail_exponent(g[:, k], (lo, hi))
        # CDF exponent of the (k+1)-th largest norm is one above the density's
        asym = a.N * (a.K - k)
        print(f"{k + 1:4d}  [{lo:7.3g}, {hi:7.3g}]  {dh:5.2f}  {dg:5.2f}  {asym}")


if __name__ == "__main__":
    main()
