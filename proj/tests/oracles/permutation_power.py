"""Monte Carlo reference for the MMD permutation test.

Estimates the false-rejection rate under the null and the power against a
0.5-sigma mean shift in 5-D, using the same five-kernel median ladder and
unbiased statistic as the library. The acceptance thresholds were fixed from
this script's output before the C++ test was written.
"""

import argparse

import numpy as np


def gram(z, sigmas):
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    dist = np.sqrt(d2[np.triu_indices(len(z), 1)])
    m = np.median(dist)
    return sum(np.exp(-d2 / (2.0 * (s * m) ** 2)) for s in sigmas) / len(sigmas)


def unbiased(k, lab):
    s, t = lab == 0, lab == 1
    ns, nt = s.sum(), t.sum()
    kss = k[np.ix_(s, s)]
    ktt = k[np.ix_(t, t)]
    kst = k[np.ix_(s, t)]
    return ((kss.sum() - np.trace(kss)) / (ns * (ns - 1)) + (ktt.sum() - np.trace(ktt)) / (nt * (nt - 1))
            - 2.0 * kst.mean())


def p_value(xs, xt, perms, rng):
    z = np.vstack([xs, xt])
    k = gram(z, [0.25, 0.5, 1.0, 2.0, 4.0])
    lab = np.r_[np.zeros(len(xs), int), np.ones(len(xt), int)]
    obs = unbiased(k, lab)
    hits = sum(unbiased(k, rng.permutation(lab)) >= obs for _ in range(perms))
    return (1 + hits) / (perms + 1)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--null-trials", type=int, default=200)
    ap.add_argument("--power-trials", type=int, default=100)
    ap.add_argument("--n-null", type=int, default=30)
    ap.add_argument("--perms", type=int, default=199)
    ap.add_argument("--seed", type=int, default=2024)
    a = ap.parse_args()
    rng = np.random.default_rng(a.seed)

    rej = 0
    for _ in range(a.null_trials):
        rej += p_value(rng.normal(size=(a.n_null, 5)), rng.normal(size=(a.n_null, 5)), a.perms, rng) <= 0.05
    fr = rej / a.null_trials
    se = np.sqrt(0.05 * 0.95 / a.null_trials)
    print(f"false-rejection rate {fr:.3f} (nominal 0.05, binomial 2-SE band [{0.05 - 2 * se:.3f}, {0.05 + 2 * se:.3f}])")

    for label, shift in (("0.5 sigma on every coordinate", np.full(5, 0.5)),
                         ("0.5 sigma along one axis", np.eye(5)[0] * 0.5)):
        power = 0
        for _ in range(a.power_trials):
            power += p_value(rng.normal(size=(100, 5)), rng.normal(size=(100, 5)) + shift, a.perms, rng) <= 0.05
        print(f"power at n=100, {label}: {power / a.power_trials:.3f}")

if __name__ == "__main__":
    main()
