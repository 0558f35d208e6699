"""Regenerates oracle.json with scipy, independently of the Rust oracle.

Z/Z0 = sum over subsets S of prod_{x in S} (e^{w_x} - 1) * P(|phi_x| <= a, x in S)
under the zero-boundary free field with precision Q_xx = 1, Q_xy = -1/(2d).
Rewards are the ones the Rust sampler draws for each (law, seed); they are
frozen here so the fixture does not depend on the generator RNG.
"""

import itertools
import json
import math
import pathlib

import numpy as np
import scipy
from scipy.stats import multivariate_normal, norm

CASES = [
    # d, n, a, law, b, h, env_seed, rewards
    (2, 1, 1.0, "constant", 0.0, 0.5, 0, [0.5]),
    (2, 2, 1.0, "bernoulli", 1.0, 0.0, 7, [-1.0, -1.0, -1.0, 1.0]),
    (1, 3, 1.0, "gaussian", 0.8, 0.1, 3, [-0.2656005389081242, -0.7056984961783507, -0.4315682498994958]),
    (3, 2, 1.0, "constant", 0.0, 0.3, 0, [0.3] * 8),
    (2, 3, 1.0, "two_point:0.8:-0.5:2", 0.5, -0.2, 11, [-0.45, 0.8, 0.8, -0.45, 0.8, -0.45, -0.45, 0.8, -0.45]),
]


def covariance(d, n):
    v = n**d
    q = np.eye(v)
    for site in range(v):
        coords = [(site // n**i) % n for i in range(d)]
        for axis in range(d):
            for step in (-1, 1):
                c = list(coords)
                c[axis] += step
                if 0 <= c[axis] < n:
                    other = sum(ci * n**i for i, ci in enumerate(c))
                    q[site, other] = -1.0 / (2 * d)
    return np.linalg.inv(q)


def rect(cov, a):
    k = cov.shape[0]
    if k == 0:
        return 1.0
    if k == 1:
        s = math.sqrt(cov[0, 0])
        return norm.cdf(a / s) - norm.cdf(-a / s)
    return multivariate_normal.cdf(
        np.full(k, a), mean=np.zeros(k), cov=cov, lower_limit=np.full(k, -a), abseps=1e-9, releps=0.0, maxpts=500_000 * k
    )


def free_energy(d, n, a, rewards):
    cov = covariance(d, n)
    v = len(rewards)
    total = 0.0
    for size in range(v + 1):
        for subset in itertools.combinations(range(v), size):
            weight = np.prod([math.expm1(rewards[x]) for x in subset]) if subset else 1.0
            idx = list(subset)
            total += weight * rect(cov[np.ix_(idx, idx)], a)
    return math.log(total) / v


def main():
    out = []
    for d, n, a, law, b, h, seed, rewards in CASES:
        out.append(
            {
                "d": d,
                "n": n,
                "a": a,
                "law": law,
                "b": b,
                "h": h,
                "env_seed": seed,
                "rewards": rewards,
                "f_exact": free_energy(d, n, a, rewards),
                "tol": 1e-6,
                "generator_version": f"scipy {scipy.__version__} subset expansion",
            }
        )
    path = pathlib.Path(__file__).with_name("oracle.json")
    path.write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
