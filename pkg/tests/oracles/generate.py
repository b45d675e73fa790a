"""Regenerate ``frozen.json``: reference values computed without the package.

Run from the repository root:  python3 tests/oracles/generate.py
"""
import json
import math
from pathlib import Path

import numpy as np
from scipy import optimize, special


def robin_alpha0(Lx, Ly):
    """Robin constant of -Lap G = 8 pi (delta - 1/V), G = -4 log r + A + o(1),
    from the Dedekind eta function of the lattice Lx (Z + i Ly/Lx Z)."""
    q = math.exp(-2 * math.pi * Ly / Lx)
    log_eta = -2 * math.pi * Ly / Lx / 24 + sum(math.log1p(-q**n) for n in range(1, 200))
    return -4 * (math.log(2 * math.pi) + 2 * log_eta) + 4 * math.log(Lx)


def low_modes(M, n_modes):
    """The ``n_modes`` lowest nonconstant real Fourier modes of the unit torus on an M-grid."""
    ks = sorted(((m * m + n * n, m, n) for m in range(-4, 5) for n in range(-4, 5)
                 if (m, n) > (0, 0)))[: n_modes // 2]
    x = np.arange(M) / M
    X, Y = np.meshgrid(x, x, indexing="ij")
    modes, lam = [], []
    for s, m, n in ks:
        ph = 2 * math.pi * (m * X + n * Y)
        modes += [math.sqrt(2) * np.cos(ph), math.sqrt(2) * np.sin(ph)]
        lam += [4 * math.pi**2 * s] * 2
    return np.array(modes), np.array(lam), X


def brute_force_min(a, eps, alpha=0.0, n_modes=12, M=128):
    E, lam, X = low_modes(M, n_modes)
    H = 1 + a * np.cos(2 * math.pi * X)
    beta = 8 * math.pi * (1 - eps)

    def J(c):
        u = np.tensordot(c, E, 1)
        w = H * np.exp(u)
        m = w.mean()
        val = 0.5 * np.sum((lam - alpha) * c * c) - beta * math.log(m)
        grad = (lam - alpha) * c - beta * np.tensordot(E, w, 2) / (M * M) / m
        return val, grad

    best = None
    for seed in range(4):
        c0 = np.random.default_rng(seed).normal(scale=0.1, size=n_modes)
        res = optimize.minimize(J, c0, jac=True, method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    return float(best.fun)


def ray_bessel(t):
    return -8 * math.pi * math.log(special.i0(math.sqrt(2) * t))


if __name__ == "__main__":
    out = {
        "robin_alpha0_unit": robin_alpha0(1.0, 1.0),
        "robin_alpha0_2x1": robin_alpha0(2.0, 1.0),
        "bf12_cos03_eps05_alpha0": brute_force_min(0.3, 0.5),
        "ray_bessel_t1": ray_bessel(1.0),
        "bubble_mass": 8 * math.pi,
    }
    path = Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2))
