"""Independent reference implementations used only by the tests.

Nothing here imports the solver code paths it is compared against: these are
plain loops, closed forms, exhaustive searches and textbook formulas.
"""
import itertools
import math

import numpy as np
from scipy import optimize, stats


def force_loop(x, c, alpha, eta=0.0, profile=None):
    r = math.sqrt(sum(t * t for t in x))
    if r == 0:
        return [0.0] * len(x)
    if profile == "plummer":
        g = c * r / (r * r + eta * eta) ** ((1 + alpha) / 2)
    elif profile == "exact" and r < eta:
        g = c * r / eta ** (1 + alpha)
    else:
        g = c / r ** alpha
    return [g * t / r for t in x]


def accelerations_loop(X, c, alpha, eta=0.0, profile=None):
    X = np.asarray(X, float)
    n = len(X)
    out = np.zeros_like(X)
    for i in range(n):
        for j in range(n):
            if i != j:
                out[i] += np.array(force_loop(X[i] - X[j], c, alpha, eta, profile)) / n
    return out


def energy_loop(X, V, c, alpha):
    """Kinetic plus pair energy with Phi(r) = -c r^(1-alpha)/(1-alpha)."""
    X, V = np.asarray(X, float), np.asarray(V, float)
    n = len(X)
    kin = sum(0.5 * float(v @ v) for v in V) / n
    pot = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                r = float(np.linalg.norm(X[i] - X[j]))
                pot += -c * r ** (1 - alpha) / (1 - alpha)
    return kin + pot / (2 * n * n)


def l1_gap_exact_profile(c, dim, alpha, eta):
    """Closed form of ||F - F_N||_1 for the linear-inside cut-off."""
    omega = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    return abs(c) * omega * eta ** (dim - alpha) * (1 + alpha) / ((dim - alpha) * (dim + 1))


def perm_w1(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    n = len(a)
    best = math.inf
    for p in itertools.permutations(range(n)):
        best = min(best, sum(float(np.linalg.norm(a[i] - b[p[i]])) for i in range(n)) / n)
    return best


def perm_winf(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    n = len(a)
    best = math.inf
    for p in itertools.permutations(range(n)):
        best = min(best, max(float(np.linalg.norm(a[i] - b[p[i]])) for i in range(n)))
    return best


def min_pair_loop(Z):
    Z = np.asarray(Z, float)
    best = math.inf
    for i in range(len(Z)):
        for j in range(i + 1, len(Z)):
            best = min(best, float(np.linalg.norm(Z[i] - Z[j])))
    return best


def cp_upper(k, n, level):
    """Upper one-sided limit: the p with P(Bin(n, p) <= k) = 1 - level."""
    if k == n:
        return 1.0
    return optimize.brentq(lambda p: stats.binom.cdf(k, n, p) - (1 - level), 1e-15, 1 - 1e-15,
                           xtol=1e-14)


def cp_lower(k, n, level):
    """Lower one-sided limit: the p with P(Bin(n, p) >= k) = 1 - level."""
    if k == 0:
        return 0.0
    return optimize.brentq(lambda p: stats.binom.sf(k - 1, n, p) - (1 - level), 1e-15, 1 - 1e-15,
                           xtol=1e-14)


def dense_scan_cube_sup(Z, eps, side, steps=60):
    """Max over a dense grid of the cube-indicator blob density (lower bound on the sup)."""
    Z = np.asarray(Z, float)
    n = Z.shape[1]
    h = side * eps / 2
    lo, hi = Z.min(0) - h, Z.max(0) + h
    axes = [np.linspace(lo[k], hi[k], steps) for k in range(n)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], 1)
    best = 0
    for start in range(0, len(grid), 2048):
        g = grid[start:start + 2048]
        inside = np.all(np.abs(g[:, None, :] - Z[None, :, :]) <= h, axis=2)
        best = max(best, int(inside.sum(1).max()))
    return best * side ** -n / (len(Z) * eps ** n)
