"""Singular interaction forces F(x) = c x / |x|^(1+alpha) and their cut-off versions.

Sign convention: ``strength > 0`` is repulsive, ``strength < 0`` attractive.
The self-interaction convention F(0) = 0 is always enforced.

Two cut-off profiles are available, both with regularization length
``eta = epsilon ** m_bar``:

``"exact"`` (default)
    F_N = F for |x| >= eta and F_N(x) = c x / eta^(1+alpha) inside the ball.
    Odd, Lipschitz, |F_N| <= |c| eta^-alpha, and ||F - F_N||_1 is finite
    for every alpha < dim.
``"plummer"``
    F_N(x) = c x / (|x|^2 + eta^2)^((1+alpha)/2). Smooth, but F - F_N decays
    like |x|^-(2+alpha), so the L1 gap is infinite when alpha <= dim - 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate

PROFILES = ("exact", "plummer")


class QuadratureError(RuntimeError):
    """Raised when a radial integral does not converge."""


@dataclass(frozen=True)
class Cutoff:
    m_bar: float
    epsilon: float = 1.0
    profile: str = "exact"

    def __post_init__(self):
        if not self.m_bar > 0:
            raise ValueError(f"cutoff.m_bar must be positive, got {self.m_bar}")
        if not self.epsilon > 0:
            raise ValueError(f"cutoff.epsilon must be > 0, got {self.epsilon}")
        if self.profile not in PROFILES:
            raise ValueError(f"cutoff.profile must be one of {PROFILES}, got {self.profile!r}")

    @property
    def eta(self) -> float:
        return float(self.epsilon ** self.m_bar)


@dataclass(frozen=True)
class KernelSpec:
    """Force family c x / |x|^(1+alpha) in R^dim, optionally cut off at eta."""

    dim: int
    alpha: float
    strength: float = 1.0
    cutoff: Optional[Cutoff] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.cutoff is None and self.dim > 1 and not self.alpha < self.dim - 1:
            raise ValueError(
                f"alpha={self.alpha} >= dim-1={self.dim - 1} requires a cut-off"
            )

    @property
    def eta(self) -> float:
        return 0.0 if self.cutoff is None else self.cutoff.eta

    @property
    def repulsive(self) -> bool:
        return self.strength > 0

    def with_epsilon(self, epsilon: float) -> "KernelSpec":
        """Bind the N-dependent scale epsilon into the cut-off (no-op without one)."""
        if self.cutoff is None:
            return self
        return replace(self, cutoff=replace(self.cutoff, epsilon=epsilon))

    def to_dict(self) -> dict:
        out = {"dim": self.dim, "alpha": self.alpha, "strength": self.strength}
        if self.cutoff is not None:
            out["cutoff.m_bar"] = self.cutoff.m_bar
            out["cutoff.profile"] = self.cutoff.profile
        return out

    @classmethod
    def from_dict(cls, d: dict, epsilon: float = 1.0) -> "KernelSpec":
        cut = None
        if "cutoff.m_bar" in d:
            cut = Cutoff(float(d["cutoff.m_bar"]), epsilon, str(d.get("cutoff.profile", "exact")))
        return cls(int(d["dim"]), float(d["alpha"]), float(d.get("strength", 1.0)), cut)


def radial_force(spec: KernelSpec, r):
    """Signed radial profile g(r) such that F(x) = g(|x|) x / |x|; g(0) = 0."""
    r = np.asarray(r, dtype=float)
    c, a = spec.strength, spec.alpha
    out = np.zeros_like(r)
    pos = r > 0
    rp = r[pos]
    if spec.cutoff is None:
        out[pos] = c * rp ** (-a)
    elif spec.cutoff.profile == "plummer":
        eta = spec.eta
        out[pos] = c * rp * (rp * rp + eta * eta) ** (-(1 + a) / 2)
    else:
        eta = spec.eta
        outer = rp >= eta
        g = c * rp * eta ** (-(1 + a))
        g[outer] = c * rp[outer] ** (-a)
        out[pos] = g
    return out


def force(spec: KernelSpec, x) -> np.ndarray:
    """Evaluate F at one point (shape (dim,)) or a batch (shape (..., dim))."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.dim:
        raise ValueError(f"expected trailing dimension {spec.dim}, got {x.shape}")
    r = np.sqrt(np.sum(x * x, axis=-1))
    g = radial_force(spec, r)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, g / np.where(r > 0, r, 1.0), 0.0)
    return x * scale[..., None]


def radial_potential(spec: KernelSpec, r):
    """Phi(r) with -grad Phi = F; no additive constant beyond continuity at eta."""
    r = np.asarray(r, dtype=float)
    c, a = spec.strength, spec.alpha

    def outer(s):
        if a == 1.0:
            return -c * np.log(s)
        return -c * s ** (1 - a) / (1 - a)

    if spec.cutoff is None:
        if a == 1.0:
            raise ValueError("potential undefined for alpha = 1 without cut-off (logarithmic case)")
        with np.errstate(divide="ignore"):
            return outer(r)
    eta = spec.eta
    if spec.cutoff.profile == "plummer":
        s2 = r * r + eta * eta
        if a == 1.0:
            return -0.5 * c * np.log(s2)
        return -c * s2 ** ((1 - a) / 2) / (1 - a)
    inner = -c * r * r / (2 * eta ** (1 + a)) + c * eta ** (1 - a) / 2 + outer(eta)
    with np.errstate(divide="ignore"):
        return np.where(r >= eta, outer(np.maximum(r, eta)), inner)


def potential(spec: KernelSpec, x):
    x = np.asarray(x, dtype=float)
    return radial_potential(spec, np.sqrt(np.sum(x * x, axis=-1)))


def jacobian_fd(fn: Callable, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian of a vector field at x."""
    d = x.shape[-1]
    J = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        J[:, k] = (fn(x + e) - fn(x - e)) / (2 * h)
    return J


@dataclass
class SAlphaReport:
    C_force: float
    C_grad: float
    passed: bool
    shell_force: np.ndarray = field(repr=False)
    shell_grad: np.ndarray = field(repr=False)


def _shell_growth(radii, sups, span=100.0):
    # Largest ratio s(r_i)/s(r_j) with r_i < r_j <= span * r_i.
    worst = 1.0
    for i in range(len(radii)):
        for j in range(i + 1, len(radii)):
            if radii[j] <= span * radii[i] and sups[j] > 0:
                worst = max(worst, sups[i] / sups[j])
    return worst


def verify_salpha(spec: KernelSpec, sample_radii, force_fn: Optional[Callable] = None,
                  n_directions: int = 24, tol: float = 0.10) -> SAlphaReport:
    """Empirical constants of |F| <= C/|x|^a, |grad F| <= C/|x|^(a+1) on spherical shells.

    Fails (without raising) when shell suprema grow by more than ``tol`` toward
    small radii within two decades.
    """
    fn = force_fn if force_fn is not None else (lambda y: force(spec, y))
    radii = np.sort(np.asarray(sample_radii, dtype=float))
    if np.any(radii <= 0):
        raise ValueError("sample radii must be positive")
    rng = np.random.default_rng(12345)
    dirs = rng.standard_normal((n_directions, spec.dim))
    dirs = np.vstack([np.eye(spec.dim), dirs])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    a = spec.alpha
    sf = np.empty(len(radii))
    sg = np.empty(len(radii))
    for k, r in enumerate(radii):
        pts = r * dirs
        fvals = np.linalg.norm(np.asarray([fn(p) for p in pts]), axis=1)
        sf[k] = np.max(fvals) * r ** a
        h = 1e-5 * r
        gvals = [np.linalg.norm(jacobian_fd(fn, p, h), 2) for p in pts]
        sg[k] = np.max(gvals) * r ** (1 + a)
    finite = bool(np.all(np.isfinite(sf)) and np.all(np.isfinite(sg)))
    ok = finite and _shell_growth(radii, sf) <= 1 + tol and _shell_growth(radii, sg) <= 1 + tol
    return SAlphaReport(float(np.max(sf)), float(np.max(sg)), ok, sf, sg)


def kepsilon(x_norm, eps: float, r_prime: float, alpha: float):
    """min(|x|^-(1+alpha), eps^-(1+r') |x|^-alpha), zero at the origin."""
    x = np.asarray(x_norm, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = np.minimum(xp ** (-(1 + alpha)), eps ** (-(1 + r_prime)) * xp ** (-alpha))
    return out if out.ndim else float(out)


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere S^(dim-1)."""
    return 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def l1_gap(spec: KernelSpec, rtol: float = 1e-8) -> float:
    """||F - F_N||_{L1(R^dim)} by radial quadrature."""
    if spec.cutoff is None:
        raise ValueError("l1_gap needs a cut-off kernel")
    d, a = spec.dim, spec.alpha
    if not a < d:
        raise ValueError(f"l1_gap needs alpha < dim, got alpha={a}, dim={d}")
    eta = spec.eta

    def diff(r):
        g_full = abs(spec.strength) * r ** (-a)
        g_cut = abs(float(radial_force(spec, np.array([r]))[0]))
        return r ** (d - 1) * abs(g_full - g_cut)

    omega = sphere_area(d)
    if spec.cutoff.profile == "exact":
        val, err = integrate.quad(diff, 0.0, eta, epsabs=0.0, epsrel=rtol, limit=200)
    else:
        if not a > d - 2:
            raise QuadratureError(
                f"plummer cut-off: |F - F_N| ~ r^-(2+alpha) is not integrable in R^{d} "
                f"for alpha={a} <= dim-2"
            )
        v1, e1 = integrate.quad(diff, 0.0, eta, epsabs=0.0, epsrel=rtol, limit=200)
        v2, e2 = integrate.quad(diff, eta, np.inf, epsabs=0.0, epsrel=rtol, limit=400)
        val, err = v1 + v2, e1 + e2
    if not np.isfinite(val) or err > max(rtol * abs(val), 1e-300) * 10:
        raise QuadratureError(f"radial quadrature did not converge (value={val}, err={err})")
    return float(omega * val)


def l1_distance(a: KernelSpec, b: KernelSpec, rtol: float = 1e-8) -> float:
    """||F_a - F_b||_{L1(R^dim)} for two kernels of the same dimension."""
    if a.dim != b.dim:
        raise ValueError("kernels live in different dimensions")
    if a == b:
        return 0.0
    if a.cutoff is None and b.cutoff is not None:
        a, b = b, a
    if b.cutoff is None and a.cutoff is not None and (a.alpha, a.strength) == (b.alpha, b.strength):
        return l1_gap(a, rtol)
    d = a.dim

    def diff(r):
        rr = np.array([r])
        return r ** (d - 1) * abs(float(radial_force(a, rr)[0] - radial_force(b, rr)[0]))

    pts = sorted({x for x in (a.eta, b.eta) if x > 0} | {1.0})
    edges = [0.0] + pts
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(diff, lo, hi, epsabs=0.0, epsrel=rtol, limit=200)
        total, err = total + v, err + e
    v, e = integrate.quad(diff, edges[-1], np.inf, epsabs=0.0, epsrel=rtol, limit=400)
    total, err = total + v, err + e
    if not np.isfinite(total) or err > max(rtol * abs(total), 1e-300) * 10:
        raise QuadratureError(f"||F_a - F_b||_1 did not converge (value={total}, err={err})")
    return float(sphere_area(d) * total)
