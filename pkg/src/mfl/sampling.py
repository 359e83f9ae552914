"""Initial data: i.i.d. draws from f0, mesh placement, blob smoothing and its sup norm.

Random draws use a Philox stream keyed by (seed, replica). Every particle
consumes a fixed number of uniforms (exact inverse transforms, no rejection),
so the first n particles of a larger sample are bit-identical to a sample of
size n.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from .particles import ParticleState

KINDS = ("uniform_ball", "uniform_cube", "truncated_gaussian", "product_1d")
MOLLIFIERS = ("uniform_ball", "uniform_cube")


def ball_volume(n: int, r: float = 1.0) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r ** n


@dataclass(frozen=True)
class DensitySpec:
    """Probability density f0 on phase space R^dim (dim = 2d), compactly supported.

    ``radius`` is the ball radius (ball kinds), the half side of the cube
    [-radius, radius]^dim (cube and product kinds), or the truncation radius
    of the Gaussian. ``sigma`` is only used by ``truncated_gaussian``.
    ``product_1d`` is the tensor product of tent densities (1 - |x|/a)/a.
    """

    kind: str
    dim: int
    radius: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"density.kind must be one of {KINDS}, got {self.kind!r}")
        if self.dim < 1:
            raise ValueError("density.dim must be >= 1")
        if not self.radius > 0 or not self.sigma > 0:
            raise ValueError("density.radius and density.sigma must be positive")

    @property
    def d(self) -> int:
        if self.dim % 2:
            raise ValueError(f"phase-space dimension {self.dim} is odd")
        return self.dim // 2

    @property
    def sup_norm(self) -> float:
        n, a = self.dim, self.radius
        if self.kind == "uniform_ball":
            return 1.0 / ball_volume(n, a)
        if self.kind in ("uniform_cube", "product_1d"):
            return (2 * a) ** -n if self.kind == "uniform_cube" else a ** -n
        s = self.sigma
        mass = (2 * math.pi * s * s) ** (n / 2) * stats.chi.cdf(a / s, n)
        return 1.0 / mass

    @property
    def support_radius(self) -> float:
        """R0 with supp f0 inside the closed ball B(0, R0)."""
        if self.kind in ("uniform_ball", "truncated_gaussian"):
            return self.radius
        return self.radius * math.sqrt(self.dim)

    @property
    def box_radius(self) -> float:
        """R0 with supp f0 inside [-R0, R0]^dim."""
        return self.radius

    def pdf(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        a = self.radius
        if self.kind == "uniform_ball":
            return np.where(np.sum(z * z, axis=1) <= a * a, self.sup_norm, 0.0)
        if self.kind == "uniform_cube":
            return np.where(np.all(np.abs(z) <= a, axis=1), self.sup_norm, 0.0)
        if self.kind == "product_1d":
            return np.prod(np.clip(1 - np.abs(z) / a, 0, None) / a, axis=1)
        r2 = np.sum(z * z, axis=1)
        return np.where(r2 <= a * a, self.sup_norm * np.exp(-r2 / (2 * self.sigma ** 2)), 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "radius": self.radius, "sigma": self.sigma}


def rng_for(seed: int, replica: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, replica)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


def _uniforms_per_particle(density: DensitySpec) -> int:
    return density.dim + (1 if density.kind in ("uniform_ball", "truncated_gaussian") else 0)


def sample_phase(density: DensitySpec, n: int, seed: int, replica: int = 0) -> np.ndarray:
    """(n, dim) i.i.d. draws from f0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = _uniforms_per_particle(density)
    u = rng_for(seed, replica).random((n, m))
    dim, a = density.dim, density.radius
    if density.kind == "uniform_cube":
        return a * (2 * u - 1)
    if density.kind == "product_1d":
        # inverse CDF of the symmetric tent on [-a, a]
        w = np.where(u < 0.5, np.sqrt(2 * u) - 1, 1 - np.sqrt(2 * (1 - u)))
        return a * w
    # isotropic kinds: Gaussian direction times an exact radial law
    g = special.ndtri(np.clip(u[:, :dim], 1e-300, 1 - 1e-16))
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    direction = g / norm
    if density.kind == "uniform_ball":
        r = a * u[:, dim] ** (1.0 / dim)
    else:
        s = density.sigma
        top = stats.chi.cdf(a / s, dim)
        r = np.minimum(s * stats.chi.ppf(u[:, dim] * top, dim), a)
    return direction * r[:, None]


def sample_iid(density: DensitySpec, n: int, seed: int, replica: int = 0) -> ParticleState:
    """N i.i.d. particles Z_i ~ f0 (deterministic given seed and replica)."""
    z = sample_phase(density, n, seed, replica)
    return ParticleState.from_phase(z, density.d)


def mesh_points(n_per_axis: int, box) -> np.ndarray:
    """Cell centers of the uniform n_per_axis^dim grid over ``box = (lo, hi)``."""
    lo = np.atleast_1d(np.asarray(box[0], dtype=float))
    hi = np.atleast_1d(np.asarray(box[1], dtype=float))
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError("box must be (lo, hi) with hi > lo componentwise")
    dim = lo.size
    if n_per_axis < 1:
        raise ValueError("n_per_axis must be >= 1")
    if dim * math.log2(n_per_axis) >= 31:
        raise OverflowError(f"{n_per_axis}^{dim} particles is too many")
    axes = [lo[k] + (np.arange(n_per_axis) + 0.5) * (hi[k] - lo[k]) / n_per_axis for k in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def mesh_init(n_per_axis: int, box) -> ParticleState:
    """Particles on the cell centers of a uniform grid over a box in R^{2d}."""
    z = mesh_points(n_per_axis, box)
    if z.shape[1] % 2:
        raise ValueError("mesh box must live in an even-dimensional phase space")
    return ParticleState.from_phase(z, z.shape[1] // 2)


def epsilon_scale(n: int, gamma: float, dim_d: int) -> float:
    """eps(N) = N^(-gamma/2d)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(n ** (-gamma / (2 * dim_d)))


def sobol_points(density: DensitySpec, n: int, seed: int = 0) -> np.ndarray:
    """Scrambled low-discrepancy discretization of a uniform cube density."""
    if density.kind != "uniform_cube":
        raise ValueError("sobol_points supports uniform_cube densities only")
    u = qmc.Sobol(density.dim, scramble=True, seed=seed).random(n)
    return density.radius * (2 * u - 1)


# ---------------------------------------------------------------------------
# blobs

@dataclass(frozen=True)
class Mollifier:
    """Indicator mollifier: unit ball, or cube [-side/2, side/2]^n, normalized to mass 1."""

    kind: str = "uniform_ball"
    side: float = 1.0

    def __post_init__(self):
        if self.kind not in MOLLIFIERS:
            raise ValueError(f"phi must be one of {MOLLIFIERS}, got {self.kind!r}")

    def sup(self, n: int) -> float:
        if self.kind == "uniform_ball":
            return 1.0 / ball_volume(n)
        return self.side ** -n

    def c_phi(self, n: int) -> float:
        """Smallest c with supp phi inside B(0, c) (Euclidean)."""
        if self.kind == "uniform_ball":
            return 1.0
        return 0.5 * self.side * math.sqrt(n)


def _as_mollifier(phi) -> Mollifier:
    if phi is None:
        return Mollifier()
    if isinstance(phi, Mollifier):
        return phi
    return Mollifier(str(phi))


@dataclass(frozen=True, eq=False)
class BlobMeasure:
    """f_N = mu_N * phi_eps with phi_eps = eps^-n phi(./eps)."""

    base: ParticleState
    eps: float
    phi: Mollifier = Mollifier()

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        object.__setattr__(self, "phi", _as_mollifier(self.phi))

    @property
    def n_dim(self) -> int:
        return 2 * self.base.dim

    @property
    def c_phi(self) -> float:
        return self.phi.c_phi(self.n_dim)

    def density(self, z) -> np.ndarray:
        """Evaluate f_N at points z of shape (m, 2d)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        pts = self.base.phase
        out = np.zeros(len(z))
        for start in range(0, len(z), 4096):
            diff = (z[start:start + 4096, None, :] - pts[None, :, :]) / self.eps
            if self.phi.kind == "uniform_ball":
                inside = np.sum(diff * diff, axis=-1) <= 1.0
            else:
                inside = np.all(np.abs(diff) <= self.phi.side / 2, axis=-1)
            out[start:start + 4096] = inside.sum(axis=1)
        return out * self.phi.sup(self.n_dim) / (self.base.n * self.eps ** self.n_dim)


def _cover_counts(pts: np.ndarray, h: float) -> int:
    """max_k #{i : |c_k - Z_i|_inf <= h} over the grid of cube centers c_k = (k + 1/2) h.

    Point Z lies in the doubled cube of c_k iff k is in {floor(Z/h - 1/2), +1}
    on every axis (ties on the boundary are assigned to one side only, which
    cannot lower the maximum below the exact closed-cube count).
    """
    n = pts.shape[1]
    base = np.floor(pts / h - 0.5).astype(np.int64)
    offsets = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
    # every point lies in the 2^n doubled cubes base + offset
    keys = (base[:, None, :] + offsets[None, :, :]).reshape(-1, n)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    return int(counts.max())


def _window_max(x: np.ndarray, h: float) -> int:
    x = np.sort(x)
    return int(np.max(np.searchsorted(x, x + h, side="right") - np.arange(len(x))))


def _max_cube_count(pts: np.ndarray, h: float) -> int:
    """Exact max number of points inside a closed axis-aligned cube of side h.

    Some optimal cube has, on every axis, a point on its lower face; we sweep
    the candidates axis by axis. A branch is pruned when the best sliding
    window count on any remaining axis cannot beat the incumbent.
    """
    best = 0

    def rec(sub: np.ndarray, axis: int):
        nonlocal best
        if len(sub) <= best:
            return
        if axis == sub.shape[1]:
            best = len(sub)
            return
        if min(_window_max(sub[:, k], h) for k in range(axis, sub.shape[1])) <= best:
            return
        order = np.argsort(sub[:, axis], kind="stable")
        s = sub[order]
        x = s[:, axis]
        hi = np.searchsorted(x, x + h, side="right")
        counts = hi - np.arange(len(x))
        for i in np.argsort(-counts, kind="stable"):
            if counts[i] <= best:
                break
            if i > 0 and x[i] == x[i - 1]:
                continue
            rec(s[i:hi[i]], axis + 1)

    rec(np.asarray(pts, dtype=float), 0)
    return best


def blob_sup_norm(state: ParticleState, eps: float, phi=None, exact: bool = False) -> float:
    """Upper estimate of ||f_N||_inf from the cube-cover argument.

    Returns ||phi||_inf * max_k H_k / (N eps^n) where H_k counts particles in
    the doubled cube of side 2 L eps around each cover cube of side L eps.
    For the cube indicator this over-estimates the true sup by at most 2^n;
    for the ball indicator the ball is replaced by its bounding cube (L = 2).
    With ``exact=True`` returns the exact sup of f_N instead (cube indicator).
    """
    phi = _as_mollifier(phi)
    pts = state.phase
    n = pts.shape[1]
    side = phi.side if phi.kind == "uniform_cube" else 2.0
    h = side * eps
    if exact:
        if phi.kind != "uniform_cube":
            raise ValueError("exact sup is implemented for the cube indicator")
        count = _max_cube_count(pts, h)
    else:
        count = _cover_counts(pts, h)
    return phi.sup(n) * count / (state.n * eps ** n)


def blob_sup_norm_exact(state: ParticleState, eps: float, phi=None) -> float:
    return blob_sup_norm(state, eps, phi, exact=True)


def _sobol(dim: int, m: int) -> np.ndarray:
    # a fixed prefix of a scrambled sequence; balance for non powers of 2 is not needed
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return qmc.Sobol(dim, scramble=True, seed=7).random(m)


@lru_cache(maxsize=64)
def _pattern(k: int, n: int, kind: str, boundary: bool) -> np.ndarray:
    """k nodes in the unit ball (or [-1/2,1/2]^n): first node at the origin."""
    nodes = np.zeros((k, n))
    if k == 1:
        return nodes
    m = k - 1
    if kind == "uniform_cube":
        u = _sobol(n, m) - 0.5
        if boundary:
            # push every node radially onto the cube surface
            u = 0.5 * u / np.max(np.abs(u), axis=1, keepdims=True)
        nodes[1:] = u
        return nodes
    u = _sobol(n + 1, m)
    g = special.ndtri(np.clip(u[:, :n], 1e-12, 1 - 1e-12))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = np.ones(m) if boundary else u[:, n] ** (1.0 / n)
    nodes[1:] = g * r[:, None]
    return nodes


def blob_quadrature(state: ParticleState, eps: float, phi=None, k_per_blob: int = 1,
                    boundary: bool = False):
    """Discretize f_N by k nodes per particle, each of weight 1/(N k).

    Nodes come from a fixed scrambled Sobol pattern inside supp phi scaled by
    eps; the first node sits at the particle. ``boundary=True`` places the
    remaining nodes on the boundary of the support (extremal pattern).
    Returns (points, weights, parent) with ``parent[m]`` the particle index.
    """
    if k_per_blob < 1:
        raise ValueError("k_per_blob must be >= 1")
    phi = _as_mollifier(phi)
    z = state.phase
    n = z.shape[1]
    pattern = _pattern(int(k_per_blob), n, phi.kind, bool(boundary))
    if phi.kind == "uniform_cube":
        pattern = pattern * phi.side
    pts = (z[:, None, :] + eps * pattern[None, :, :]).reshape(-1, n)
    weights = np.full(len(pts), 1.0 / len(pts))
    parent = np.repeat(np.arange(state.n), k_per_blob)
    return pts, weights, parent
