"""Reference solutions of the Vlasov equation.

d = 1: semi-Lagrangian Strang splitting on a cell-centered (x, v) grid.
d >= 2: a single high-N particle run used as a surrogate for f(t).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .kernels import KernelSpec, l1_distance, radial_force
from .particles import TrajectoryWindow, simulate
from .sampling import DensitySpec, sample_iid
from .transport import WeightedCloud, w1

log = logging.getLogger(__name__)

SUPPORT_THRESHOLD = 1e-12


class CFLError(RuntimeError):
    pass


class GridBoundaryError(RuntimeError):
    pass


@dataclass(eq=False)
class PhaseGrid:
    """Density on the tensor grid x_nodes x v_nodes (cell centers, uniform spacing)."""

    x_nodes: np.ndarray
    v_nodes: np.ndarray
    values: np.ndarray
    time: float = 0.0
    mass_drift: float = 0.0

    def __post_init__(self):
        self.x_nodes = np.asarray(self.x_nodes, dtype=float)
        self.v_nodes = np.asarray(self.v_nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.x_nodes), len(self.v_nodes)):
            raise ValueError("values must have shape (len(x_nodes), len(v_nodes))")
        for nodes in (self.x_nodes, self.v_nodes):
            if len(nodes) > 2 and not np.allclose(np.diff(nodes), nodes[1] - nodes[0], rtol=1e-10):
                raise ValueError("grid nodes must be uniformly spaced")

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])

    @property
    def dv(self) -> float:
        return float(self.v_nodes[1] - self.v_nodes[0])

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.dx * self.dv)

    def density_x(self) -> np.ndarray:
        """rho(x) by midpoint rule in v."""
        return self.values.sum(axis=1) * self.dv

    @classmethod
    def from_function(cls, fn, x_range, v_range, nx: int, nv: int, normalize: bool = True):
        x = x_range[0] + (np.arange(nx) + 0.5) * (x_range[1] - x_range[0]) / nx
        v = v_range[0] + (np.arange(nv) + 0.5) * (v_range[1] - v_range[0]) / nv
        X, V = np.meshgrid(x, v, indexing="ij")
        vals = np.asarray(fn(X, V), dtype=float)
        g = cls(x, v, vals)
        if normalize:
            g.values = vals / g.mass
        return g


def bump_density(x0: float = 0.0, v0: float = 0.0, rx: float = 1.0, rv: float = 1.0,
                 power: int = 3):
    """Compactly supported profile (1 - |z|^2)^power on an ellipse."""
    def fn(X, V):
        r2 = ((X - x0) / rx) ** 2 + ((V - v0) / rv) ** 2
        return np.where(r2 < 1, (1 - np.minimum(r2, 1)) ** power, 0.0)
    return fn


def field_from_density(grid: PhaseGrid, kernel: KernelSpec) -> np.ndarray:
    """E(x_i) = sum_{j != i} F(x_i - x_j) rho(x_j) dx (d = 1)."""
    if kernel.dim != 1:
        raise ValueError("grid solver is one-dimensional")
    rho = grid.density_x()
    nx = len(rho)
    offsets = np.arange(-(nx - 1), nx) * grid.dx
    taps = np.sign(offsets) * radial_force(kernel, np.abs(offsets))
    return np.convolve(rho, taps)[nx - 1:2 * nx - 1] * grid.dx


def _lagrange_weights(p: float) -> np.ndarray:
    """Cubic Lagrange weights for nodes -1, 0, 1, 2 evaluated at p in [0, 1)."""
    return np.array([
        -p * (p - 1) * (p - 2) / 6,
        (p + 1) * (p - 1) * (p - 2) / 2,
        -(p + 1) * p * (p - 2) / 2,
        (p + 1) * p * (p - 1) / 6,
    ])


def _shift_rows(values: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """out[k, i] = f_k(i - shifts[k]) by cubic interpolation, zero outside.

    A constant shift per row makes the update a short convolution whose
    weights sum to one, so mass is conserved up to what leaves the grid.
    """
    nrow, n = values.shape
    out = np.zeros_like(values)
    for k in range(nrow):
        s = shifts[k]
        m = math.floor(-s)
        p = -s - m
        w = _lagrange_weights(p)
        # position i - s = i + m + p, stencil nodes i + m - 1 .. i + m + 2
        row = values[k]
        reach = abs(m) + 3
        if reach >= n:
            continue
        acc = np.zeros(n)
        for t, wt in enumerate(w):
            off = m - 1 + t
            lo = max(0, -off)
            hi = min(n, n - off)
            if lo < hi:
                acc[lo:hi] += wt * row[lo + off:hi + off]
        out[k] = acc
    return out


def _advect_x(values, v_nodes, dx, dt):
    return _shift_rows(values.T, v_nodes * dt / dx).T


def _advect_v(values, E, dv, dt):
    return _shift_rows(values, E * dt / dv)


def _boundary_mass(values, width=2):
    edge = np.concatenate([values[:width].ravel(), values[-width:].ravel(),
                           values[:, :width].ravel(), values[:, -width:].ravel()])
    return float(edge.max()) if edge.size else 0.0


def semi_lagrangian_step(grid: PhaseGrid, kernel: KernelSpec, dt: float) -> PhaseGrid:
    """Strang splitting: x half step, v full step with the mid field, x half step."""
    vmax = float(np.max(np.abs(grid.v_nodes)))
    if vmax * dt > 5 * grid.dx:
        raise CFLError(f"CFL violated: max|v| dt = {vmax * dt:.3g} > 5 dx = {5 * grid.dx:.3g}")
    m0 = grid.values.sum()
    f = _advect_x(grid.values, grid.v_nodes, grid.dx, dt / 2)
    mid = PhaseGrid(grid.x_nodes, grid.v_nodes, f, grid.time + dt / 2)
    E = field_from_density(mid, kernel)
    if np.max(np.abs(E)) * dt > 5 * grid.dv:
        raise CFLError("CFL violated in v: max|E| dt > 5 dv")
    f = _advect_v(f, E, grid.dv, dt)
    f = _advect_x(f, grid.v_nodes, grid.dx, dt / 2)
    drift = abs(f.sum() - m0) / m0
    np.maximum(f, 0.0, out=f)
    if _boundary_mass(f) > SUPPORT_THRESHOLD:
        raise GridBoundaryError(f"support reached the grid boundary at t={grid.time + dt:.6g}")
    f *= m0 / f.sum()
    if drift > 1e-8:
        log.warning("grid mass drift %.3e in one step", drift)
    return PhaseGrid(grid.x_nodes, grid.v_nodes, f, grid.time + dt, drift)


def evolve_grid(grid: PhaseGrid, kernel: KernelSpec, dt: float, n_steps: int,
                record_every: int = 1) -> List[PhaseGrid]:
    history = [grid]
    g = grid
    for k in range(1, n_steps + 1):
        g = semi_lagrangian_step(g, kernel, dt)
        if k % record_every == 0:
            history.append(g)
    return history


# ---------------------------------------------------------------------------
# support growth

def closed_form_support_bound(K0: float, C: float, alpha: float, t):
    """Solution of K' = C K^alpha, K(0) = K0 (alpha < 1)."""
    t = np.asarray(t, dtype=float)
    if alpha >= 1:
        raise ValueError("closed form needs alpha < 1")
    return (K0 ** (1 - alpha) + (1 - alpha) * C * t) ** (1 / (1 - alpha))


@dataclass
class SupportBounds:
    times: np.ndarray
    R_of_t: np.ndarray
    K_of_t: np.ndarray
    K_bound: np.ndarray = field(default=None)
    R_bound: np.ndarray = field(default=None)
    C_hat: float = float("nan")
    passed: bool = False


def measured_support(grid: PhaseGrid, threshold: float = SUPPORT_THRESHOLD):
    """(R, K): largest |x| and |v| of nodes carrying density above threshold."""
    mask = grid.values > threshold
    if not mask.any():
        return 0.0, 0.0
    R = float(np.max(np.abs(grid.x_nodes[mask.any(axis=1)])))
    K = float(np.max(np.abs(grid.v_nodes[mask.any(axis=0)])))
    return R, K


def support_bounds_monitor(history: Sequence[PhaseGrid], kernel: KernelSpec,
                           threshold: float = SUPPORT_THRESHOLD) -> SupportBounds:
    """Measured R(t), K(t) (running sup) against the support-growth estimate.

    The estimate gives K(t) <= K0 + C' int K^alpha with
    C' = C ||f0||_inf^(alpha/d) ||f0||_1^(1-alpha/d). C' is fitted at t = 0+
    as |E(0)|_inf / K0^alpha, and the comparison ODE is solved in closed form.
    """
    times = np.array([g.time for g in history])
    RK = np.array([measured_support(g, threshold) for g in history])
    R = np.maximum.accumulate(RK[:, 0])
    K = np.maximum.accumulate(RK[:, 1])
    t = times - times[0]
    a = kernel.alpha
    E0 = float(np.max(np.abs(field_from_density(history[0], kernel))))
    K0, R0 = K[0], R[0]
    if kernel.strength == 0.0 or E0 == 0.0:
        Kb = np.full_like(t, K0)
        C = 0.0
    else:
        C = E0 / K0 ** a
        Kb = closed_form_support_bound(K0, C, a, t)
    # R(t) <= R0 + int K, trapezoid on the bound
    Rb = R0 + np.concatenate([[0.0], np.cumsum(np.diff(t) * (Kb[1:] + Kb[:-1]) / 2)])
    # one grid cell of slack for the node-based support measurement
    tol_k = abs(history[0].dv)
    tol_r = abs(history[0].dx)
    ok = bool(np.all(K <= Kb + tol_k * 1e-9) and np.all(R <= Rb + tol_r))
    return SupportBounds(times, R, K, Kb, Rb, C, ok)


# ---------------------------------------------------------------------------
# particle reference and stability probe

def particle_reference(density: DensitySpec, n_ref: int, seed: int, kernel: KernelSpec,
                       dt: float, t_end: float, record_every: int = 1,
                       replica: int = 0, threads: Optional[int] = 1) -> TrajectoryWindow:
    """High-N particle run used as the surrogate for f(t) in W1 comparisons."""
    state = sample_iid(density, n_ref, seed, replica)
    n_steps = int(round(t_end / dt))
    return simulate(state, kernel, dt, n_steps, record_every=record_every, threads=threads)


def resolution_floor(ref_full: TrajectoryWindow, ref_half: TrajectoryWindow, n: int,
                     indices: Optional[np.ndarray] = None) -> np.ndarray:
    """W1 at every sample between the same n particles taken from the n_ref and
    n_ref/2 runs. Both runs start from identical particles (prefix-stable
    sampling), so the value isolates the field resolution of the reference."""
    idx = np.arange(n) if indices is None else np.asarray(indices)
    out = []
    for a, b in zip(ref_full.states, ref_half.states):
        out.append(w1(WeightedCloud(a.phase[idx]), WeightedCloud(b.phase[idx])).cost)
    return np.array(out)


def grid_to_cloud(grid: PhaseGrid, max_cells: int = 400, threshold: float = 0.0) -> WeightedCloud:
    """Coarse-grain a grid into at most ~max_cells weighted Diracs at block centers of mass."""
    nx, nv = grid.values.shape
    b = 1
    while math.ceil(nx / b) * math.ceil(nv / b) > max_cells:
        b += 1
    X, V = np.meshgrid(grid.x_nodes, grid.v_nodes, indexing="ij")
    m = grid.values * grid.dx * grid.dv
    pts, wts = [], []
    for i in range(0, nx, b):
        for j in range(0, nv, b):
            mm = m[i:i + b, j:j + b]
            s = mm.sum()
            if s > threshold:
                pts.append([np.sum(mm * X[i:i + b, j:j + b]) / s, np.sum(mm * V[i:i + b, j:j + b]) / s])
                wts.append(s)
    wts = np.array(wts)
    return WeightedCloud(np.array(pts), wts / wts.sum())


@dataclass
class LoeperProbe:
    times: np.ndarray
    w1: np.ndarray
    forcing: float
    C_fit: float
    envelope: np.ndarray


def _envelope_fit(times, vals, forcing):
    base = vals[0] + forcing
    if base <= 0:
        return 0.0, np.zeros_like(vals)
    t = times - times[0]
    pos = t > 0
    C = 0.0
    if np.any(pos):
        C = max(0.0, float(np.max(np.log(np.maximum(vals[pos], 1e-300) / base) / t[pos])))
    return C, base * np.exp(C * t)


def loeper_probe(f0, kernel_1: KernelSpec, kernel_2: KernelSpec, t_end: float, dt: float,
                 n_particles: int = 512, seed: int = 0, n_samples: int = 8,
                 max_cells: int = 400) -> LoeperProbe:
    """Evolve the same data under F1 and F2 and fit the Gronwall envelope
    W1(t) <= (W1(0) + ||F1 - F2||_1) exp(C t)."""
    n_steps = int(round(t_end / dt))
    every = max(1, n_steps // n_samples)
    forcing = l1_distance(kernel_1, kernel_2)
    if isinstance(f0, PhaseGrid):
        h1 = evolve_grid(f0, kernel_1, dt, n_steps, every)
        h2 = h1 if kernel_1 == kernel_2 else evolve_grid(f0, kernel_2, dt, n_steps, every)
        times = np.array([g.time for g in h1])
        vals = np.array([0.0 if g1 is g2 else
                         w1(grid_to_cloud(g1, max_cells), grid_to_cloud(g2, max_cells)).cost
                         for g1, g2 in zip(h1, h2)])
    else:
        state = sample_iid(f0, n_particles, seed)
        t1 = simulate(state, kernel_1, dt, n_steps, record_every=every)
        t2 = t1 if kernel_1 == kernel_2 else simulate(state, kernel_2, dt, n_steps, record_every=every)
        times = t1.times
        vals = np.array([0.0 if t1 is t2 else w1(WeightedCloud(a.phase), WeightedCloud(b.phase)).cost
                         for a, b in zip(t1.states, t2.states)])
    C, env = _envelope_fit(times, vals, forcing)
    return LoeperProbe(times, vals, forcing, C, env)
