"""N-particle mean-field dynamics and trajectory diagnostics.

The system is dX_i/dt = V_i, dV_i/dt = (1/N) sum_{j != i} F(X_i - X_j),
integrated with velocity Verlet at a fixed step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .kernels import KernelSpec

_PROFILE_CODE = {None: 0, "exact": 1, "plummer": 2}


class NonFiniteStateError(FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True, eq=False)
class ParticleState:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.array(self.positions, dtype=float, copy=True)
        v = np.array(self.velocities, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
            v = v.reshape(x.shape)
        if x.shape != v.shape or x.ndim != 2:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} must both be (N, d)")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise NonFiniteStateError("particle state contains non-finite entries")
        x.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def phase(self) -> np.ndarray:
        """(N, 2d) array of phase-space points Z_i = (X_i, V_i)."""
        return np.hstack([self.positions, self.velocities])

    @classmethod
    def from_phase(cls, z, dim: int, time: float = 0.0) -> "ParticleState":
        z = np.asarray(z, dtype=float)
        return cls(z[:, :dim], z[:, dim:], time)

    def permuted(self, perm) -> "ParticleState":
        return ParticleState(self.positions[perm], self.velocities[perm], self.time)


@dataclass
class TrajectoryWindow:
    """Time-ordered states sampled every ``dt``; ``tau`` is the averaging window."""

    states: List[ParticleState]
    dt: float
    tau: Optional[float] = None
    near_collision_steps: int = 0
    min_position_distance: float = math.inf
    _stack: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.states:
            raise ValueError("empty trajectory")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        t = self.times
        if len(t) > 1 and not np.allclose(np.diff(t), self.dt, rtol=1e-9, atol=1e-12):
            raise ValueError("states are not uniformly spaced by dt")
        if self.tau is None:
            self.tau = max(t[-1] - t[0], self.dt)
        ratio = self.tau / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"tau={self.tau} is not an integer multiple of dt={self.dt}")

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def n(self) -> int:
        return self.states[0].n

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def arrays(self):
        """Stacked (T, N, d) positions and velocities."""
        if self._stack is None:
            self._stack = (np.stack([s.positions for s in self.states]),
                           np.stack([s.velocities for s in self.states]))
        return self._stack

    def window(self, t: float, tau: float) -> "TrajectoryWindow":
        """Sub-window of the samples in [max(0, t - tau), t]."""
        times = self.times
        hi = int(np.argmin(np.abs(times - t)))
        if abs(times[hi] - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise ValueError(f"time {t} is not a sample of this trajectory")
        k = int(round(tau / self.dt))
        lo = max(0, hi - k)
        return TrajectoryWindow(self.states[lo:hi + 1], self.dt, tau)


# ---------------------------------------------------------------------------
# O(N^2) kernels

@nb.njit(cache=True, inline="always")
def _rpow(s, p):
    # s ** p with sqrt-only fast paths for the common exponents
    if p == -0.75:
        q = math.sqrt(s)
        return 1.0 / (q * math.sqrt(q))
    if p == -1.5:
        return 1.0 / (s * math.sqrt(s))
    if p == -1.0:
        return 1.0 / s
    if p == -0.5:
        return 1.0 / math.sqrt(s)
    return s ** p


@nb.njit(cache=True, inline="always")
def _weight(r2, c, p, eta2, eta_pow, code):
    # F(dx) = weight * dx
    if r2 == 0.0:
        return 0.0
    if code == 0:
        return c * _rpow(r2, p)
    if code == 1:
        if r2 >= eta2:
            return c * _rpow(r2, p)
        return c * eta_pow
    return c * _rpow(r2 + eta2, p)


_PAIR_KERNELS: dict = {}


def _pair_kernel(d, p, code, track):
    """Serial pairwise kernel compiled with dimension, exponent and profile frozen."""
    key = (d, p, code, track)
    if key in _PAIR_KERNELS:
        return _PAIR_KERNELS[key]

    @nb.njit(inline="always")
    def rpow(s):
        if p == -0.75:
            q = math.sqrt(s)
            return 1.0 / (q * math.sqrt(q))
        elif p == -1.5:
            return 1.0 / (s * math.sqrt(s))
        elif p == -1.0:
            return 1.0 / s
        else:
            return s ** p

    @nb.njit
    def kern(X, V, c, eta2, eta_pow, inv_n, lim):
        # Each pair is evaluated once and applied with opposite signs, so the
        # total force vanishes up to rounding.
        n = X.shape[0]
        acc = np.zeros((n, d))
        dx = np.empty(d)
        ai = np.empty(d)
        min_r2 = np.inf
        flagged = 0
        for i in range(n):
            for k in range(d):
                ai[k] = 0.0
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(d):
                    dx[k] = X[i, k] - X[j, k]
                    r2 += dx[k] * dx[k]
                if track:
                    if r2 < min_r2:
                        min_r2 = r2
                    dv2 = 0.0
                    for k in range(d):
                        t = V[i, k] - V[j, k]
                        dv2 += t * t
                    if r2 < lim * dv2:
                        flagged += 1
                if r2 == 0.0:
                    continue
                if code == 0:
                    w = c * rpow(r2)
                elif code == 1:
                    w = c * rpow(r2) if r2 >= eta2 else c * eta_pow
                else:
                    w = c * rpow(r2 + eta2)
                for k in range(d):
                    f = w * dx[k]
                    ai[k] += f
                    acc[j, k] -= f
            for k in range(d):
                acc[i, k] += ai[k]
        for i in range(n):
            for k in range(d):
                acc[i, k] *= inv_n
        return acc, min_r2, flagged

    _PAIR_KERNELS[key] = kern
    return kern


@nb.njit(cache=True, parallel=True)
def _acc_rows(X, c, p, eta2, eta_pow, code, inv_n):
    n, d = X.shape
    acc = np.zeros((n, d))
    for i in nb.prange(n):
        s = np.zeros(d)
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(d):
                t = X[i, k] - X[j, k]
                r2 += t * t
            w = _weight(r2, c, p, eta2, eta_pow, code)
            for k in range(d):
                s[k] += w * (X[i, k] - X[j, k])
        for k in range(d):
            acc[i, k] = s[k] * inv_n
    return acc


@nb.njit(cache=True)
def _field_at(points, X, c, p, eta2, eta_pow, code, inv_n):
    m, d = points.shape
    n = X.shape[0]
    out = np.zeros((m, d))
    for i in range(m):
        for j in range(n):
            r2 = 0.0
            for k in range(d):
                t = points[i, k] - X[j, k]
                r2 += t * t
            w = _weight(r2, c, p, eta2, eta_pow, code)
            for k in range(d):
                out[i, k] += w * (points[i, k] - X[j, k])
        for k in range(d):
            out[i, k] *= inv_n
    return out


@nb.njit(cache=True)
def _potential_pairs(X, c, a, eta, code):
    n, d = X.shape
    total = 0.0
    comp = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(d):
                t = X[i, k] - X[j, k]
                r2 += t * t
            r = math.sqrt(r2)
            if code == 2:
                s2 = r2 + eta * eta
                if a == 1.0:
                    phi = -0.5 * c * math.log(s2)
                else:
                    phi = -c * s2 ** ((1 - a) / 2) / (1 - a)
            elif code == 1 and r < eta:
                if a == 1.0:
                    outer = -c * math.log(eta)
                else:
                    outer = -c * eta ** (1 - a) / (1 - a)
                phi = -c * r2 / (2 * eta ** (1 + a)) + c * eta ** (1 - a) / 2 + outer
            else:
                if a == 1.0:
                    phi = -c * math.log(r)
                else:
                    phi = -c * r ** (1 - a) / (1 - a)
            y = phi - comp
            t = total + y
            comp = (t - total) - y
            total = t
    return total


def _kernel_args(kernel: KernelSpec):
    code = _PROFILE_CODE[None if kernel.cutoff is None else kernel.cutoff.profile]
    eta = kernel.eta
    p = -(1.0 + kernel.alpha) / 2.0
    eta_pow = eta ** (-(1.0 + kernel.alpha)) if code == 1 else 0.0
    return float(kernel.strength), p, eta * eta, eta_pow, code


def _threads(threads):
    return nb.get_num_threads() if threads is None else int(threads)


def accelerations(state: ParticleState, kernel: KernelSpec, threads: Optional[int] = 1,
                  _track=None):
    """Mean-field accelerations E_N(X_i) = (1/N) sum_{j != i} F(X_i - X_j).

    ``threads=1`` uses the pairwise (action-reaction) sum in lexicographic
    order and is bit-reproducible. More threads parallelize over i.
    """
    X = np.ascontiguousarray(state.positions)
    if state.dim != kernel.dim:
        raise ValueError(f"state dim {state.dim} != kernel dim {kernel.dim}")
    if state.n == 1:
        return (np.zeros_like(X), math.inf, 0) if _track is not None else np.zeros_like(X)
    if kernel.strength == 0.0 and _track is None:
        return np.zeros_like(X)
    c, p, eta2, eta_pow, code = _kernel_args(kernel)
    inv_n = 1.0 / state.n
    if _threads(threads) > 1 and _track is None:
        return _acc_rows(X, c, p, eta2, eta_pow, code, inv_n)
    V = np.ascontiguousarray(state.velocities)
    dt = 0.0 if _track is None else float(_track)
    kern = _pair_kernel(state.dim, p, code, _track is not None)
    acc, min_r2, flagged = kern(X, V, c, eta2, eta_pow, inv_n, (10.0 * dt) ** 2)
    if _track is not None:
        return acc, math.sqrt(min_r2), int(flagged)
    return acc


def field_at(points, state: ParticleState, kernel: KernelSpec) -> np.ndarray:
    """Field of the empirical measure at arbitrary positions, F(0) = 0 convention."""
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    c, p, eta2, eta_pow, code = _kernel_args(kernel)
    return _field_at(pts, np.ascontiguousarray(state.positions), c, p, eta2, eta_pow, code,
                     1.0 / state.n)


def _check_finite(x, v, step):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise NonFiniteStateError(f"non-finite particle state at step {step}", step=step)


def step_verlet(state: ParticleState, kernel: KernelSpec, dt: float,
                acc: Optional[np.ndarray] = None, threads: Optional[int] = 1):
    """One velocity-Verlet step. Returns the new state."""
    new, _ = _verlet(state, kernel, dt, acc, threads)
    return new


def _verlet(state, kernel, dt, acc, threads, track=False, step=0):
    if not dt > 0:
        raise ValueError("dt must be positive")
    a0 = accelerations(state, kernel, threads) if acc is None else acc
    with np.errstate(over="ignore", invalid="ignore"):
        X = state.positions + state.velocities * dt + 0.5 * a0 * dt * dt
    probe = ParticleState.__new__(ParticleState)
    object.__setattr__(probe, "positions", X)
    object.__setattr__(probe, "velocities", state.velocities)
    object.__setattr__(probe, "time", state.time + dt)
    if not np.all(np.isfinite(X)):
        raise NonFiniteStateError(f"non-finite positions at step {step}", step=step)
    info = None
    if track:
        a1, dmin, flagged = accelerations(probe, kernel, 1, _track=dt)
        info = (dmin, flagged)
    else:
        a1 = accelerations(probe, kernel, threads)
    with np.errstate(over="ignore", invalid="ignore"):
        V = state.velocities + 0.5 * (a0 + a1) * dt
    _check_finite(X, V, step)
    return ParticleState(X, V, state.time + dt), (a1, info)


def simulate(state: ParticleState, kernel: KernelSpec, dt: float, n_steps: int,
             record_every: int = 1, track_collisions: bool = False,
             threads: Optional[int] = 1,
             callback: Optional[Callable[[int, ParticleState], None]] = None) -> TrajectoryWindow:
    """Integrate ``n_steps`` Verlet steps, keeping every ``record_every``-th state.

    With ``track_collisions`` the run records the minimal position-space pair
    distance and counts steps containing a pair with |dX| < 10 dt |dV|.
    """
    states = [state]
    acc = accelerations(state, kernel, threads)
    flagged_steps = 0
    dmin = math.inf
    cur = state
    for k in range(1, n_steps + 1):
        cur, (acc, info) = _verlet(cur, kernel, dt, acc, threads, track_collisions, step=k)
        if info is not None:
            dmin = min(dmin, info[0])
            flagged_steps += info[1] > 0
        if k % record_every == 0:
            states.append(cur)
        if callback is not None:
            callback(k, cur)
    return TrajectoryWindow(states, dt * record_every, near_collision_steps=flagged_steps,
                            min_position_distance=dmin)


# ---------------------------------------------------------------------------
# diagnostics

def min_pair_distance(state: ParticleState, space: str = "phase") -> float:
    """d_N: minimal distance between two particles in R^{2d} (or positions only)."""
    if state.n < 2:
        raise ValueError("min_pair_distance needs at least two particles")
    pts = state.phase if space == "phase" else state.positions
    if state.n <= 64:
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = np.sum(diff * diff, axis=-1)
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(d2.min()))
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].min())


def support_radius(obj) -> float | np.ndarray:
    """max_i |(X_i, V_i)| for a state; running supremum over samples for a trajectory."""
    if isinstance(obj, ParticleState):
        return float(np.sqrt(np.max(np.sum(obj.phase ** 2, axis=1))))
    vals = np.array([support_radius(s) for s in obj.states])
    return np.maximum.accumulate(vals)


def field_sup(state: ParticleState, kernel: KernelSpec) -> float:
    """max_i |E_N(X_i)|."""
    a = accelerations(state, kernel)
    return float(np.sqrt(np.max(np.sum(a * a, axis=1))))


@nb.njit(cache=True)
def _ratio_accumulate(X, E, floor, weight, out):
    n, d = X.shape
    for i in range(n):
        for j in range(i + 1, n):
            dx2 = 0.0
            de2 = 0.0
            for k in range(d):
                t = X[i, k] - X[j, k]
                dx2 += t * t
                t = E[i, k] - E[j, k]
                de2 += t * t
            out[i, j] += weight * math.sqrt(de2) / (math.sqrt(dx2) + floor)


def _trapezoid_weights(times, t_lo, t_hi):
    """Trapezoid weights for samples restricted to [t_lo, t_hi]."""
    w = np.zeros(len(times))
    idx = np.nonzero((times >= t_lo - 1e-12) & (times <= t_hi + 1e-12))[0]
    for a, b in zip(idx[:-1], idx[1:]):
        h = times[b] - times[a]
        w[a] += h / 2
        w[b] += h / 2
    return w


def _window_weights(window: TrajectoryWindow):
    times = window.times
    t = times[-1]
    tau = window.tau
    lo = t - tau
    if times[0] > lo + 1e-9 * max(1.0, tau):
        if abs(times[0]) > 1e-12:
            raise ValueError("window is shorter than tau and does not start at t=0")
        # integrand is zero for negative times
    return _trapezoid_weights(times, max(lo, times[0]), t), tau


def avg_discrete_field_derivative(window: TrajectoryWindow, kernel: KernelSpec, eps: float,
                                  r_prime: float) -> float:
    """Time-averaged discrete field derivative over the last ``tau`` of the window.

    max_{i != j} (1/tau) int |E_i - E_j| / (|X_i - X_j| + eps^(1+r')) ds
    """
    weights, tau = _window_weights(window)
    if window.n < 2 or not np.any(weights > 0):
        return 0.0
    floor = eps ** (1 + r_prime)
    n = window.n
    out = np.zeros((n, n))
    for s, w in zip(window.states, weights):
        if w == 0:
            continue
        E = accelerations(s, kernel)
        _ratio_accumulate(np.ascontiguousarray(s.positions), E, floor, w, out)
    return float(out.max() / tau)


def total_energy(state: ParticleState, kernel: KernelSpec) -> float:
    """(1/N) sum |V_i|^2/2 + (1/2N^2) sum_{i != j} Phi(X_i - X_j)."""
    if kernel.cutoff is None and kernel.alpha == 1.0:
        raise ValueError("no potential for alpha = 1 without cut-off")
    n = state.n
    kinetic = 0.5 * float(np.sum(state.velocities ** 2)) / n
    if n < 2 or kernel.strength == 0.0:
        return kinetic
    code = _PROFILE_CODE[None if kernel.cutoff is None else kernel.cutoff.profile]
    pot = _potential_pairs(np.ascontiguousarray(state.positions), float(kernel.strength),
                           float(kernel.alpha), float(kernel.eta), code)
    # ordered pairs counted twice: 2 * sum_{i<j} / (2 N^2)
    return kinetic + pot / (n * n)


def total_momentum(state: ParticleState) -> np.ndarray:
    return state.velocities.sum(axis=0) / state.n


def _fd_grad(fn, z, h=1e-6):
    g = np.empty_like(z)
    for k in range(z.shape[1]):
        e = np.zeros(z.shape[1])
        e[k] = h
        g[:, k] = (fn(z + e) - fn(z - e)) / (2 * h)
    return g


@dataclass(frozen=True)
class BumpFunction:
    """Smooth compactly supported exp(-1/(1-|z-z0|^2/R^2)) on R^{2d}."""

    center: Sequence[float]
    radius: float

    def __call__(self, z):
        u = np.sum((np.asarray(z) - np.asarray(self.center)) ** 2, axis=-1) / self.radius ** 2
        out = np.zeros_like(u)
        inside = u < 1
        out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
        return out

    def grad(self, z):
        diff = np.asarray(z) - np.asarray(self.center)
        u = np.sum(diff ** 2, axis=-1) / self.radius ** 2
        g = np.zeros_like(diff)
        inside = u < 1
        ui = u[inside]
        val = np.exp(-1.0 / (1.0 - ui))
        coef = -val / (1.0 - ui) ** 2 * 2.0 / self.radius ** 2
        g[inside] = coef[:, None] * diff[inside]
        return g


def moment_residual(window: TrajectoryWindow, kernel: KernelSpec, test_fn) -> float:
    """|d/dt <mu_N, phi> - <mu_N, v.grad_x phi + E_N.grad_v phi>| at the window midpoint."""
    m = len(window.states)
    if m < 3:
        raise ValueError("moment_residual needs at least 3 states")
    mid = m // 2
    before, here, after = window.states[mid - 1], window.states[mid], window.states[mid + 1]
    dt = after.time - here.time
    d = here.dim
    ddt = (np.mean(test_fn(after.phase)) - np.mean(test_fn(before.phase))) / (2 * dt)
    z = here.phase
    grad = test_fn.grad(z) if hasattr(test_fn, "grad") else _fd_grad(test_fn, z)
    E = accelerations(here, kernel)
    rhs = np.mean(np.sum(here.velocities * grad[:, :d], axis=1) + np.sum(E * grad[:, d:], axis=1))
    return float(abs(ddt - rhs))
