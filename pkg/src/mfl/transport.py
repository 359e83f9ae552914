"""Exact W1 and W-infinity distances between weighted point clouds.

Equal-size, equal-weight problems go through a shortest-augmenting-path
assignment solver that also returns dual potentials, so every W1 value is
certified by complementary slackness. Clouds whose weights are integer
multiples of a common unit are expanded to that case; anything else falls
back to the transport linear program.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numba as nb
import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.sparse.csgraph import maximum_bipartite_matching, maximum_flow
from scipy.spatial.distance import cdist

from .kernels import KernelSpec, kepsilon
from .particles import TrajectoryWindow, _window_weights

MAX_EXPANSION = 20000


class CertificateError(RuntimeError):
    """Dual certificate of an optimal plan failed."""


@dataclass(frozen=True, eq=False)
class WeightedCloud:
    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if not np.all(np.isfinite(p)):
            raise ValueError("cloud points must be finite")
        if self.weights is None:
            w = np.full(len(p), 1.0 / len(p))
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(p),) or np.any(w < 0):
                raise ValueError("weights must be non-negative, one per point")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


@dataclass
class CouplingResult:
    cost: float
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    kind: str
    duals: Optional[tuple] = field(default=None, repr=False)

    @property
    def plan(self):
        """Sparse plan as (i, j, mass) triples."""
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def marginals(self, n_a: int, n_b: int):
        return (np.bincount(self.rows, self.mass, n_a), np.bincount(self.cols, self.mass, n_b))


def _check_pair(a: WeightedCloud, b: WeightedCloud):
    if a.dim != b.dim:
        raise ValueError(f"clouds live in different dimensions ({a.dim} vs {b.dim})")
    if abs(a.weights.sum() - b.weights.sum()) > 1e-10:
        raise ValueError("clouds carry different total mass")


# ---------------------------------------------------------------------------
# assignment

@nb.njit(cache=True)
def _jv_init(cost, col4row, row4col, v):
    """Column reduction with reduction transfer (Jonker-Volgenant start).

    Leaves every assigned row on a column minimizing c_ij - v_j and returns
    the rows left free. Augmenting row reduction is skipped: on Euclidean
    costs in the plane it costs more than it saves.
    """
    n = cost.shape[0]
    for j in range(n):
        v[j] = np.inf
    owner = np.full(n, -1)
    for i in range(n):
        for j in range(n):
            if cost[i, j] < v[j]:
                v[j] = cost[i, j]
                owner[j] = i
    unique = np.ones(n, dtype=np.bool_)
    for j in range(n - 1, -1, -1):
        i = owner[j]
        if col4row[i] < 0:
            col4row[i] = j
            row4col[j] = i
        else:
            unique[i] = False
    free = np.empty(n, dtype=np.int64)
    n_free = 0
    for i in range(n):
        if col4row[i] < 0:
            free[n_free] = i
            n_free += 1
        elif unique[i]:
            # reduction transfer
            j = col4row[i]
            m = np.inf
            for j2 in range(n):
                if j2 != j and cost[i, j2] - v[j2] < m:
                    m = cost[i, j2] - v[j2]
            if n > 1:
                v[j] -= m
    return free[:n_free].copy()


@nb.njit(cache=True)
def _lsap(cost):
    """Shortest augmenting path assignment on a square cost matrix.

    Returns (col4row, u, v) with reduced costs cost - u - v >= 0 and zero on
    the assignment.
    """
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col4row = np.full(n, -1)
    row4col = np.full(n, -1)
    if n == 0:
        return col4row, u, v
    free_rows = _jv_init(cost, col4row, row4col, v)
    for i in range(n):
        m = np.inf
        for j in range(n):
            if cost[i, j] - v[j] < m:
                m = cost[i, j] - v[j]
        u[i] = m
    spc = np.empty(n)
    path = np.full(n, -1)
    sr = np.zeros(n, dtype=np.bool_)
    sc = np.zeros(n, dtype=np.bool_)
    remaining = np.empty(n, dtype=np.int64)
    touched_rows = np.empty(n, dtype=np.int64)
    for cur in free_rows:
        min_val = 0.0
        i = cur
        num_rem = n
        for it in range(n):
            remaining[it] = n - it - 1
            spc[it] = np.inf
        n_touched = 0
        sink = -1
        while sink == -1:
            index = -1
            lowest = np.inf
            sr[i] = True
            touched_rows[n_touched] = i
            n_touched += 1
            base = min_val - u[i]
            for it in range(num_rem):
                j = remaining[it]
                r = base + cost[i, j] - v[j]
                if r < spc[j]:
                    path[j] = i
                    spc[j] = r
                if spc[j] < lowest or (spc[j] == lowest and row4col[j] == -1):
                    lowest = spc[j]
                    index = it
            min_val = lowest
            if min_val == np.inf:
                col4row[:] = -1
                return col4row, u, v
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = True
            num_rem -= 1
            # keep scanned columns in the tail of ``remaining``
            remaining[index] = remaining[num_rem]
            remaining[num_rem] = j
        u[cur] += min_val
        for t in range(1, n_touched):
            r = touched_rows[t]
            u[r] += min_val - spc[col4row[r]]
        for it in range(num_rem, n):
            c = remaining[it]
            v[c] -= min_val - spc[c]
            sc[c] = False
        for t in range(n_touched):
            sr[touched_rows[t]] = False
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur:
                break
    return col4row, u, v


def assignment(cost: np.ndarray, certify: bool = True, tol: float = 1e-9):
    """Minimum-cost perfect matching; returns (col4row, u, v)."""
    cost = np.ascontiguousarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("assignment needs a square cost matrix")
    col4row, u, v = _lsap(cost)
    if np.any(col4row < 0):
        raise CertificateError("assignment is infeasible")
    if certify:
        scale = max(1.0, float(np.max(np.abs(cost))))
        reduced = cost - u[:, None] - v[None, :]
        if reduced.min() < -tol * scale:
            raise CertificateError(f"dual infeasible: min reduced cost {reduced.min():.3e}")
        tight = reduced[np.arange(len(cost)), col4row]
        if np.max(np.abs(tight)) > tol * scale:
            raise CertificateError("complementary slackness violated on the assignment")
    return col4row, u, v


def _common_units(w: np.ndarray, limit: int = MAX_EXPANSION):
    """Integer multiplicities m with w = m / M, or None if not representable."""
    fr = [Fraction(float(x)).limit_denominator(limit) for x in w]
    if any(abs(float(f) - x) > 1e-13 for f, x in zip(fr, w)):
        return None
    den = 1
    for f in fr:
        den = den * f.denominator // math.gcd(den, f.denominator)
        if den > limit:
            return None
    return np.array([f.numerator * (den // f.denominator) for f in fr], dtype=np.int64), den


def _expansion(a: WeightedCloud, b: WeightedCloud):
    ua, ub = _common_units(a.weights), _common_units(b.weights)
    if ua is None or ub is None:
        return None
    den = ua[1] * ub[1] // math.gcd(ua[1], ub[1])
    if den > MAX_EXPANSION:
        return None
    ma = ua[0] * (den // ua[1])
    mb = ub[0] * (den // ub[1])
    if ma.sum() != den or mb.sum() != den:
        return None
    return ma, mb, den


def _aggregate(rows, cols, mass):
    key = rows.astype(np.int64) * (cols.max() + 1 if len(cols) else 1) + cols
    uniq, inv = np.unique(key, return_inverse=True)
    m = np.bincount(inv, mass)
    width = cols.max() + 1 if len(cols) else 1
    return (uniq // width).astype(np.int64), (uniq % width).astype(np.int64), m


def w1(a: WeightedCloud, b: WeightedCloud) -> CouplingResult:
    """Exact Wasserstein-1 distance with Euclidean ground cost."""
    _check_pair(a, b)
    if a.size == b.size and a.uniform and b.uniform:
        C = cdist(a.points, b.points)
        col4row, u, v = assignment(C)
        rows = np.arange(a.size)
        cost = float(np.mean(C[rows, col4row]))
        return CouplingResult(cost, rows, col4row, np.full(a.size, 1.0 / a.size), "w1", (u, v))
    exp = _expansion(a, b)
    if exp is not None:
        ma, mb, den = exp
        ia = np.repeat(np.arange(a.size), ma)
        ib = np.repeat(np.arange(b.size), mb)
        C = cdist(a.points[ia], b.points[ib])
        col4row, u, v = assignment(C)
        rows, cols, mass = _aggregate(ia, ib[col4row], np.full(den, 1.0 / den))
        cost = float(np.mean(C[np.arange(den), col4row]))
        return CouplingResult(cost, rows, cols, mass, "w1")
    return _w1_lp(a, b)


def _w1_lp(a: WeightedCloud, b: WeightedCloud) -> CouplingResult:
    ka, kb = a.size, b.size
    C = cdist(a.points, b.points)
    rows = np.repeat(np.arange(ka), kb)
    cols = np.tile(np.arange(kb), ka)
    A = sparse.vstack([
        sparse.csr_matrix((np.ones(ka * kb), (rows, np.arange(ka * kb))), shape=(ka, ka * kb)),
        sparse.csr_matrix((np.ones(ka * kb), (cols, np.arange(ka * kb))), shape=(kb, ka * kb)),
    ])
    beq = np.concatenate([a.weights, b.weights * (a.weights.sum() / b.weights.sum())])
    res = linprog(C.ravel(), A_eq=A, b_eq=beq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise CertificateError(f"transport LP failed: {res.message}")
    y = res.eqlin.marginals
    u, v = y[:ka], y[ka:]
    scale = max(1.0, float(C.max()))
    if (C - u[:, None] - v[None, :]).min() < -1e-9 * scale:
        raise CertificateError("LP dual infeasible")
    x = res.x
    keep = x > 1e-15
    return CouplingResult(float(C.ravel() @ x), rows[keep], cols[keep], x[keep], "w1", (u, v))


# ---------------------------------------------------------------------------
# bottleneck

def _feasible_matching(C, t):
    g = sparse.csr_matrix(C <= t)
    match = maximum_bipartite_matching(g, perm_type="column")
    return match if np.all(match >= 0) else None


def _feasible_flow(C, t, ma, mb):
    ka, kb = C.shape
    ii, jj = np.nonzero(C <= t)
    big = int(ma.sum())
    src, sink = ka + kb, ka + kb + 1
    u = np.concatenate([np.full(ka, src), ii, ka + np.arange(kb)])
    v = np.concatenate([np.arange(ka), ka + jj, np.full(kb, sink)])
    cap = np.concatenate([ma, np.full(len(ii), big), mb]).astype(np.int32)
    g = sparse.csr_matrix((cap, (u, v)), shape=(ka + kb + 2, ka + kb + 2))
    res = maximum_flow(g, src, sink)
    if res.flow_value < big:
        return None
    flow = res.flow.tocoo()
    sel = (flow.row < ka) & (flow.col >= ka) & (flow.col < ka + kb) & (flow.data > 0)
    return flow.row[sel], flow.col[sel] - ka, flow.data[sel].astype(float)


def _feasible_lp(C, t, wa, wb):
    ii, jj = np.nonzero(C <= t)
    ka, kb = C.shape
    m = len(ii)
    A = sparse.vstack([
        sparse.csr_matrix((np.ones(m), (ii, np.arange(m))), shape=(ka, m)),
        sparse.csr_matrix((np.ones(m), (jj, np.arange(m))), shape=(kb, m)),
    ])
    res = linprog(np.zeros(m), A_eq=A, b_eq=np.concatenate([wa, wb]), bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    keep = res.x > 1e-15
    return ii[keep], jj[keep], res.x[keep]


def winf(a: WeightedCloud, b: WeightedCloud) -> CouplingResult:
    """Exact W-infinity (bottleneck) distance by bisection on sorted pair distances."""
    _check_pair(a, b)
    C = cdist(a.points, b.points)
    equal = a.size == b.size and a.uniform and b.uniform
    exp = None if equal else _expansion(a, b)
    if equal:
        def test(t):
            m = _feasible_matching(C, t)
            if m is None:
                return None
            return np.arange(a.size), m, np.full(a.size, 1.0 / a.size)
    elif exp is not None:
        ma, mb, den = exp

        def test(t):
            out = _feasible_flow(C, t, ma, mb)
            if out is None:
                return None
            return out[0], out[1], out[2] / den
    else:
        def test(t):
            return _feasible_lp(C, t, a.weights, b.weights)

    # every row and column must reach some partner
    lower = max(C.min(axis=1).max(), C.min(axis=0).max())
    cand = np.unique(C[C >= lower])
    lo, hi = 0, len(cand) - 1
    best = test(cand[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        plan = test(cand[mid])
        if plan is None:
            lo = mid + 1
        else:
            hi, best = mid, plan
    rows, cols, mass = best
    return CouplingResult(float(C[rows, cols].max()), np.asarray(rows), np.asarray(cols),
                          np.asarray(mass, dtype=float), "winf")


def distance_report(result: CouplingResult, n_a: int, n_b: int,
                    discretization_error: Optional[float] = None) -> dict:
    out = {"kind": result.kind, "cost": result.cost, "n_a": int(n_a), "n_b": int(n_b)}
    if discretization_error is not None:
        out["discretization_error"] = float(discretization_error)
    return out


def write_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# trajectory-coupled diagnostics

def _check_grids(traj_a: TrajectoryWindow, traj_b: TrajectoryWindow):
    ta, tb = traj_a.times, traj_b.times
    if len(ta) != len(tb) or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise ValueError("trajectories are sampled on different time grids")


def coupled_sup_distance(traj_a: TrajectoryWindow, traj_b: TrajectoryWindow, matching) -> np.ndarray:
    """Running sup over s <= t of max_i |Z_a,i(s) - Z_b,matching[i](s)| in R^{2d}.

    ``matching`` maps every index of a to an index of b. A permutation is the
    flow-transported plan; a many-to-one map with equal fibers (blob nodes to
    their parent particle) is also a valid coupling.
    """
    _check_grids(traj_a, traj_b)
    sigma = np.asarray(matching, dtype=np.int64)
    if sigma.shape != (traj_a.n,):
        raise ValueError("matching must have one entry per particle of traj_a")
    xa, va = traj_a.arrays()
    xb, vb = traj_b.arrays()
    dx = xa - xb[:, sigma]
    dv = va - vb[:, sigma]
    gap = np.sqrt(np.max(np.sum(dx * dx, axis=2) + np.sum(dv * dv, axis=2), axis=1))
    return np.maximum.accumulate(gap)


@nb.njit(cache=True)
def _ialpha_accumulate(Xa, Xb, sigma, rows, c, a, eta, code, weight, out):
    n, d = Xa.shape
    for r in range(rows.shape[0]):
        i = rows[r]
        s = 0.0
        for j in range(n):
            ra = 0.0
            rb = 0.0
            for k in range(d):
                t = Xa[i, k] - Xa[j, k]
                ra += t * t
                t = Xb[sigma[i], k] - Xb[sigma[j], k]
                rb += t * t
            wa = 0.0
            wb = 0.0
            if ra > 0.0:
                if code == 2:
                    wa = c * (ra + eta * eta) ** (-(1 + a) / 2)
                elif code == 1 and ra < eta * eta:
                    wa = c * eta ** (-(1 + a))
                else:
                    wa = c * ra ** (-(1 + a) / 2)
            if rb > 0.0:
                if code == 2:
                    wb = c * (rb + eta * eta) ** (-(1 + a) / 2)
                elif code == 1 and rb < eta * eta:
                    wb = c * eta ** (-(1 + a))
                else:
                    wb = c * rb ** (-(1 + a) / 2)
            diff = 0.0
            for k in range(d):
                t = wa * (Xa[i, k] - Xa[j, k]) - wb * (Xb[sigma[i], k] - Xb[sigma[j], k])
                diff += t * t
            s += math.sqrt(diff)
        out[r] += weight * s / n


def i_alpha_diag(traj_a: TrajectoryWindow, traj_b: TrajectoryWindow, matching,
                 kernel: KernelSpec, tau: float, rows=None) -> np.ndarray:
    """Per particle i: (1/tau) int (1/N) sum_j |F(Xa_i - Xa_j) - F(Xb_si - Xb_sj)| ds.

    ``rows`` restricts the output to the given particles i (the sum over j is
    always complete).
    """
    _check_grids(traj_a, traj_b)
    t_end = traj_a.times[-1]
    wa = traj_a.window(t_end, tau)
    wb = traj_b.window(t_end, tau)
    weights, tau = _window_weights(wa)
    sigma = np.asarray(matching, dtype=np.int64)
    rows = np.arange(traj_a.n) if rows is None else np.asarray(rows, dtype=np.int64)
    out = np.zeros(len(rows))
    if kernel.strength == 0.0:
        return out
    code = {None: 0, "exact": 1, "plummer": 2}[None if kernel.cutoff is None else kernel.cutoff.profile]
    for sa, sb, w in zip(wa.states, wb.states, weights):
        if w > 0:
            _ialpha_accumulate(np.ascontiguousarray(sa.positions), np.ascontiguousarray(sb.positions),
                               sigma, rows, float(kernel.strength), float(kernel.alpha), float(kernel.eta),
                               code, float(w), out)
    return out / tau


def j_alpha_diag(traj: TrajectoryWindow, kernel_alpha, eps: float, r_prime: float,
                 tau: float, rows=None) -> np.ndarray:
    """(1/tau) int K_eps(|X_i - X_j|) ds for every ordered pair, as an (N, N) array
    (or (len(rows), N) when ``rows`` selects the particles i)."""
    alpha = kernel_alpha.alpha if isinstance(kernel_alpha, KernelSpec) else float(kernel_alpha)
    win = traj.window(traj.times[-1], tau)
    weights, tau = _window_weights(win)
    rows = np.arange(traj.n) if rows is None else np.asarray(rows, dtype=np.int64)
    out = np.zeros((len(rows), traj.n))
    for s, w in zip(win.states, weights):
        if w > 0:
            x = s.positions
            r = np.sqrt(np.sum((x[rows, None, :] - x[None, :, :]) ** 2, axis=-1))
            out += w * kepsilon(r, eps, r_prime, alpha)
    return out / tau
