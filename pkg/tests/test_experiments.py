import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfl.experiments import (
    MonitorConfig, StudyConfig, admissible_params, clopper_pearson, convergence_study, cutoff_study,
    deterministic_monitor, deviation_study_dmin, deviation_study_linf, deviation_study_w1,
    linf_deviation_bound, rate_fit,
)
from mfl.kernels import Cutoff, KernelSpec, l1_gap
from mfl.particles import avg_discrete_field_derivative, simulate
from mfl.sampling import DensitySpec, epsilon_scale, mesh_init, sample_phase
from oracles import cp_lower, cp_upper

K3 = KernelSpec(3, 0.5, 1.0)
BALL6 = DensitySpec("uniform_ball", 6)


# --- admissible parameters ------------------------------------------------------------

def test_admissible_examples():
    p = admissible_params(3, 0.5)
    assert p.gamma_star == pytest.approx(6 / 7, rel=1e-15)
    assert p.r_star == pytest.approx(4 / 3, rel=1e-15)
    assert p.s_star(1.0) == pytest.approx(1 / 6, rel=1e-14)
    assert p.m_bar_star is None and not p.prob_window_empty
    assert admissible_params(3, 2.0).m_bar_star == pytest.approx(1.0)
    assert admissible_params(3, 1.0).m_bar_star == pytest.approx(5.0)


@pytest.mark.parametrize("alpha", [0.01, 0.3, 0.5, 0.99, 1.5, 3.0])
def test_d2_window_empty(alpha):
    assert admissible_params(2, alpha).prob_window_empty


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 12), st.floats(0.0, 0.999), st.floats(1e-6, 1 - 1e-6))
def test_admissible_window_nonempty(d, alpha, u):
    p = admissible_params(d, alpha)
    assert p.gamma_star < 1
    gamma = p.gamma_star + u * (1 - p.gamma_star)
    if gamma > p.gamma_star:
        assert p.s_star(gamma) > 0


def test_admissible_rejects_bad_input():
    with pytest.raises(ValueError):
        admissible_params(0, 0.5)


# --- rate fit --------------------------------------------------------------------------

def test_rate_fit_exact_power_law():
    n = [64, 128, 256, 512]
    f = rate_fit([(x, x ** -0.5) for x in n])
    assert f.slope == pytest.approx(-0.5, abs=1e-12)
    assert f.r_squared == pytest.approx(1.0, abs=1e-12)


def test_rate_fit_constant():
    f = rate_fit([(10, 3.0), (100, 3.0), (1000, 3.0)])
    assert f.slope == pytest.approx(0.0, abs=1e-12)


def test_rate_fit_noisy_power_law():
    n = np.geomspace(1e2, 1e5, 8)
    for seed in range(50):
        noise = np.exp(0.05 * np.random.default_rng(seed).normal(size=8))
        f = rate_fit(list(zip(n, n ** -0.25 * noise)))
        assert abs(f.slope + 0.25) <= 0.03


def test_rate_fit_errors():
    with pytest.raises(ValueError):
        rate_fit([(1, 1.0), (2, 0.5)])
    with pytest.raises(ValueError):
        rate_fit([(1, 1.0), (2, 0.0), (3, 0.1)])


# --- Clopper-Pearson and bounds ---------------------------------------------------------

@pytest.mark.parametrize("k,n", [(0, 10), (0, 1000), (1, 1000), (7, 50), (50, 50), (3, 4)])
def test_clopper_pearson_matches_binomial_inversion(k, n):
    lo, hi = clopper_pearson(k, n, 0.99)
    assert lo == pytest.approx(cp_lower(k, n, 0.99), abs=1e-10)
    assert hi == pytest.approx(cp_upper(k, n, 0.99), abs=1e-10)


def test_linf_bound_example():
    d = DensitySpec("uniform_cube", 2, 1.0)
    assert d.sup_norm == 0.25
    expect = 16 * 100 * math.exp(-(2 * math.log(2) - 1) * 4 * 0.25 * 100)
    assert linf_deviation_bound(d, 10 ** 4, 0.5) == pytest.approx(expect, rel=1e-12)
    assert linf_deviation_bound(d, 10 ** 4, 0.5) == pytest.approx(1600 * math.exp(-38.6294), rel=1e-4)


def test_linf_study_small_n_is_vacuous_and_passes():
    d = DensitySpec("uniform_cube", 2, 1.0)
    res = deviation_study_linf(d, [10, 40], 0.5, 20, seed=1)
    for v in res.summary["per_N"].values():
        assert v["vacuous"] and v["pass"]
    assert len(res.rows) == 40


# --- deviation studies -------------------------------------------------------------------

def test_dmin_small_l_gives_probability_one():
    res = deviation_study_dmin(DensitySpec("uniform_cube", 2), [50], [1e-9, 0.5, 1.0, 2.0], 30, 0)
    p = res.summary["per_N"]["50"]["P"]
    assert p[0] == 1.0
    assert np.all(np.diff(p) <= 0)


def test_w1_single_atom():
    d = DensitySpec("uniform_ball", 4)
    res = deviation_study_w1(d, [1], 3, 5)
    from mfl.experiments import _reference_cloud, _stream
    for rep in range(3):
        s = _stream(rep, 0, 3)
        z = sample_phase(d, 1, 5, s)
        ref = _reference_cloud(d, 1, 5, s)
        assert res.rows[rep]["value"] == pytest.approx(float(np.linalg.norm(z - ref)), rel=1e-14)


def test_w1_study_decreasing_mean():
    res = deviation_study_w1(DensitySpec("uniform_cube", 2), [16, 64, 256], 6, 0)
    means = [res.summary["per_N"][str(n)]["mean"] for n in (16, 64, 256)]
    assert means[0] > means[1] > means[2]
    assert res.summary["fit"]["slope"] < 0


# --- convergence and cut-off studies --------------------------------------------------------

def _small_config(**kw):
    base = dict(density=BALL6, kernel=K3, gamma=0.9, n_list=(32, 64, 128), replicas=3, seed=2,
                t_end=0.1, dt=0.02, n_samples=3, n_ref=512)
    base.update(kw)
    return StudyConfig(**base)


def test_convergence_study_is_deterministic():
    a = convergence_study(_small_config())
    b = convergence_study(_small_config())
    assert a.rows == b.rows
    assert a.summary == b.summary
    assert a.summary["fit"]["slope"] < 0
    assert set(r["metric"] for r in a.rows) >= {"w1", "w1_floor", "sup_w1", "near_collision_steps"}


def test_convergence_free_transport_matches_initial_slope():
    free = KernelSpec(3, 0.5, 0.0)
    s0 = convergence_study(_small_config(kernel=free, t_end=0.0)).summary["fit"]["slope"]
    s1 = convergence_study(_small_config(kernel=free)).summary["fit"]["slope"]
    assert s1 == pytest.approx(s0, abs=0.05)


def test_study_config_validation():
    with pytest.raises(ValueError):
        _small_config(gamma=1.0)
    with pytest.raises(ValueError):
        _small_config(n_ref=100)
    with pytest.raises(ValueError):
        _small_config(density=DensitySpec("uniform_ball", 4))
    assert _small_config(n_ref=0).ref_size == 8 * 128


def test_cutoff_study_gap_column_and_flags():
    k = KernelSpec(3, 2.0, 1 / (4 * math.pi), Cutoff(1.0, 1.0))
    cfg = _small_config(kernel=k, n_list=(32, 64, 128), replicas=2)
    res = cutoff_study(cfg, [0.5, 1.0])
    per = res.summary["per_m_bar"]
    assert res.summary["m_bar_star"] == pytest.approx(1.0)
    for m in ("0.5", "1"):
        for n, g in per[m]["gaps"].items():
            kk = KernelSpec(3, 2.0, 1 / (4 * math.pi), Cutoff(float(m), epsilon_scale(int(n), 0.9, 3)))
            assert g["l1_gap"] == l1_gap(kk)
    assert per["1"]["gap_ok"] is True and per["0.5"]["gap_ok"] is None
    # eta above the inter-particle distance: bounded force, no near collisions tracked
    assert per["0.5"]["contamination_fraction"] == 0.0


# --- deterministic monitor -------------------------------------------------------------------

def test_monitor_small_run_reports_all_checks():
    res = deterministic_monitor(MonitorConfig(K3, n_per_axis=2, t_end=0.1, n_checks=3, n_diag=2))
    s = res.summary
    assert s["N"] == 64
    assert s["W_inf_0"] == pytest.approx(epsilon_scale(64, 1.0, 3), rel=1e-12)
    assert {"gronwall", "dN_lower_bound", "diagnostics", "pass"} <= set(s)
    assert len(s["dN_lower_bound"]["checks"]) == 3


def test_monitor_free_flow_formula():
    free = KernelSpec(3, 0.5, 0.0)
    res = deterministic_monitor(MonitorConfig(free, n_per_axis=2, t_end=0.2, n_checks=2, n_diag=1))
    eps = epsilon_scale(64, 1.0, 3)
    from mfl.sampling import Mollifier, blob_quadrature
    mu0 = mesh_init(2, ([-0.5] * 6, [0.5] * 6))
    nodes, _, parent = blob_quadrature(mu0, eps, Mollifier("uniform_ball"), 3, boundary=True)
    dz = nodes - mu0.phase[parent]
    rows = [r for r in res.rows if r["metric"] == "coupled_sup_distance"]
    # running sup of the pairwise free-flow gap (|dx + t dv|^2 + |dv|^2)^(1/2)
    running = 0.0
    for r in rows:
        t = r["t"]
        gap = np.sqrt(np.sum((dz[:, :3] + t * dz[:, 3:]) ** 2, 1) + np.sum(dz[:, 3:] ** 2, 1)).max()
        running = max(running, gap)
        assert r["value"] == pytest.approx(running, rel=1e-12)


def test_monitor_rejects_bad_window():
    with pytest.raises(ValueError):
        deterministic_monitor(MonitorConfig(K3, r=1.2, r_prime=1.1))
    with pytest.raises(ValueError):
        deterministic_monitor(MonitorConfig(K3, r=1.2, r_prime=1.4))


def test_grad_monitor_stable_under_halved_tau():
    mu0 = mesh_init(4, ([-0.5] * 6, [0.5] * 6))
    eps = epsilon_scale(mu0.n, 1.0, 3)
    tau = round(eps ** 1.2 / 0.01) * 0.01
    traj = simulate(mu0, K3, 0.01, 50)
    for t in (0.3, 0.5):
        g1 = avg_discrete_field_derivative(traj.window(t, tau), K3, eps, 1.2)
        g2 = avg_discrete_field_derivative(traj.window(t, round(tau / 0.02) * 0.01), K3, eps, 1.2)
        assert abs(g2 / g1 - 1) < 0.10
