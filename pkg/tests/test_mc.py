import math

import numpy as np
import pytest
from scipy import stats as sps

from cepd import kernels
from cepd.lattice import Supercell, random_config, spin_config_from_structure
from cepd.mc import BlockAverager, PointStats, RunControls, Walker, integrate_phi, make_rng, run_point
from cepd.model import energy_per_site
from cepd.thermo import PhiPoint, boltzmann_weights, enumerate_states, exact_thermo


def _walker(model, sc, T, mu, seed=1, x=0.0, accelerated=None):
    ce, _ = model
    cfg = random_config(sc, x, make_rng(seed + 1000))
    return Walker(ce, cfg, T, mu, seed=seed, accelerated=accelerated)


def test_same_seed_same_trajectory(separation):
    sc = Supercell(separation[0].lattice, (4, 4, 4))
    a = _walker(separation, sc, 4.0, 0.3, seed=7)
    b = _walker(separation, sc, 4.0, 0.3, seed=7)
    xa, ea, _ = a.sweep(50)
    xb, eb, _ = b.sweep(50)
    assert np.array_equal(xa, xb) and np.array_equal(ea, eb)
    assert np.array_equal(a.config.sigma, b.config.sigma)


@pytest.mark.skipif(not kernels._accel.NUMBA_AVAILABLE, reason="numba not installed")
def test_compiled_and_python_paths_identical(checkerboard):
    sc = Supercell(checkerboard[0].lattice, (4, 4, 4))
    fast = _walker(checkerboard, sc, 5.0, 1.0, seed=3, accelerated=True)
    slow = _walker(checkerboard, sc, 5.0, 1.0, seed=3, accelerated=False)
    xf, ef, _ = fast.sweep(20)
    xs, es, _ = slow.sweep(20)
    assert np.array_equal(xf, xs)
    assert np.allclose(ef, es, rtol=0, atol=1e-12)
    assert np.array_equal(fast.config.sigma, slow.config.sigma)
    assert fast.accepted == slow.accepted


def test_running_totals_match_recomputation(checkerboard):
    ce, _ = checkerboard
    sc = Supercell(ce.lattice, (4, 4, 4))
    w = _walker(checkerboard, sc, 3.0, 0.5, seed=11)
    w.sweep(300)
    assert w.energy == pytest.approx(energy_per_site(w.config, ce), abs=1e-9)
    assert w.x == pytest.approx(w.config.sigma.mean())


def test_infinite_temperature_accepts_everything(separation):
    sc = Supercell(separation[0].lattice, (3, 3, 3))
    w = _walker(separation, sc, math.inf, 0.0)
    w.sweep(10)
    assert w.accepted == 10 * 27


def test_zero_temperature_never_climbs(separation):
    ce, gs = separation
    sc = Supercell(ce.lattice, (4, 4, 4))
    cfg = spin_config_from_structure(gs.structures[0], ce.lattice, sc)
    w = Walker(ce, cfg, 0.0, 0.5, seed=1)
    xs, es, _ = w.sweep(20)
    # every flip out of the ground state costs 12 - 2*0.5 > 0
    assert w.accepted == 0 and np.all(xs == -1)


def test_fixed_counts_report_initial_state(checkerboard):
    ce, gs = checkerboard
    sc = Supercell(ce.lattice, (4, 4, 4))
    cfg = spin_config_from_structure(gs.structures[1], ce.lattice, sc)
    w = Walker(ce, cfg, 1.0, -12.0, seed=1)
    st = run_point(w, RunControls(n=0, eq=0))
    assert (st.x, st.E, st.stderr_x, st.n_avg) == (0.0, pytest.approx(-3.6), 0.0, 1)


def test_frozen_phase_stays_put(separation):
    ce, gs = separation
    sc = Supercell(ce.lattice, (6, 6, 6))
    cfg = spin_config_from_structure(gs.structures[0], ce.lattice, sc)
    w = Walker(ce, cfg, 1.0, 0.5, seed=1)
    st = run_point(w, RunControls(dx=1e-3))
    assert st.x == pytest.approx(-1, abs=1e-4)
    assert st.stderr_x > 0 and st.converged


def _level_classes(E, X):
    keys = np.round(E * 1e6).astype(np.int64) * 1000 + np.round(X * 100).astype(np.int64)
    _, inv = np.unique(keys, return_inverse=True)
    return inv


def test_stationary_distribution_matches_boltzmann(separation, small_cell):
    ce, _ = separation
    T, mu = 4.0, 0.5
    w = _walker(separation, small_cell, T, mu, seed=5)
    w.sweep(200)
    _, _, codes = w.sweep(200_000, record_codes=True)
    codes = codes[::10]  # thin to roughly independent samples
    p = boltzmann_weights(ce, small_cell, T, mu)
    E, X = enumerate_states(ce, small_cell)
    cls = _level_classes(E, X)
    expected = np.bincount(cls, weights=p) * len(codes)
    observed = np.bincount(cls[codes], minlength=len(expected)).astype(float)
    keep = expected >= 5
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < 5:
        obs, exp = obs[:-1], exp[:-1]
    exp *= obs.sum() / exp.sum()
    assert sps.chisquare(obs, exp).pvalue > 0.01


def test_spin_flip_symmetry(separation):
    sc = Supercell(separation[0].lattice, (4, 4, 4))
    up = run_point(_walker(separation, sc, 5.0, 0.8, seed=2, x=0.5), RunControls(dx=5e-3))
    dn = run_point(_walker(separation, sc, 5.0, -0.8, seed=3, x=-0.5), RunControls(dx=5e-3))
    assert up.x == pytest.approx(-dn.x, abs=4 * math.hypot(up.stderr_x, dn.stderr_x))


def test_error_bars_are_honest(separation, small_cell):
    ce, _ = separation
    exact = exact_thermo(ce, small_cell, 6.0, 1.0)
    z = []
    for seed in range(12):
        st = run_point(_walker(separation, small_cell, 6.0, 1.0, seed=seed), RunControls(dx=0.01))
        z.append((st.x - exact.x) / st.stderr_x)
    z = np.abs(z)
    assert np.mean(z < 3) >= 10 / 12
    assert np.max(z) < 6


def test_integrate_phi_paths():
    prev = PhiPoint(2.0, 0.5, 0.3, -3.0, 0.8, -2.5)
    same = PointStats(T=2.0, mu=0.3, E=-2.5, x=0.8, phi=0.0, stderr_x=0.0, n_eq=0, n_avg=1)
    assert integrate_phi(prev, same, "along_T") == pytest.approx(-3.0)
    assert integrate_phi(prev, same, "along_mu") == pytest.approx(-3.0)
    step = PointStats(T=2.0, mu=0.5, E=-2.5, x=0.9, phi=0.0, stderr_x=0.0, n_eq=0, n_avg=1)
    # raising mu with positive x lowers phi
    assert integrate_phi(prev, step, "along_mu") == pytest.approx(-3.0 - 0.85 * 0.2)
    with pytest.raises(ValueError):
        integrate_phi(prev, step, "along_T")
    with pytest.raises(ValueError):
        integrate_phi(prev, same, "sideways")


def test_integrate_along_T_reproduces_exact(separation, small_cell):
    ce, _ = separation
    Ts = np.linspace(2.0, 4.0, 201)
    pts = [exact_thermo(ce, small_cell, T, 0.4) for T in Ts]
    phi = pts[0].phi
    prev = pts[0]
    for p in pts[1:]:
        cur = PointStats(T=p.T, mu=p.mu, E=p.E, x=p.x, phi=0.0, stderr_x=0.0, n_eq=0, n_avg=1)
        phi = integrate_phi(PhiPoint(prev.T, prev.beta, prev.mu, phi, prev.x, prev.E), cur, "along_T")
        prev = p
    assert phi == pytest.approx(pts[-1].phi, abs=1e-4)


def test_block_averager_white_noise():
    rng = np.random.default_rng(0)
    data = rng.normal(size=100_000)
    b = BlockAverager()
    for chunk in np.array_split(data, 37):
        b.extend(chunk)
    assert b.mean == pytest.approx(data.mean())
    assert b.stderr == pytest.approx(1 / math.sqrt(len(data)), rel=0.3)


def test_block_averager_sees_correlation():
    rng = np.random.default_rng(1)
    # AR(1) with tau ~ 50: the blocked error must exceed the naive one
    phi, x = 0.98, np.empty(200_000)
    x[0] = 0.0
    noise = rng.normal(size=x.size)
    for i in range(1, x.size):
        x[i] = phi * x[i - 1] + noise[i]
    b = BlockAverager()
    b.extend(x)
    naive = x.std() / math.sqrt(x.size)
    true = naive * math.sqrt((1 + phi) / (1 - phi))
    assert b.stderr > 3 * naive
    assert b.stderr == pytest.approx(true, rel=0.5)


@pytest.mark.parametrize("kw", [{}, {"dx": -1.0}, {"n": -3}])
def test_run_controls_validation(kw):
    with pytest.raises(ValueError):
        RunControls(**kw)


def test_negative_temperature_rejected(separation, small_cell):
    with pytest.raises(ValueError):
        _walker(separation, small_cell, -1.0, 0.0)
