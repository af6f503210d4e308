import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cepd.atat_io import TEciTable
from cepd.cli import load_model
from cepd.lattice import Supercell, spin_config_from_structure
from cepd.model import (
    ClusterExpansion,
    SpinConfig,
    correlations,
    delta_grand,
    eci_at_temperature,
    energy_per_site,
)

from .conftest import DATA


def brute_force_energy(sigma, sc, pairs):
    """Sum of V * s_i s_j over every bond found by explicit neighbour search."""
    n1, n2, n3 = sc.repeats
    s = sigma.reshape(n1, n2, n3).astype(float)
    e = 0.0
    for v, shift in pairs:
        for axis in range(3):
            e += v * np.sum(s * np.roll(s, shift, axis=axis))
    return e / s.size


def test_energy_anchors(separation, checkerboard):
    ce5, gs5 = separation
    ce6, gs6 = checkerboard
    assert energy_per_site(gs5.configs[0], ce5) == pytest.approx(-3, abs=1e-12)
    assert energy_per_site(gs6.configs[0], ce6) == pytest.approx(2.4, abs=1e-12)
    assert energy_per_site(gs6.configs[1], ce6) == pytest.approx(-3.6, abs=1e-12)


def test_nacl_energy_matches_bond_count(checkerboard):
    ce, gs = checkerboard
    sc = Supercell(ce.lattice, (4, 4, 4))
    cfg = spin_config_from_structure(gs.structures[1], ce.lattice, sc)
    assert energy_per_site(cfg, ce) == pytest.approx(brute_force_energy(cfg.sigma, sc, [(1.0, 1), (-0.2, 2)]))


def test_correlations(separation, checkerboard):
    ce5, gs5 = separation
    assert np.allclose(correlations(gs5.configs[0], ce5), [1, -1, 1])
    ce6, gs6 = checkerboard
    sc = Supercell(ce6.lattice, (2, 2, 2))
    nacl = spin_config_from_structure(gs6.structures[1], ce6.lattice, sc)
    assert np.allclose(correlations(nacl, ce6), [1, 0, -1, 1])


def test_random_correlations_bounded(checkerboard):
    ce, _ = checkerboard
    sc = Supercell(ce.lattice, (6, 6, 6))
    rng = np.random.default_rng(3)
    cfg = SpinConfig(rng.choice([-1, 1], sc.n_sites), sc)
    c = correlations(cfg, ce)
    assert c[0] == 1 and c[1] == pytest.approx(cfg.x)
    assert np.all(np.abs(c) <= 1)
    assert energy_per_site(cfg, ce) == pytest.approx(brute_force_energy(cfg.sigma, sc, [(1.0, 1), (-0.2, 2)]))


def test_flip_energies(separation, checkerboard):
    ce5, gs5 = separation
    ce6, gs6 = checkerboard
    assert abs(delta_grand(gs5.configs[0], 0, 0.0, ce5)) == pytest.approx(12)
    assert abs(delta_grand(gs6.configs[0], 0, 0.0, ce6)) == pytest.approx(9.6)
    # the grand term adds -mu * (+2) when a down spin flips up
    assert delta_grand(gs5.configs[0], 0, 1.5, ce5) == pytest.approx(12 - 3)


def test_flip_locality_against_full_recompute(checkerboard):
    ce, _ = checkerboard
    sc = Supercell(ce.lattice, (5, 5, 5))
    rng = np.random.default_rng(11)
    cfg = SpinConfig(rng.choice([-1, 1], sc.n_sites), sc)
    n = sc.n_sites
    mu = 0.7
    e = energy_per_site(cfg, ce) * n
    worst = 0.0
    for _ in range(10_000):
        i = int(rng.integers(n))
        d = delta_grand(cfg, i, mu, ce)
        ds = -2 * cfg.sigma[i]
        cfg.sigma[i] = -cfg.sigma[i]
        if rng.random() < 0.01:
            e_new = energy_per_site(cfg, ce) * n
            worst = max(worst, abs((e_new - e) - (d + mu * ds)))
            e = e_new
        else:
            e += d + mu * ds
    assert worst < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**27 - 1), st.integers(0, 26))
def test_double_flip_is_identity(bits, site):
    ce, _ = _checkerboard()
    sc = Supercell(ce.lattice, (3, 3, 3))
    sigma = np.array([1 if bits >> k & 1 else -1 for k in range(27)])
    cfg = SpinConfig(sigma, sc)
    d1 = delta_grand(cfg, site, 0.3, ce)
    cfg.sigma[site] *= -1
    d2 = delta_grand(cfg, site, 0.3, ce)
    assert d1 + d2 == pytest.approx(0, abs=1e-12)


@functools.cache
def _checkerboard():
    # hypothesis re-runs the body many times; function-scoped fixtures do not mix
    return load_model(DATA / "checkerboard")


def test_spin_flip_symmetry(separation):
    ce, _ = separation
    sc = Supercell(ce.lattice, (4, 4, 4))
    rng = np.random.default_rng(5)
    for _ in range(5):
        cfg = SpinConfig(rng.choice([-1, 1], sc.n_sites), sc)
        neg = SpinConfig(-cfg.sigma, sc)
        assert energy_per_site(cfg, ce) == pytest.approx(energy_per_site(neg, ce))
        assert delta_grand(cfg, 3, 0.4, ce) == pytest.approx(delta_grand(neg, 3, -0.4, ce))


def test_energy_is_extensive(checkerboard):
    ce, gs = checkerboard
    es = []
    for n in (2, 4, 6):
        sc = Supercell(ce.lattice, (n, n, n))
        es.append(energy_per_site(spin_config_from_structure(gs.structures[1], ce.lattice, sc), ce))
    assert np.allclose(es, es[0])


def test_each_instance_in_k_site_lists(checkerboard):
    ce, _ = checkerboard
    sc = Supercell(ce.lattice, (5, 5, 5))
    idx = ce.index(sc)
    counts = np.bincount(idx.orbit, minlength=len(ce.orbits))
    for o, inst in enumerate(idx.instances):
        assert counts[o] == inst.shape[0] * inst.shape[1]


def test_spin_config_validation(separation):
    ce, _ = separation
    sc = Supercell(ce.lattice, (2, 2, 2))
    with pytest.raises(ValueError):
        SpinConfig(np.zeros(8), sc)
    with pytest.raises(ValueError):
        SpinConfig(np.ones(7), sc)


def test_eci_interpolation(separation):
    ce, _ = separation
    rows = np.array([[0, 0, -1.0], [0, 0.2, -1.2], [0, 0.4, -1.6]])
    tce = ClusterExpansion(ce.lattice, ce.orbits, rows[0], TEciTable(100, 3, 100, rows))
    assert np.array_equal(eci_at_temperature(tce, 200), rows[1])
    assert np.allclose(eci_at_temperature(tce, 250), (rows[1] + rows[2]) / 2)
    assert np.array_equal(eci_at_temperature(ce, 1234), ce.eci)


def test_eci_clamps_with_warning(separation, caplog):
    ce, _ = separation
    rows = np.array([[0, 0, -1.0], [0, 0, -2.0]])
    tce = ClusterExpansion(ce.lattice, ce.orbits, rows[0], TEciTable(100, 2, 100, rows))
    with caplog.at_level("WARNING"):
        assert np.array_equal(eci_at_temperature(tce, 1000), rows[1])
    assert "clamping" in caplog.text


def test_mismatched_eci_length(separation):
    ce, _ = separation
    with pytest.raises(ValueError):
        ClusterExpansion(ce.lattice, ce.orbits, [0, 0])
